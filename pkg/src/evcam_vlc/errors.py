"""Exception types shared across the transmitter, channel and receiver."""

from __future__ import annotations


class VLCError(Exception):
    """Base class for all package errors."""


class InvalidArgument(VLCError, ValueError):
    pass


class SimulationHorizonError(VLCError):
    """Trajectory evaluated at a time where the transmitter is at or behind the camera."""


class EventFileError(VLCError):
    """Malformed event file. ``offset`` is the byte offset of the first bad byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ReceiverError(VLCError):
    pass


class NoSignalError(ReceiverError):
    pass


class SyncNotFoundError(ReceiverError):
    def __init__(self, message: str, margin: float | None = None):
        super().__init__(message)
        self.margin = margin


class TrackingLostError(ReceiverError):
    pass


class ClusterLostError(ReceiverError):
    def __init__(self, cluster_ids):
        self.cluster_ids = sorted(int(c) for c in cluster_ids)
        super().__init__(f"no grid above threshold for clusters {self.cluster_ids}")


class ConfigError(VLCError):
    """Configuration validation failure; ``problems`` lists (key_path, message)."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        lines = "; ".join(f"{k}: {m}" for k, m in self.problems)
        super().__init__(f"invalid configuration: {lines}")
