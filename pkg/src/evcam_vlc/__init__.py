"""Vehicular visible-light communication with an event-camera receiver.

Modules:

* :mod:`~evcam_vlc.wh_codec`: Walsh-Hadamard codebook and event-domain decoder
* :mod:`~evcam_vlc.framing`: pilot spreading, packet layout, transmit timelines
* :mod:`~evcam_vlc.channel_sim`: synthetic event stream from an LED bar
* :mod:`~evcam_vlc.receiver`: filter, sync, tracking, cluster separation, decode
* :mod:`~evcam_vlc.evaluation`: BER sweeps and throughput accounting
"""

from __future__ import annotations

from .channel_sim import NOISE_PRESETS, NoiseModel, SceneConfig, Trajectory, generate_events
from .errors import (
    ClusterLostError, ConfigError, EventFileError, InvalidArgument, NoSignalError, ReceiverError,
    SimulationHorizonError, SyncNotFoundError, TrackingLostError, VLCError,
)
from .evaluation import BerReport, ExperimentConfig, report_throughput, run_mobile_sweep, run_static_sweep
from .framing import build_capture, build_packet, build_pilot_codebook, throughput_bps
from .receiver import ReceiverConfig, decode_events
from .wh_codec import build_codebook, decode_codeword, encode_bits

__version__ = "0.1.0"

__all__ = [
    "NOISE_PRESETS", "NoiseModel", "SceneConfig", "Trajectory", "generate_events",
    "ClusterLostError", "ConfigError", "EventFileError", "InvalidArgument", "NoSignalError", "ReceiverError",
    "SimulationHorizonError", "SyncNotFoundError", "TrackingLostError", "VLCError",
    "BerReport", "ExperimentConfig", "report_throughput", "run_mobile_sweep", "run_static_sweep",
    "build_capture", "build_packet", "build_pilot_codebook", "throughput_bps",
    "ReceiverConfig", "decode_events",
    "build_codebook", "decode_codeword", "encode_bits",
]
