"""Transmit-side packet layout and the pilot spreading / reconstruction pair.

Layout per LED cluster (all clusters time aligned)::

    | spread Barker-13 (26) | pilot (32) | info (96) | pilot | info | pilot | info |
                             \\________ frame (128) _/

Pilots are Walsh-Hadamard rows spread chip-by-chip into ``(-c, +c)``
pairs, so every pilot chip produces at least one luminance edge. The info
part carries six codewords (24 bits) per frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .wh_codec import Codebook, build_codebook, build_hadamard, encode_bits

CHIP_RATE_HZ = 10_000
CHIP_US = 1_000_000 // CHIP_RATE_HZ
BARKER13 = np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1], dtype=np.int8)
PILOT_LEN = 32
INFO_LEN = 96
FRAME_LEN = PILOT_LEN + INFO_LEN
FRAMES_PER_PACKET = 3
SYNC_LEN = 2 * BARKER13.size
PACKET_LEN = SYNC_LEN + FRAMES_PER_PACKET * FRAME_LEN
BITS_PER_FRAME = INFO_LEN // 4
BITS_PER_PACKET = FRAMES_PER_PACKET * BITS_PER_FRAME
MAX_CLUSTERS = 32


def spread_bipolar(code) -> np.ndarray:
    """``c -> (-c, +c)`` for every chip."""
    code = np.asarray(code, dtype=np.int8).ravel()
    if code.size == 0:
        raise InvalidArgument("cannot spread an empty code")
    out = np.empty(2 * code.size, dtype=np.int8)
    out[0::2] = -code
    out[1::2] = code
    return out


def reconstruct_even(b) -> np.ndarray:
    """Keep the ``+1``-multiplied chip of each pair (0-based odd positions)."""
    b = np.asarray(b)
    if b.ndim < 1 or b.shape[-1] % 2:
        raise InvalidArgument("spread sequence must have even length")
    return b[..., 1::2].copy()


def complement_missing(b, b_even) -> np.ndarray:
    """Fill erased entries of ``b_even`` from the sign-inverted ``-1``-multiplied chip.

    An entry stays 0 only when both chips of its pair were lost. Works on the
    last axis, so a stack of grid sequences can be processed at once.
    """
    b = np.asarray(b)
    b_even = np.asarray(b_even)
    if b.shape[-1] != 2 * b_even.shape[-1]:
        raise InvalidArgument("len(b) must be 2 * len(b_even)")
    return np.where(b_even != 0, b_even, -b[..., 0::2]).astype(b_even.dtype)


def despread(b) -> np.ndarray:
    """reconstruct_even followed by complement_missing."""
    return complement_missing(b, reconstruct_even(b))


@dataclass(frozen=True)
class PilotSequence:
    cluster_id: int
    wh_code: np.ndarray
    spread: np.ndarray


@lru_cache(maxsize=1)
def build_pilot_codebook() -> tuple[PilotSequence, ...]:
    """16 Sylvester-16 rows followed by their 16 negations, each spread to 32 chips."""
    h = build_hadamard(16)
    codes = np.concatenate([h, -h]).astype(np.int8)
    out = []
    for k, c in enumerate(codes):
        c.setflags(write=False)
        s = spread_bipolar(c)
        s.setflags(write=False)
        out.append(PilotSequence(cluster_id=k, wh_code=c, spread=s))
    return tuple(out)


def pilot_codes(n_clusters: int) -> np.ndarray:
    """(n_clusters, 16) WH codes assigned to clusters 0..n_clusters-1."""
    pilots = build_pilot_codebook()
    return np.stack([pilots[k].wh_code for k in range(n_clusters)])


def sync_chips() -> np.ndarray:
    return spread_bipolar(BARKER13)


def sync_template() -> np.ndarray:
    """Edge polarities of the sync segment; the edge into chip 0 depends on unknown history."""
    s = sync_chips()
    t = np.zeros(s.size, dtype=np.int8)
    t[1:] = np.sign(s[1:] - s[:-1])
    return t


@dataclass(frozen=True)
class PacketHeader:
    chip_rate_hz: int
    n_clusters: int
    frames_per_packet: int
    payload_bit_len: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PacketHeader":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class ChipTimeline:
    cluster_id: int
    chips: np.ndarray  # OOK levels 0/1
    chip_rate: int = CHIP_RATE_HZ


@dataclass
class Packet:
    header: PacketHeader
    timelines: list[ChipTimeline] = field(default_factory=list)
    # per-cluster payload slices actually carried (padded), shape (n_clusters, 72)
    cluster_bits: np.ndarray | None = None

    @property
    def levels(self) -> np.ndarray:
        return np.stack([tl.chips for tl in self.timelines])


def to_ook(bipolar) -> np.ndarray:
    return ((np.asarray(bipolar, dtype=np.int8) + 1) // 2).astype(np.uint8)


def packet_capacity(n_clusters: int) -> int:
    return n_clusters * BITS_PER_PACKET


def throughput_bps(n_clusters: int) -> float:
    return packet_capacity(n_clusters) * CHIP_RATE_HZ / PACKET_LEN


def _check_clusters(n_clusters: int):
    if not 1 <= n_clusters <= MAX_CLUSTERS:
        raise InvalidArgument(f"n_clusters must be in 1..{MAX_CLUSTERS}, got {n_clusters}")


def build_packet(payload, n_clusters: int, book: Codebook | None = None, pilots=None) -> Packet:
    """Spread one payload over ``n_clusters`` time-aligned chip timelines.

    Cluster ``c`` carries payload bits ``[72c, 72(c+1))``; the payload is
    zero padded to the packet capacity and its true length kept in the header.
    """
    _check_clusters(n_clusters)
    book = book or build_codebook()
    pilots = pilots or build_pilot_codebook()
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    cap = packet_capacity(n_clusters)
    if payload.size > cap:
        raise InvalidArgument(f"payload of {payload.size} bits exceeds packet capacity {cap}")
    padded = np.zeros(cap, dtype=np.uint8)
    padded[: payload.size] = payload
    per_cluster = padded.reshape(n_clusters, BITS_PER_PACKET)

    sync = sync_chips()
    timelines = []
    for c in range(n_clusters):
        info = encode_bits(per_cluster[c], book).reshape(FRAMES_PER_PACKET, INFO_LEN)
        parts = [sync]
        for f in range(FRAMES_PER_PACKET):
            parts += [pilots[c].spread, info[f]]
        chips = to_ook(np.concatenate(parts))
        chips.setflags(write=False)
        timelines.append(ChipTimeline(cluster_id=c, chips=chips))
    header = PacketHeader(CHIP_RATE_HZ, n_clusters, FRAMES_PER_PACKET, int(payload.size))
    return Packet(header=header, timelines=timelines, cluster_bits=per_cluster)


@dataclass
class Capture:
    """Chip levels for a finite transmit window around one or more packets.

    ``levels[k, j]`` is cluster k's OOK level during chip j; chip 0 starts at
    t = 0 of the window. ``packet_starts`` are chip indices of each packet's
    first sync chip.
    """

    levels: np.ndarray
    packets: list[Packet]
    packet_starts: list[int]

    @property
    def n_clusters(self) -> int:
        return self.levels.shape[0]

    @property
    def duration_us(self) -> int:
        return self.levels.shape[1] * CHIP_US


def build_capture(payloads, n_clusters: int, rng: np.random.Generator, lead_chips: int | None = None,
                  tail_chips: int = 8, book: Codebook | None = None) -> Capture:
    """Back-to-back packets, preceded by the tail of a random-payload packet.

    The lead-in models joining a continuous transmission mid-stream; its
    length is drawn uniformly from ``[0, PACKET_LEN)`` unless given.
    """
    book = book or build_codebook()
    if lead_chips is None:
        lead_chips = int(rng.integers(0, PACKET_LEN))
    filler = lambda: build_packet(rng.integers(0, 2, packet_capacity(n_clusters)), n_clusters, book).levels
    parts, starts, packets = [], [], []
    if lead_chips:
        parts.append(filler()[:, PACKET_LEN - lead_chips:])
    pos = lead_chips
    for bits in payloads:
        pkt = build_packet(bits, n_clusters, book)
        packets.append(pkt)
        parts.append(pkt.levels)
        starts.append(pos)
        pos += PACKET_LEN
    if tail_chips:
        parts.append(filler()[:, :tail_chips])
    return Capture(levels=np.concatenate(parts, axis=1), packets=packets, packet_starts=starts)


def timeline_rows(levels):
    """Rows ``(cluster_id, chip_index, level)`` for the CSV timeline dump."""
    levels = np.asarray(levels)
    for k in range(levels.shape[0]):
        for j, v in enumerate(levels[k]):
            yield k, j, int(v)
