"""Receiver pipeline: rate filter, sync, tracking, cluster separation, decode.

Time is handled on the chip-boundary lattice: signal events all sit at
boundaries ``phase + 100 n`` (us), so every event is assigned to the nearest
boundary ``n`` and a grid's observation at ``n`` is the sign of the summed
polarities there. Boundary ``n`` carries the transition *into* chip ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ._config import ConfigMixin
from .channel_sim import SENSOR_H, SENSOR_W
from .errors import ClusterLostError, ConfigError, InvalidArgument, NoSignalError, SyncNotFoundError, TrackingLostError
from .framing import (
    CHIP_US, FRAME_LEN, FRAMES_PER_PACKET, INFO_LEN, PACKET_LEN, PILOT_LEN, SYNC_LEN,
    build_pilot_codebook, despread, sync_template,
)
from .wh_codec import Codebook, build_codebook, decode_stream, symbols_to_bits

CORRECTED_DTYPE = np.dtype([("t", "<i8"), ("x", "<f8"), ("y", "<f8"), ("p", "i1")])


DECISIONS = ("soft", "deadzone", "sign")


@dataclass(frozen=True)
class ReceiverConfig(ConfigMixin):
    n_clusters: int = 16
    window_us: int = 2000
    min_count: int = 4
    grid_px: int = 4
    # per-grid signal: "sign" (tri-valued) or "sum" (raw polarity sums)
    grid_signal: str = "sign"
    theta_rel: float = 0.5
    # how the combined info signal is decoded: "soft" correlates it directly,
    # "deadzone" and "sign" quantize it to -1/0/+1 first
    decision: str = "soft"
    # for "deadzone": edges weaker than this fraction of the pilot edge amplitude are erased
    info_deadzone: float = 0.5
    sync_margin: float = 1.2
    centroid_sigma_px: float = 2.0
    centroid_frac: float = 0.5
    correct_vibration: bool = True

    def __post_init__(self):
        problems = []
        if not 1 <= self.n_clusters <= 32:
            problems.append(("n_clusters", "must be in 1..32"))
        if self.window_us <= 0 or self.min_count < 1:
            problems.append(("window_us", "window must be > 0 and min_count >= 1"))
        if self.grid_px < 1:
            problems.append(("grid_px", "must be >= 1"))
        if not 0 <= self.theta_rel < 1:
            problems.append(("theta_rel", "must be in [0, 1)"))
        if self.grid_signal not in ("sign", "sum"):
            problems.append(("grid_signal", "must be 'sign' or 'sum'"))
        if self.decision not in DECISIONS:
            problems.append(("decision", f"must be one of {', '.join(DECISIONS)}"))
        if not 0 <= self.info_deadzone < 1:
            problems.append(("info_deadzone", "must be in [0, 1)"))
        if problems:
            raise ConfigError(problems)


# ---------------------------------------------------------------- filtering

@dataclass
class FilterResult:
    events: np.ndarray
    box: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    pixels: np.ndarray  # (N, 2) surviving pixel coordinates


def alternation_filter(events: np.ndarray, window_us: int = 2000, min_count: int = 4) -> FilterResult:
    """Keep events of pixels that fire at least ``min_count`` times in their time window.

    Windows are consecutive ``window_us`` slices starting at the first event.
    Blinking LED pixels fire at up to the chip rate, background pixels rarely.
    """
    if events.size == 0:
        raise NoSignalError("empty event stream")
    pix = events["y"].astype(np.int64) * SENSOR_W + events["x"]
    win = (events["t"] - events["t"][0]) // window_us
    key = win * (SENSOR_W * SENSOR_H) + pix
    _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    keep = counts[inv] >= min_count
    if not keep.any():
        raise NoSignalError("no pixel passed the alternation-number filter")
    kept = events[keep]
    upix = np.unique(pix[keep])
    xs, ys = upix % SENSOR_W, upix // SENSOR_W
    box = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    return FilterResult(kept, box, np.stack([xs, ys], axis=1))


# ---------------------------------------------------------------- sync

def estimate_chip_phase(events: np.ndarray) -> float:
    """Chip-clock phase (us in [0, 100)) as the circular mean of timestamps modulo a chip."""
    if events.size == 0:
        raise NoSignalError("no events to estimate chip phase")
    ang = 2 * np.pi * (events["t"] % CHIP_US) / CHIP_US
    mean = math.atan2(np.sin(ang).sum(), np.cos(ang).sum())
    return (mean / (2 * np.pi) * CHIP_US) % CHIP_US


def boundary_index(t, phase_us: float) -> np.ndarray:
    return np.floor((np.asarray(t, dtype=float) - phase_us) / CHIP_US + 0.5).astype(np.int64)


def boundary_time(n, phase_us: float):
    return phase_us + np.asarray(n) * CHIP_US


@dataclass
class SyncResult:
    packet_start_us: float
    peak: float
    margin: float
    boundary: int  # boundary index of the first sync chip
    phase_us: float


def detect_sync(events: np.ndarray, template: np.ndarray | None = None, phase_us: float | None = None,
                search_chips: int = PACKET_LEN, min_margin: float = 1.2) -> SyncResult:
    """Locate the first packet start by correlating summed polarities with the sync edge template.

    The search covers ``search_chips`` boundaries from the start of the stream,
    which holds exactly one sync for back-to-back packets. ``margin`` is the
    peak over the largest correlation more than one chip away from it.
    """
    template = sync_template() if template is None else np.asarray(template)
    if events.size == 0:
        raise SyncNotFoundError("no events")
    if phase_us is None:
        phase_us = estimate_chip_phase(events)
    n = boundary_index(events["t"], phase_us)
    n0 = int(n.min()) - 1
    sig = np.bincount(n - n0, weights=events["p"].astype(float))
    L = template.size
    need = search_chips + L
    if sig.size < need:
        sig = np.concatenate([sig, np.zeros(need - sig.size)])
    windows = np.lib.stride_tricks.sliding_window_view(sig[:need - 1], L)
    corr = windows @ template.astype(float)
    m = int(np.argmax(corr))
    peak = float(corr[m])
    others = np.abs(np.arange(corr.size) - m) > 1
    second = float(corr[others].max()) if others.any() else 0.0
    margin = peak / second if second > 0 else (math.inf if peak > 0 else 0.0)
    if peak <= 0 or margin <= min_margin:
        raise SyncNotFoundError(f"sync correlation margin {margin:.2f} <= {min_margin}", margin)
    b = n0 + m
    return SyncResult(float(boundary_time(b, phase_us)), peak, margin, b, phase_us)


# ---------------------------------------------------------------- tracking

def estimate_centroid(pilot_events: np.ndarray, sigma_px: float = 2.0, frac: float = 0.5) -> tuple[float, float]:
    """Centroid of the bar from one pilot interval's events.

    Count image -> Gaussian smoothing -> row and column profiles. Rows (and
    columns) whose profile reaches ``frac`` of its maximum are averaged with
    equal weight, which keeps per-pixel count noise out of the estimate.
    """
    if pilot_events.size == 0:
        raise TrackingLostError("no events in pilot window")
    x = np.asarray(pilot_events["x"], dtype=np.int64)
    y = np.asarray(pilot_events["y"], dtype=np.int64)
    pad = int(math.ceil(4 * sigma_px)) + 1
    x0, y0 = x.min() - pad, y.min() - pad
    img = np.zeros((y.max() - y0 + pad + 1, x.max() - x0 + pad + 1))
    np.add.at(img, (y - y0, x - x0), 1.0)
    sm = gaussian_filter(img, sigma_px, mode="constant")
    rows, cols = sm.sum(axis=1), sm.sum(axis=0)
    ys = np.flatnonzero(rows >= frac * rows.max())
    xs = np.flatnonzero(cols >= frac * cols.max())
    return float(xs.mean() + x0), float(ys.mean() + y0)


@dataclass
class CentroidTrack:
    """Pilot centroids of frames i-1, i, i+1 (``None`` where a neighbour is missing)."""

    prev: tuple[float, float] | None
    cur: tuple[float, float]
    next: tuple[float, float] | None

    def displacements(self) -> tuple[np.ndarray, np.ndarray]:
        """(delta into frame i, delta out of frame i); a missing side reuses the other."""
        before = None if self.prev is None else np.subtract(self.cur, self.prev)
        after = None if self.next is None else np.subtract(self.next, self.cur)
        if before is None and after is None:
            before = after = np.zeros(2)
        elif before is None:
            before = after
        elif after is None:
            after = before
        return np.asarray(before, float), np.asarray(after, float)


def correct_vibration(events: np.ndarray, track: CentroidTrack, t_start: float, t_end: float) -> np.ndarray:
    """Shift event coordinates of frame i to where the bar sits at mid-frame.

    ``alpha = (t_mid - t) / (t_end - t_start)``; the first half of the frame
    uses the displacement from frame i-1 to i, the second half i to i+1.
    Coordinates are clamped to the sensor.
    """
    before, after = track.displacements()
    t = events["t"].astype(float)
    t_mid = (t_start + t_end) / 2
    alpha = (t_mid - t) / (t_end - t_start)
    d = np.where((t < t_mid)[:, None], before[None, :], after[None, :])
    out = np.empty(events.size, dtype=CORRECTED_DTYPE)
    out["t"], out["p"] = events["t"], events["p"]
    out["x"] = np.clip(events["x"] + alpha * d[:, 0], 0, SENSOR_W - 1)
    out["y"] = np.clip(events["y"] + alpha * d[:, 1], 0, SENSOR_H - 1)
    return out


# ---------------------------------------------------------------- grids

@dataclass
class GridSignals:
    cells: np.ndarray  # (G, 2) grid coordinates (gx, gy)
    obs: np.ndarray  # (G, n_chips) tri-valued per-boundary polarity


def grid_signals(events: np.ndarray, phase_us: float, first_boundary: int, n_chips: int,
                 origin: tuple[int, int], grid_px: int, mode: str = "sign") -> GridSignals:
    """Pool events into ``grid_px`` square cells and sign-quantize per chip boundary."""
    n = boundary_index(events["t"], phase_us) - first_boundary
    inside = (n >= 0) & (n < n_chips)
    ev, n = events[inside], n[inside]
    # pixel (x, y) covers [x - 0.5, x + 0.5); cells start at the origin pixel's edge
    gx = np.floor((ev["x"] - origin[0] + 0.5) / grid_px).astype(np.int64)
    gy = np.floor((ev["y"] - origin[1] + 0.5) / grid_px).astype(np.int64)
    if ev.size == 0:
        return GridSignals(np.zeros((0, 2), np.int64), np.zeros((0, n_chips), np.int8))
    cells, cell = np.unique(np.stack([gx, gy], axis=1), axis=0, return_inverse=True)
    cell = cell.ravel()
    sums = np.bincount(cell * n_chips + n, weights=ev["p"].astype(float), minlength=cells.shape[0] * n_chips)
    sums = sums.reshape(cells.shape[0], n_chips)
    if mode == "sign":
        return GridSignals(cells, np.sign(sums).astype(np.int8))
    return GridSignals(cells, sums.astype(np.int64))


@dataclass
class ClusterWeightMap:
    w: np.ndarray  # (G, K) thresholded weights
    theta: float
    raw: np.ndarray = field(repr=False, default=None)  # (G, K) before thresholding

    @property
    def lost(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(~np.any(self.w > 0, axis=0))]


def grid_correlate(pilot_obs: np.ndarray, codes: np.ndarray, theta: float | None = None,
                   theta_rel: float = 0.5, strict: bool = True) -> ClusterWeightMap:
    """Per-grid existence weights for each cluster from the 32-chip pilot observation.

    Each grid's pilot is despread (odd chips, erasures filled from the paired
    chip) and correlated with every cluster's WH code. Weights at or below
    ``theta`` become 0; by default ``theta = theta_rel * max weight``.
    """
    pilot_obs = np.atleast_2d(np.asarray(pilot_obs))
    r = despread(pilot_obs).astype(np.int64)
    raw = r @ np.asarray(codes, dtype=np.int64).T
    if theta is None:
        theta = theta_rel * float(raw.max()) if raw.size else 0.0
        theta = max(theta, 0.0)
    w = np.where(raw > theta, raw, 0)
    wmap = ClusterWeightMap(w=w, theta=float(theta), raw=raw)
    if strict and wmap.lost:
        raise ClusterLostError(wmap.lost)
    return wmap


def quantize_combined(combined: np.ndarray, total_weight, deadzone: float = 0.5) -> np.ndarray:
    """Tri-level quantization: sign, with ``|I| <= deadzone * total_weight`` erased to 0."""
    combined = np.asarray(combined)
    floor = deadzone * np.asarray(total_weight, dtype=float)
    if floor.ndim:
        floor = floor.reshape(-1, *([1] * (combined.ndim - 1)))
    return (np.sign(combined) * (np.abs(combined) > floor)).astype(np.int8)


def pilot_edge_amplitude(pilot_obs: np.ndarray, weights: ClusterWeightMap, codes: np.ndarray) -> np.ndarray:
    """Combined amplitude of a full edge per cluster, measured on the known pilot.

    The odd pilot boundaries always carry cluster k's WH chip, so projecting
    the combined pilot there onto the code gives the size of a clean edge.
    """
    combined = weights.w.T.astype(float) @ np.atleast_2d(pilot_obs)[:, 1::2].astype(float)
    return np.maximum((combined * np.asarray(codes)).mean(axis=1), 0.0)


def separate_and_decode(info_obs: np.ndarray, weights: ClusterWeightMap, book: Codebook | None = None,
                        prev_chips=None, deadzone: float = 0.5, edge_ref=None,
                        decision: str = "soft") -> tuple[np.ndarray, np.ndarray]:
    """Weighted combining of grid info signals and codeword decoding per cluster.

    ``I_k(t) = sum_g w[g, k] * i_g(t)`` is decoded 16 chips at a time by the
    max-inner-product decoder. ``decision`` picks what the decoder sees:

    * ``"soft"``: ``I_k`` itself,
    * ``"deadzone"``: sign of ``I_k`` with ``|I_k| <= deadzone * edge_ref``
      erased (``edge_ref`` defaults to the total weight, which is the exact
      clean-edge amplitude for tri-valued grid signals),
    * ``"sign"``: plain sign of ``I_k``.

    Returns ``(bits, combined)``: bits (K, 4 * n_codewords) MSB-first and the
    un-quantized combined signal (K, n_chips). ``prev_chips[k]`` is cluster k's
    level just before the info segment (last pilot chip).
    """
    if decision not in DECISIONS:
        raise InvalidArgument(f"unknown decision mode {decision!r}")
    book = book or build_codebook()
    info_obs = np.atleast_2d(np.asarray(info_obs)).astype(np.int64)
    w = weights.w.astype(np.int64)
    combined = w.T @ info_obs
    if decision == "soft":
        q = combined
    elif decision == "sign":
        q = np.sign(combined)
    else:
        if edge_ref is None:
            edge_ref = w.sum(axis=0)
        q = quantize_combined(combined, edge_ref, deadzone)
    bits = []
    for k in range(combined.shape[0]):
        prev = None if prev_chips is None else int(prev_chips[k])
        bits.append(symbols_to_bits(decode_stream(q[k], book, prev, soft=decision == "soft")))
    return np.array(bits, dtype=np.uint8).reshape(combined.shape[0], -1), combined


# ---------------------------------------------------------------- pipeline

@dataclass
class FrameReport:
    packet: int
    frame: int
    start_us: float
    centroid: tuple[float, float] | None
    theta: float
    lost: list[int]
    n_grids: int
    max_weight: list[int]  # per cluster


@dataclass
class DecodeResult:
    sync: SyncResult
    box: tuple[int, int, int, int]
    bits: np.ndarray  # (n_packets, K, 72)
    frames: list[FrameReport]
    weight_maps: list[tuple[int, int, GridSignals, ClusterWeightMap]] = field(default_factory=list, repr=False)

    @property
    def n_packets(self) -> int:
        return self.bits.shape[0]


def frame_start_boundary(sync: SyncResult, packet: int, frame: int) -> int:
    return sync.boundary + packet * PACKET_LEN + SYNC_LEN + frame * FRAME_LEN


def decode_events(events: np.ndarray, cfg: ReceiverConfig | None = None, book: Codebook | None = None,
                  keep_maps: bool = False, sync: SyncResult | None = None) -> DecodeResult:
    """Run the full receiver on an event stream and return per-cluster payload bits."""
    cfg = cfg or ReceiverConfig()
    book = book or build_codebook()
    pilots = build_pilot_codebook()
    codes = np.stack([pilots[k].wh_code for k in range(cfg.n_clusters)])
    last_pilot_chip = np.array([pilots[k].spread[-1] for k in range(cfg.n_clusters)])

    filt = alternation_filter(events, cfg.window_us, cfg.min_count)
    ev = filt.events
    if sync is None:
        sync = detect_sync(ev, min_margin=cfg.sync_margin)
    phase = sync.phase_us
    n_ev = boundary_index(ev["t"], phase)
    last_b = int(n_ev.max())
    # a packet is decodable once its last pilot has been received
    last_pilot_end = SYNC_LEN + (FRAMES_PER_PACKET - 1) * FRAME_LEN + PILOT_LEN
    n_packets = max(0, (last_b + 1 - sync.boundary - last_pilot_end) // PACKET_LEN + 1)
    if n_packets == 0:
        raise SyncNotFoundError("stream ends before a full packet")

    origin = (filt.box[0], filt.box[1])
    bits = np.zeros((n_packets, cfg.n_clusters, FRAMES_PER_PACKET * INFO_LEN // 4), dtype=np.uint8)
    reports, maps = [], []
    for p in range(n_packets):
        starts = [frame_start_boundary(sync, p, f) for f in range(FRAMES_PER_PACKET)]
        frame_ev = [ev[(n_ev >= s) & (n_ev < s + FRAME_LEN)] for s in starts]
        n_frame = [n_ev[(n_ev >= s) & (n_ev < s + FRAME_LEN)] for s in starts]
        cents = []
        for f in range(FRAMES_PER_PACKET):
            # odd pilot boundaries carry an edge for every cluster, so the count
            # image is uniform along the bar and identical from frame to frame
            rel = n_frame[f] - starts[f]
            pil = frame_ev[f][(rel < PILOT_LEN) & (rel % 2 == 1)]
            try:
                cents.append(estimate_centroid(pil, cfg.centroid_sigma_px, cfg.centroid_frac))
            except TrackingLostError:
                cents.append(None)
        for f in range(FRAMES_PER_PACKET):
            fev = frame_ev[f]
            t_start = boundary_time(starts[f], phase) - CHIP_US / 2
            t_end = t_start + FRAME_LEN * CHIP_US
            if cfg.correct_vibration and cents[f] is not None:
                track = CentroidTrack(cents[f - 1] if f > 0 else None, cents[f],
                                      cents[f + 1] if f + 1 < FRAMES_PER_PACKET else None)
                fev = correct_vibration(fev, track, t_start, t_end)
            gs = grid_signals(fev, phase, starts[f], FRAME_LEN, origin, cfg.grid_px, cfg.grid_signal)
            wmap = grid_correlate(gs.obs[:, :PILOT_LEN], codes, theta_rel=cfg.theta_rel, strict=False)
            ref = pilot_edge_amplitude(gs.obs[:, :PILOT_LEN], wmap, codes)
            fb, _ = separate_and_decode(gs.obs[:, PILOT_LEN:], wmap, book, last_pilot_chip, cfg.info_deadzone, ref,
                                        cfg.decision)
            lo = f * fb.shape[1]
            bits[p, :, lo:lo + fb.shape[1]] = fb
            reports.append(FrameReport(
                packet=p, frame=f, start_us=float(t_start), centroid=cents[f], theta=wmap.theta,
                lost=wmap.lost, n_grids=int(gs.cells.shape[0]),
                max_weight=[int(v) for v in (wmap.w.max(axis=0) if wmap.w.size else np.zeros(cfg.n_clusters))],
            ))
            if keep_maps:
                maps.append((p, f, gs, wmap))
    return DecodeResult(sync=sync, box=filt.box, bits=bits, frames=reports, weight_maps=maps)
