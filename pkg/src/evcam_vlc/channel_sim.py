"""Synthetic event-camera channel for a vertical LED bar.

Events are generated directly at OOK edges: LEDs are binary sources, so a
covered pixel only sees a brightness change at a chip boundary where one of
the clusters it sees switches level. Each LED is imaged as a Gaussian spot
truncated to a disc of radius ``2 * blob_sigma_px``; a pixel's change is the
signed sum over the LEDs covering it, scaled by ``led_gain / d**2``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._config import ConfigMixin
from .errors import ConfigError, InvalidArgument, SimulationHorizonError
from .framing import CHIP_US

SENSOR_W = 1280
SENSOR_H = 720

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

# boundaries processed per RNG window
WINDOW_CHIPS = 128


def empty_events() -> np.ndarray:
    return np.zeros(0, dtype=EVENT_DTYPE)


def make_events(t, x, y, p) -> np.ndarray:
    ev = np.empty(len(t), dtype=EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
    return ev


def sort_events(ev: np.ndarray) -> np.ndarray:
    order = np.lexsort((ev["x"], ev["y"], ev["t"]))
    return ev[order]


@dataclass(frozen=True)
class SceneConfig(ConfigMixin):
    n_leds: int = 96
    leds_per_cluster: int = 6
    led_pitch_m: float = 0.0125
    distance_m: float = 40.0
    focal_px: float = 5144.0
    blob_sigma_px: float = 1.0
    center_px: tuple = (640.0, 360.0)
    # peak single-LED brightness step at 1 m, in contrast-threshold units;
    # the default is part of the paper-outdoor calibration
    led_gain: float = 1500.0

    def __post_init__(self):
        problems = []
        if self.leds_per_cluster < 1 or self.n_leds % self.leds_per_cluster:
            problems.append(("leds_per_cluster", "must divide n_leds"))
        if self.distance_m <= 0:
            problems.append(("distance_m", "must be > 0"))
        if self.focal_px <= 0 or self.led_pitch_m <= 0:
            problems.append(("focal_px", "focal length and pitch must be > 0"))
        if self.blob_sigma_px <= 0:
            problems.append(("blob_sigma_px", "must be > 0"))
        if self.led_gain < 0:
            problems.append(("led_gain", "must be >= 0"))
        if problems:
            raise ConfigError(problems)

    @property
    def n_clusters(self) -> int:
        return self.n_leds // self.leds_per_cluster

    @property
    def led_cluster(self) -> np.ndarray:
        return np.arange(self.n_leds) // self.leds_per_cluster

    @property
    def led_offsets_m(self) -> np.ndarray:
        """Vertical LED positions relative to the bar centre; LED 0 is at the top (smallest y)."""
        return (np.arange(self.n_leds) - (self.n_leds - 1) / 2) * self.led_pitch_m

    def led_spacing_px(self, distance_m: float | None = None) -> float:
        return self.focal_px * self.led_pitch_m / (distance_m or self.distance_m)


@dataclass(frozen=True)
class Trajectory(ConfigMixin):
    speed_mps: float = 0.0
    vib_amp_px: float = 0.0
    vib_freq_hz: float = 10.0
    # random-walk component, px / sqrt(s)
    walk_sigma_px: float = 0.0
    seed: int = 0
    horizon_s: float = 30.0

    def __post_init__(self):
        problems = []
        if self.speed_mps < 0:
            problems.append(("speed_mps", "must be >= 0"))
        if self.vib_amp_px < 0 or self.walk_sigma_px < 0:
            problems.append(("vib_amp_px", "vibration magnitudes must be >= 0"))
        if self.vib_freq_hz < 0:
            problems.append(("vib_freq_hz", "must be >= 0"))
        if self.horizon_s <= 0:
            problems.append(("horizon_s", "must be > 0"))
        if problems:
            raise ConfigError(problems)

    def _walk(self):
        cache = self.__dict__.get("_walk_cache")
        if cache is None:
            rng = np.random.default_rng([self.seed, 0x7A1C])
            phase = rng.uniform(0, 2 * np.pi)
            dt = 1e-3
            n = int(math.ceil(self.horizon_s / dt)) + 2
            steps = rng.standard_normal(n - 1) * self.walk_sigma_px * math.sqrt(dt)
            walk = np.concatenate([[0.0], np.cumsum(steps)])
            cache = (phase, dt, walk)
            object.__setattr__(self, "_walk_cache", cache)
        return cache

    def distance(self, t, distance_m: float):
        t = np.asarray(t, dtype=float)
        d = distance_m - self.speed_mps * t
        if np.any(d <= 0):
            raise SimulationHorizonError(f"transmitter reached the camera (distance {np.min(d):.3f} m)")
        if np.any(t > self.horizon_s) or np.any(t < 0):
            raise SimulationHorizonError(f"time outside [0, {self.horizon_s}] s")
        return d

    def vertical_offset(self, t):
        """Vertical image displacement (px) from vibration at time ``t`` (s)."""
        t = np.asarray(t, dtype=float)
        phase, dt, walk = self._walk()
        y = self.vib_amp_px * np.sin(2 * np.pi * self.vib_freq_hz * t + phase)
        if self.walk_sigma_px:
            y = y + np.interp(t / dt, np.arange(walk.size), walk)
        return y


def vibration_amplitude_for_slew(px: float, window_s: float = 0.010, freq_hz: float = 10.0) -> float:
    """Sinusoid amplitude whose largest displacement over ``window_s`` equals ``px``."""
    return px / (2 * math.sin(math.pi * freq_hz * window_s))


@dataclass(frozen=True)
class NoiseModel(ConfigMixin):
    p_drop: float = 0.0
    jitter_sigma_us: float = 0.0
    bg_rate_hz_per_px: float = 0.0
    refractory_us: float = 50.0
    # an edge fires when |dI| + N(0, threshold_sigma) > contrast_threshold
    contrast_threshold: float = 0.0
    threshold_sigma: float = 0.0

    def __post_init__(self):
        problems = []
        for name in ("p_drop", "jitter_sigma_us", "bg_rate_hz_per_px", "refractory_us",
                     "contrast_threshold", "threshold_sigma"):
            if getattr(self, name) < 0:
                problems.append((name, "must be >= 0"))
        if self.p_drop > 1:
            problems.append(("p_drop", "must be <= 1"))
        if problems:
            raise ConfigError(problems)


NOISE_PRESETS = {
    "ideal": NoiseModel(),
    # Together with the default SceneConfig.led_gain, calibrated so the
    # 16-cluster static sweep is error free out to about 50-55 m. A tuning of
    # the simulator, not a measurement.
    "paper-outdoor": NoiseModel(
        p_drop=0.05,
        jitter_sigma_us=12.0,
        bg_rate_hz_per_px=1.0,
        refractory_us=50.0,
        contrast_threshold=1.0,
        threshold_sigma=0.1,
    ),
}


def _led_positions(scene: SceneConfig, traj: Trajectory, t_s):
    """LED image centres at times ``t_s``: returns (distance (T,), x (T,), y (T, n_leds))."""
    t_s = np.atleast_1d(np.asarray(t_s, dtype=float))
    d = traj.distance(t_s, scene.distance_m)
    cx, cy = scene.center_px
    y = cy + traj.vertical_offset(t_s)[:, None] + scene.focal_px * scene.led_offsets_m[None, :] / d[:, None]
    x = np.full(t_s.shape, cx)
    return d, x, y


# opposite edges of overlapping clusters cancel; sums this small (relative to
# one LED's peak change) are rounding residue and count as no change
CANCEL_TOL = 1e-9


def _disc_offsets(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    m = int(math.ceil(2 * sigma)) + 1
    r = np.arange(-m, m + 1)
    dx, dy = np.meshgrid(r, r)
    return dx.ravel(), dy.ravel()


def _led_pixels(scene: SceneConfig, x, y):
    """Candidate pixels and Gaussian weights inside each LED's disc.

    ``x`` (T,), ``y`` (T, L). Returns px, py, weight, valid with shape (T, L, O).
    """
    sigma = scene.blob_sigma_px
    ox, oy = _disc_offsets(sigma)
    px = np.rint(x)[:, None, None] + ox[None, None, :]
    py = np.rint(y)[:, :, None] + oy[None, None, :]
    r2 = (px - x[:, None, None]) ** 2 + (py - y[:, :, None]) ** 2
    valid = (r2 <= (2 * sigma) ** 2) & (px >= 0) & (px < SENSOR_W) & (py >= 0) & (py < SENSOR_H)
    weight = np.exp(-r2 / (2 * sigma**2))
    px = np.broadcast_to(px, r2.shape).astype(np.int64)
    return px, py.astype(np.int64), weight, valid


def project_bar(scene: SceneConfig, traj: Trajectory, t: float) -> list[np.ndarray]:
    """Per-cluster pixel footprints at time ``t`` (s): list of (N, 2) arrays of (x, y)."""
    _, x, y = _led_positions(scene, traj, [t])
    px, py, _, valid = _led_pixels(scene, x, y)
    out = []
    clusters = scene.led_cluster
    for k in range(scene.n_clusters):
        sel = valid[0] & (clusters == k)[:, None]
        pix = np.unique(np.stack([px[0][sel], py[0][sel]], axis=1), axis=0)
        out.append(pix.reshape(-1, 2))
    return out


def bar_centroid(scene: SceneConfig, traj: Trajectory, t) -> tuple:
    """Analytic image centroid of the bar (symmetric LED layout)."""
    _, x, y = _led_positions(scene, traj, t)
    return x, y.mean(axis=1)


def _moving_response(scene, d, x, y, delta):
    """Keys (boundary * n_pixels + pixel, ascending) and signed intensity change, LEDs placed per boundary."""
    px, py, w, valid = _led_pixels(scene, x, y)
    led_delta = delta[scene.led_cluster].T  # (T, L)
    amp = scene.led_gain / d**2
    val = w * (led_delta[:, :, None] * amp[:, None, None])
    valid &= (led_delta != 0)[:, :, None]
    bidx = np.broadcast_to(np.arange(delta.shape[1])[:, None, None], valid.shape)[valid]
    pix = py[valid] * SENSOR_W + px[valid]
    key = bidx * (SENSOR_W * SENSOR_H) + pix
    ukey, inv = np.unique(key, return_inverse=True)
    s = np.bincount(inv, weights=val[valid], minlength=ukey.size)
    keep = np.abs(s) > CANCEL_TOL * amp.max()
    return ukey[keep], s[keep]


def _static_response(scene, d, x, y, delta):
    """Same as :func:`_moving_response` for a bar that does not move within the window."""
    px, py, w, valid = _led_pixels(scene, x, y)
    px, py, w, valid = px[0], py[0], w[0], valid[0]  # (L, O)
    led = np.broadcast_to(np.arange(px.shape[0])[:, None], px.shape)[valid]
    upix, inv = np.unique(py[valid] * SENSOR_W + px[valid], return_inverse=True)
    # (P, K) summed disc weight of each cluster at each pixel
    resp = np.zeros((upix.size, scene.n_clusters))
    np.add.at(resp, (inv.ravel(), scene.led_cluster[led]), w[valid])
    amp = scene.led_gain / d**2
    s = (delta.T.astype(float) @ resp.T) * amp  # (T, P)
    b, p = np.nonzero(np.abs(s) > CANCEL_TOL * amp)
    return b * (SENSOR_W * SENSOR_H) + upix[p], s[b, p]


def _window_events(levels, bounds, scene, traj, noise, start_s, t0_us, rng):
    """Signal events for chip boundaries ``bounds`` (indices into ``levels``)."""
    delta = levels[:, bounds].astype(np.int8) - levels[:, bounds - 1].astype(np.int8)
    active = np.any(delta != 0, axis=0)
    bounds, delta = bounds[active], delta[:, active]
    if bounds.size == 0:
        return empty_events()
    tb_us = bounds * CHIP_US
    d, x, y = _led_positions(scene, traj, start_s + tb_us / 1e6)
    if np.all(d == d[0]) and np.all(x == x[0]) and np.all(y == y[0]):
        ukey, s = _static_response(scene, d[0], x[:1], y[:1], delta)
    else:
        ukey, s = _moving_response(scene, d, x, y, delta)
    mag = np.abs(s)
    if noise.threshold_sigma > 0:
        mag = mag + noise.threshold_sigma * rng.standard_normal(mag.size)
    fire = mag > noise.contrast_threshold
    if noise.p_drop > 0:
        fire &= rng.random(mag.size) >= noise.p_drop
    ukey, s = ukey[fire], s[fire]
    b = ukey // (SENSOR_W * SENSOR_H)
    pix = ukey % (SENSOR_W * SENSOR_H)
    t = t0_us + tb_us[b].astype(float)
    if noise.jitter_sigma_us > 0:
        t = t + noise.jitter_sigma_us * rng.standard_normal(t.size)
    t = np.maximum(np.rint(t), 0).astype(np.int64)
    return make_events(t, pix % SENSOR_W, pix // SENSOR_W, np.sign(s).astype(np.int8))


def _background(noise, t_lo_us, t_hi_us, rng):
    n = rng.poisson(noise.bg_rate_hz_per_px * SENSOR_W * SENSOR_H * (t_hi_us - t_lo_us) / 1e6)
    if n == 0:
        return empty_events()
    t = rng.integers(t_lo_us, t_hi_us, n)
    pix = rng.integers(0, SENSOR_W * SENSOR_H, n)
    p = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)
    return make_events(t, pix % SENSOR_W, pix // SENSOR_W, p)


def apply_refractory(ev: np.ndarray, refractory_us: float) -> np.ndarray:
    """Drop events within ``refractory_us`` of the previous *kept* event at the same pixel."""
    if refractory_us <= 0 or ev.size < 2:
        return ev
    pix = ev["y"].astype(np.int64) * SENSOR_W + ev["x"]
    order = np.lexsort((ev["t"], pix))
    t = ev["t"][order]
    p = pix[order]
    same = np.zeros(order.size, dtype=bool)
    same[1:] = p[1:] == p[:-1]
    gap = np.full(order.size, np.iinfo(np.int64).max)
    gap[1:] = t[1:] - t[:-1]
    conflict = same & (gap < refractory_us)
    if not conflict.any():
        return ev
    keep = np.ones(order.size, dtype=bool)
    starts = np.flatnonzero(~same)
    ends = np.append(starts[1:], order.size)
    group = np.cumsum(~same) - 1
    # sequential rule only for pixels that have a conflict
    for g in np.unique(group[conflict]):
        lo, hi = starts[g], ends[g]
        last = t[lo]
        for i in range(lo + 1, hi):
            if t[i] - last < refractory_us:
                keep[i] = False
            else:
                last = t[i]
    return ev[np.sort(order[keep])]


def generate_events(levels, scene: SceneConfig, traj: Trajectory, noise: NoiseModel, seed: int = 0,
                    start_s: float = 0.0, t0_us: int = 0, workers: int = 1, return_labels: bool = False):
    """Event stream for per-cluster OOK ``levels`` (n_clusters, n_chips).

    Chip j occupies ``[t0_us + 100 j, t0_us + 100 (j + 1))``; the trajectory is
    evaluated at ``start_s + (t - t0_us) / 1e6``. Boundaries are processed in
    fixed windows with RNG streams derived from ``seed``, so ``workers`` does
    not change the output. With ``return_labels`` a boolean signal mask is
    returned alongside the sorted events.
    """
    levels = np.asarray(levels)
    if levels.ndim != 2 or levels.shape[0] != scene.n_clusters:
        raise InvalidArgument(f"levels must be (n_clusters={scene.n_clusters}, n_chips), got {levels.shape}")
    n_chips = levels.shape[1]
    bounds = np.arange(1, n_chips)
    windows = [bounds[i:i + WINDOW_CHIPS] for i in range(0, bounds.size, WINDOW_CHIPS)] or [bounds]
    seeds = np.random.SeedSequence(seed).spawn(len(windows) + 1)

    def run(i):
        rng = np.random.default_rng(seeds[i])
        return _window_events(levels, windows[i], scene, traj, noise, start_s, t0_us, rng)

    if workers > 1 and len(windows) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(windows))))
    else:
        parts = [run(i) for i in range(len(windows))]
    sig = np.concatenate(parts) if parts else empty_events()
    bg = empty_events()
    if noise.bg_rate_hz_per_px > 0:
        bg = _background(noise, t0_us, t0_us + n_chips * CHIP_US, np.random.default_rng(seeds[-1]))
    ev = np.concatenate([sig, bg])
    labels = np.concatenate([np.ones(sig.size, bool), np.zeros(bg.size, bool)])
    ev, labels = _refractory_sorted(ev, labels, noise.refractory_us)
    if return_labels:
        return ev, labels
    return ev


def _refractory_sorted(ev, labels, refractory_us):
    tagged = np.empty(ev.size, dtype=EVENT_DTYPE.descr + [("sig", "?")])
    for name in EVENT_DTYPE.names:
        tagged[name] = ev[name]
    tagged["sig"] = labels
    tagged = apply_refractory(tagged, refractory_us)
    order = np.lexsort((tagged["x"], tagged["y"], tagged["t"]))
    tagged = tagged[order]
    out = np.empty(tagged.size, dtype=EVENT_DTYPE)
    for name in EVENT_DTYPE.names:
        out[name] = tagged[name]
    return out, tagged["sig"].copy()
