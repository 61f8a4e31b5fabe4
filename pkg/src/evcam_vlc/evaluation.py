"""BER sweeps over distance and speed, throughput accounting, report output.

A sweep is a list of independent jobs (one simulated capture each) whose
seeds are derived from the master seed and the job's coordinates, so a
report depends only on the configuration and seed, never on the number of
workers or the order they finish in.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .channel_sim import NOISE_PRESETS, NoiseModel, SceneConfig, Trajectory, generate_events, vibration_amplitude_for_slew
from .errors import ConfigError, ReceiverError
from .framing import BITS_PER_PACKET, PACKET_LEN, CHIP_US, build_capture, packet_capacity, throughput_bps
from .receiver import ReceiverConfig, decode_events

CLUSTER_MODES = {12: 8, 16: 6, 32: 3}  # clusters -> LEDs per cluster on the 96-LED bar
PLOT_FLOOR = 1e-5
# published rates for the three cluster modes, kept only for the discrepancy note
PUBLISHED_RATES_KBPS = {12: 57.0, 16: 28.0, 32: 21.0}


@dataclass(frozen=True)
class ExperimentConfig:
    cluster_mode: int = 16
    distance_min_m: float = 10.0
    distance_max_m: float = 100.0
    distance_step_m: float = 10.0
    speeds_mps: tuple = (0.0,)
    # each entry is a preset name or a NoiseModel field dict
    noise: tuple = ("paper-outdoor",)
    trials: int = 4
    seed: int = 0
    out_dir: str = "out"
    # vibration for mobile sweeps, as peak displacement per 10 ms at vib_freq_hz;
    # 2 px is a calibrated "typical road" level, 8 px the reported worst case
    vib_slew_px: float = 2.0
    vib_freq_hz: float = 10.0
    walk_sigma_px: float = 0.0
    workers: int = 1
    scene: dict = field(default_factory=dict)
    receiver: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        if self.cluster_mode not in CLUSTER_MODES:
            problems.append(("cluster_mode", f"must be one of {sorted(CLUSTER_MODES)}"))
        if self.distance_min_m <= 0 or self.distance_max_m <= 0:
            problems.append(("distance_min_m", "distances must be > 0"))
        if self.distance_max_m < self.distance_min_m:
            problems.append(("distance_max_m", "must be >= distance_min_m"))
        if self.distance_step_m <= 0:
            problems.append(("distance_step_m", "must be > 0"))
        if self.trials < 1:
            problems.append(("trials", "must be >= 1"))
        if self.workers < 1:
            problems.append(("workers", "must be >= 1"))
        if not self.speeds_mps:
            problems.append(("speeds_mps", "needs at least one speed"))
        for i, v in enumerate(self.speeds_mps):
            if v < 0:
                problems.append((f"speeds_mps[{i}]", "must be >= 0"))
        if not self.noise:
            problems.append(("noise", "needs at least one noise setting"))
        for i, spec in enumerate(self.noise):
            try:
                resolve_noise(spec)
            except ConfigError as exc:
                problems += [(f"noise[{i}].{k}" if k else f"noise[{i}]", m) for k, m in exc.problems]
        for name, cls in (("scene", SceneConfig), ("receiver", ReceiverConfig)):
            try:
                cls.from_dict(getattr(self, name), path=f"{name}.")
            except ConfigError as exc:
                problems += exc.problems
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        problems, kwargs = [], {}
        names = {f.name for f in fields(cls)}
        for key, val in data.items():
            if key not in names:
                problems.append((key, "unknown key"))
                continue
            default = getattr(cls(), key)
            if key in ("speeds_mps", "noise"):
                if isinstance(val, (str, int, float, dict)):
                    val = [val]
                if not isinstance(val, (list, tuple)):
                    problems.append((key, "expected a list"))
                    continue
                if key == "speeds_mps":
                    bad = [i for i, v in enumerate(val) if isinstance(v, bool) or not isinstance(v, (int, float))]
                    if bad:
                        problems += [(f"{key}[{i}]", "expected a number") for i in bad]
                        continue
                    val = tuple(float(v) for v in val)
                else:
                    val = tuple(val)
            elif isinstance(default, dict):
                if not isinstance(val, dict):
                    problems.append((key, "expected an object"))
                    continue
            elif isinstance(default, str):
                if not isinstance(val, str):
                    problems.append((key, "expected a string"))
                    continue
            elif isinstance(default, int) and not isinstance(default, bool):
                if isinstance(val, bool) or not isinstance(val, (int, float)) or not float(val).is_integer():
                    problems.append((key, "expected an integer"))
                    continue
                val = int(val)
            elif isinstance(default, float):
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    problems.append((key, "expected a number"))
                    continue
                val = float(val)
            kwargs[key] = val
        try:
            cfg = cls(**kwargs)
        except ConfigError as exc:
            problems += exc.problems
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"invalid JSON: {exc}")]) from None
        if not isinstance(data, dict):
            raise ConfigError([("", "top level must be an object")])
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speeds_mps"] = list(self.speeds_mps)
        d["noise"] = list(self.noise)
        return d

    def scene_config(self, distance_m: float) -> SceneConfig:
        base = dict(self.scene)
        base.update(distance_m=distance_m, leds_per_cluster=CLUSTER_MODES[self.cluster_mode])
        return SceneConfig.from_dict(base, path="scene.")

    def receiver_config(self, **overrides) -> ReceiverConfig:
        base = dict(self.receiver)
        base.update(n_clusters=self.cluster_mode, **overrides)
        return ReceiverConfig.from_dict(base, path="receiver.")

    def distances(self) -> np.ndarray:
        n = int(math.floor((self.distance_max_m - self.distance_min_m) / self.distance_step_m + 1e-9))
        return self.distance_min_m + self.distance_step_m * np.arange(n + 1)


def resolve_noise(spec) -> NoiseModel:
    if isinstance(spec, str):
        if spec not in NOISE_PRESETS:
            raise ConfigError([("", f"unknown noise preset {spec!r}; known: {', '.join(sorted(NOISE_PRESETS))}")])
        return NOISE_PRESETS[spec]
    if isinstance(spec, dict):
        return NoiseModel.from_dict(spec)
    raise ConfigError([("", "expected a preset name or an object")])


def noise_label(spec) -> str:
    return spec if isinstance(spec, str) else json.dumps(spec, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- reports

@dataclass
class BerPoint:
    noise: str
    speed_mps: float
    bin_lo_m: float
    bin_hi_m: float
    correction: bool
    trials: int = 0
    bit_errors: int = 0
    bits: int = 0
    failed: int = 0  # captures where no signal or no sync was found
    lost_clusters: int = 0  # cluster-frames without any grid above threshold

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def error_free(self) -> bool:
        return self.bits > 0 and self.bit_errors == 0

    @property
    def unrecoverable(self) -> bool:
        return self.trials > 0 and (self.failed == self.trials or (self.lost_clusters > 0 and self.ber >= 0.25))

    def row(self) -> dict:
        return {
            "noise": self.noise,
            "speed_mps": f"{self.speed_mps:g}",
            "bin_lo_m": f"{self.bin_lo_m:g}",
            "bin_hi_m": f"{self.bin_hi_m:g}",
            "correction": int(self.correction),
            "trials": self.trials,
            "bit_errors": self.bit_errors,
            "bits": self.bits,
            "ber": f"{self.ber:.6e}",
            "plot_ber": f"{(PLOT_FLOOR if self.error_free else self.ber):.6e}",
            "error_free": int(self.error_free),
            "failed": self.failed,
            "lost_clusters": self.lost_clusters,
            "unrecoverable": int(self.unrecoverable),
        }


CSV_FIELDS = ["noise", "speed_mps", "bin_lo_m", "bin_hi_m", "correction", "trials", "bit_errors", "bits",
              "ber", "plot_ber", "error_free", "failed", "lost_clusters", "unrecoverable"]


@dataclass
class BerReport:
    kind: str  # "static" or "mobile"
    cluster_mode: int
    throughput_bps: float
    points: list[BerPoint]
    plot_floor: float = PLOT_FLOOR

    @property
    def total_errors(self) -> int:
        return sum(p.bit_errors for p in self.points)

    @property
    def total_bits(self) -> int:
        return sum(p.bits for p in self.points)

    def find(self, **match) -> list[BerPoint]:
        return [p for p in self.points if all(getattr(p, k) == v for k, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for p in self.points:
            w.writerow(p.row())
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "cluster_mode": self.cluster_mode,
            "throughput_bps": round(self.throughput_bps, 3),
            "plot_floor": self.plot_floor,
            "total_bit_errors": self.total_errors,
            "total_bits": self.total_bits,
            "points": [p.row() for p in self.points],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, fmt: str = "csv") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.kind}_sweep.{fmt}"
        path.write_text(self.to_csv() if fmt == "csv" else self.to_json())
        return path


# ---------------------------------------------------------------- jobs

@dataclass(frozen=True)
class _Job:
    key: tuple  # (noise index, speed index, bin index, trial)
    seed: int
    noise: NoiseModel
    scene: SceneConfig
    traj: Trajectory
    start_s: float
    receivers: tuple  # one ReceiverConfig per correction setting


def _job_seed(master: int, key: tuple) -> int:
    return int(np.random.SeedSequence([master, *key]).generate_state(1)[0])


def _run_job(job: _Job) -> list[tuple[int, int, bool, int]]:
    """Simulate one capture; returns (bit errors, bits, failed, lost) per receiver."""
    rng = np.random.default_rng(job.seed)
    k = job.scene.n_clusters
    payload = rng.integers(0, 2, packet_capacity(k))
    cap = build_capture([payload], k, rng)
    ev = generate_events(cap.levels, job.scene, job.traj, job.noise, seed=job.seed, start_s=job.start_s)
    ref = cap.packets[0].cluster_bits
    out = []
    for rcfg in job.receivers:
        try:
            res = decode_events(ev, rcfg)
        except ReceiverError:
            out.append((ref.size, ref.size, True, 0))
            continue
        got = res.bits[0] if res.bits.shape[0] else np.zeros_like(ref)
        lost = sum(len(f.lost) for f in res.frames if f.packet == 0)
        out.append((int(np.count_nonzero(got != ref)), ref.size, False, lost))
    return out


def _execute(jobs: list[_Job], workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_run_job(j) for j in jobs]


def _collect(points: dict, jobs: list[_Job], results: list, corrections: tuple) -> None:
    for job, res in zip(jobs, results):
        for corr, (err, nbits, failed, lost) in zip(corrections, res):
            p = points[job.key[:3] + (corr,)]
            p.trials += 1
            p.bit_errors += err
            p.bits += nbits
            p.failed += int(failed)
            p.lost_clusters += lost


def run_static_sweep(cfg: ExperimentConfig) -> BerReport:
    """BER against distance with transmitter and camera fixed."""
    if any(v != 0 for v in cfg.speeds_mps):
        raise ConfigError([("speeds_mps", "a static sweep requires speeds_mps = [0]; use the mobile sweep")])
    rcv = (cfg.receiver_config(),)
    points, jobs = {}, []
    for ni, spec in enumerate(cfg.noise):
        noise = resolve_noise(spec)
        for di, d in enumerate(cfg.distances()):
            key3 = (ni, 0, di)
            points[key3 + (rcv[0].correct_vibration,)] = BerPoint(noise_label(spec), 0.0, float(d), float(d),
                                                                   rcv[0].correct_vibration)
            scene = cfg.scene_config(float(d))
            for tr in range(cfg.trials):
                key = key3 + (tr,)
                jobs.append(_Job(key, _job_seed(cfg.seed, key), noise, scene, Trajectory(), 0.0, rcv))
    _collect(points, jobs, _execute(jobs, cfg.workers), (rcv[0].correct_vibration,))
    return BerReport("static", cfg.cluster_mode, throughput_bps(cfg.cluster_mode), list(points.values()))


def mobile_bins(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    """Travel bins ``(lo, hi)`` of ``distance_step_m`` between the min and max distance, far to near."""
    edges = cfg.distances()
    return [(float(edges[i - 1]), float(edges[i])) for i in range(len(edges) - 1, 0, -1)]


def run_mobile_sweep(cfg: ExperimentConfig, ablate_correction: bool = False) -> BerReport:
    """BER per travel bin while approaching from ``distance_max_m`` to ``distance_min_m``.

    Each trial places one capture at a uniformly drawn distance inside the
    bin; the trajectory (speed, vibration phase, random walk) is seeded per
    trial. With ``ablate_correction`` every capture is decoded with and
    without vibration correction.
    """
    if not cfg.speeds_mps or any(v <= 0 for v in cfg.speeds_mps):
        raise ConfigError([("speeds_mps", "mobile sweep needs nonzero speeds; use static-sweep for speed 0")])
    base = cfg.receiver_config()
    corrections = (True, False) if ablate_correction else (base.correct_vibration,)
    rcv = tuple(cfg.receiver_config(correct_vibration=c) for c in corrections)
    amp = vibration_amplitude_for_slew(cfg.vib_slew_px, 0.010, cfg.vib_freq_hz) if cfg.vib_slew_px else 0.0
    capture_s = 2 * PACKET_LEN * CHIP_US / 1e6
    points, jobs = {}, []
    for ni, spec in enumerate(cfg.noise):
        noise = resolve_noise(spec)
        for si, v in enumerate(cfg.speeds_mps):
            horizon = cfg.distance_max_m / v + 2 * capture_s
            for bi, (lo, hi) in enumerate(mobile_bins(cfg)):
                for c in corrections:
                    points[(ni, si, bi, c)] = BerPoint(noise_label(spec), v, lo, hi, c)
                for tr in range(cfg.trials):
                    key = (ni, si, bi, tr)
                    seed = _job_seed(cfg.seed, key)
                    rng = np.random.default_rng([seed, 1])
                    # distance at the start of the capture; the capture ends inside the bin
                    d = rng.uniform(lo + v * capture_s, hi) if hi - lo > v * capture_s else hi
                    traj = Trajectory(speed_mps=v, vib_amp_px=amp, vib_freq_hz=cfg.vib_freq_hz,
                                      walk_sigma_px=cfg.walk_sigma_px, seed=seed, horizon_s=horizon)
                    jobs.append(_Job(key, seed, noise, cfg.scene_config(cfg.distance_max_m), traj,
                                     (cfg.distance_max_m - d) / v, rcv))
    _collect(points, jobs, _execute(jobs, cfg.workers), corrections)
    return BerReport("mobile", cfg.cluster_mode, throughput_bps(cfg.cluster_mode), list(points.values()))


@dataclass(frozen=True)
class ThroughputReport:
    cluster_mode: int
    bits_per_packet: int
    packet_duration_s: float
    throughput_bps: float
    published_kbps: float | None

    @property
    def note(self) -> str:
        if self.published_kbps is None:
            return ""
        kbps = self.throughput_bps / 1e3
        diff = kbps - self.published_kbps
        if abs(diff) <= 0.5:
            return f"matches the published {self.published_kbps:g} kbps"
        note = f"differs from the published {self.published_kbps:g} kbps by {diff:+.1f} kbps"
        other = [m for m, r in PUBLISHED_RATES_KBPS.items() if m != self.cluster_mode and abs(kbps - r) <= 1.0]
        if other:
            note += f" but is within 1 kbps of the figure published for the {other[0]}-cluster mode"
        return note

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput_kbps"] = round(self.throughput_bps / 1e3, 2)
        d["note"] = self.note
        return d


def report_throughput(cfg: ExperimentConfig | int) -> ThroughputReport:
    """Payload bit rate of the framing layout for a cluster count."""
    n = cfg.cluster_mode if isinstance(cfg, ExperimentConfig) else int(cfg)
    if not 1 <= n <= 32:
        raise ConfigError([("cluster_mode", "must be in 1..32")])
    return ThroughputReport(
        cluster_mode=n,
        bits_per_packet=n * BITS_PER_PACKET,
        packet_duration_s=PACKET_LEN * CHIP_US / 1e6,
        throughput_bps=throughput_bps(n),
        published_kbps=PUBLISHED_RATES_KBPS.get(n),
    )
