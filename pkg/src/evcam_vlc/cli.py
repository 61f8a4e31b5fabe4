"""``evcam-vlc`` command line: codebook dump, simulation, decoding and sweeps.

Exit codes: 0 success, 2 configuration or input error, 3 no signal / no sync.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .channel_sim import SceneConfig, Trajectory, generate_events
from .errors import ConfigError, EventFileError, NoSignalError, SimulationHorizonError, SyncNotFoundError
from .eventio import read_events, write_events
from .evaluation import ExperimentConfig, report_throughput, resolve_noise, run_mobile_sweep, run_static_sweep
from .framing import CHIP_US, PacketHeader, build_capture, packet_capacity
from .receiver import ReceiverConfig, decode_events
from .wh_codec import codebook_rows

EXIT_OK, EXIT_CONFIG, EXIT_NO_SIGNAL = 0, 2, 3


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([("", f"config file not found: {path}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"invalid JSON in {path}: {exc}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("", "top level must be an object")])
    return data


def _bits_str(bits) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).ravel())


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_gen_codebook(args) -> int:
    out = _out_dir(args)
    rows = codebook_rows()
    if args.format == "json":
        path = out / "codebook.json"
        doc = [{"index": i, "chips": chips, "transitions": tr} for i, chips, tr in rows]
        path.write_text(json.dumps(doc, indent=2) + "\n")
    else:
        path = out / "codebook.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "chips", "transitions"])
            for i, chips, tr in rows:
                w.writerow([i, " ".join(str(c) for c in chips), tr])
    print(path)
    return EXIT_OK


SIM_KEYS = {"scene", "trajectory", "noise", "n_clusters", "n_packets"}


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    unknown = sorted(set(cfg) - SIM_KEYS)
    if unknown:
        raise ConfigError([(k, "unknown key") for k in unknown])
    n_clusters = int(cfg.get("n_clusters", 16))
    scene_d = dict(cfg.get("scene", {}))
    scene_d.setdefault("leds_per_cluster", 96 // n_clusters if 96 % n_clusters == 0 else 6)
    scene = SceneConfig.from_dict(scene_d, path="scene.")
    if scene.n_clusters != n_clusters:
        raise ConfigError([("n_clusters", f"scene has {scene.n_clusters} clusters")])
    traj = Trajectory.from_dict(cfg.get("trajectory", {}), path="trajectory.")
    try:
        noise = resolve_noise(cfg.get("noise", "paper-outdoor"))
    except ConfigError as exc:
        raise ConfigError([(f"noise.{k}" if k else "noise", m) for k, m in exc.problems]) from None
    n_packets = int(cfg.get("n_packets", 1))
    if n_packets < 1:
        raise ConfigError([("n_packets", "must be >= 1")])

    rng = np.random.default_rng(args.seed)
    payloads = [rng.integers(0, 2, packet_capacity(n_clusters)) for _ in range(n_packets)]
    cap = build_capture(payloads, n_clusters, rng)
    try:
        ev = generate_events(cap.levels, scene, traj, noise, seed=args.seed)
    except SimulationHorizonError as exc:
        raise ConfigError([("trajectory", str(exc))]) from None
    out = _out_dir(args)
    ev_path = write_events(ev, out / f"events.{args.events_format}", args.events_format)
    ref = {
        "header": json.loads(cap.packets[0].header.to_json()),
        "seed": args.seed,
        "packet_starts_us": [s * CHIP_US for s in cap.packet_starts],
        "packets": [[_bits_str(b) for b in p.cluster_bits] for p in cap.packets],
        "n_events": int(ev.size),
    }
    ref_path = out / "reference.json"
    ref_path.write_text(json.dumps(ref, indent=2, sort_keys=True) + "\n")
    print(ev_path)
    print(ref_path)
    return EXIT_OK


def cmd_decode(args) -> int:
    try:
        ev = read_events(args.events)
    except (EventFileError, FileNotFoundError) as exc:
        raise ConfigError([("events", str(exc))]) from None
    rcfg = ReceiverConfig.from_dict(_load_json(args.config), path="receiver.")
    res = decode_events(ev, rcfg, keep_maps=args.dump_weights)
    ref = None
    if args.reference:
        ref = _load_json(args.reference)
        PacketHeader(**ref["header"])  # shape check
    clusters = []
    for k in range(rcfg.n_clusters):
        entry = {"cluster": k, "bits": [_bits_str(res.bits[p, k]) for p in range(res.bits.shape[0])]}
        if ref is not None:
            errs = nbits = 0
            for p, pkt in enumerate(ref["packets"][: res.bits.shape[0]]):
                truth = np.array([int(c) for c in pkt[k]], dtype=np.uint8)
                errs += int(np.count_nonzero(truth != res.bits[p, k]))
                nbits += truth.size
            entry.update(bit_errors=errs, bits_compared=nbits, ber=errs / nbits if nbits else None)
        clusters.append(entry)
    report = {
        "sync": {"packet_start_us": res.sync.packet_start_us, "margin": res.sync.margin, "peak": res.sync.peak},
        "box": list(res.box),
        "frames": [
            {"packet": f.packet, "frame": f.frame, "start_us": f.start_us,
             "centroid": None if f.centroid is None else [round(c, 3) for c in f.centroid],
             "theta": f.theta, "lost_clusters": f.lost, "n_grids": f.n_grids, "max_weight": f.max_weight}
            for f in res.frames
        ],
        "clusters": clusters,
    }
    if ref is not None:
        tot_e = sum(c["bit_errors"] for c in clusters)
        tot_b = sum(c["bits_compared"] for c in clusters)
        report["ber"] = tot_e / tot_b if tot_b else None
    out = _out_dir(args)
    path = out / "decode_report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.dump_weights:
        for p, f, gs, wmap in res.weight_maps:
            with open(out / f"weights_p{p}_f{f}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["gx", "gy", "cluster", "weight"])
                g_idx, k_idx = np.nonzero(wmap.w)
                for g, k in zip(g_idx, k_idx):
                    w.writerow([int(gs.cells[g, 0]), int(gs.cells[g, 1]), int(k), int(wmap.w[g, k])])
    print(path)
    return EXIT_OK


def _experiment(args, **defaults) -> ExperimentConfig:
    data = dict(defaults)
    data.update(_load_json(args.config))
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["trials"] = args.trials
    if args.out_dir is not None:
        data["out_dir"] = args.out_dir
    return ExperimentConfig.from_dict(data)


def _emit(report, cfg: ExperimentConfig, fmt: str) -> None:
    path = report.write(cfg.out_dir, fmt)
    print(path)
    for p in report.points:
        tag = "error-free" if p.error_free else f"BER {p.ber:.3e}"
        corr = "" if report.kind == "static" else (" corr=on" if p.correction else " corr=off")
        where = f"{p.bin_lo_m:g} m" if report.kind == "static" else f"{p.bin_lo_m:g}-{p.bin_hi_m:g} m @ {p.speed_mps:g} m/s"
        print(f"  {p.noise:>14s}  {where}{corr}: {tag}")


def cmd_static_sweep(args) -> int:
    cfg = _experiment(args)
    _emit(run_static_sweep(cfg), cfg, args.format)
    return EXIT_OK


def cmd_mobile_sweep(args) -> int:
    cfg = _experiment(args, speeds_mps=[5.6, 8.3, 11.1])
    _emit(run_mobile_sweep(cfg, ablate_correction=args.ablate_correction), cfg, args.format)
    return EXIT_OK


def cmd_throughput(args) -> int:
    if args.clusters:
        modes = args.clusters
    elif args.config:
        modes = [_experiment(args).cluster_mode]
    else:
        modes = [12, 16, 32]
    reports = [report_throughput(n) for n in modes]
    if args.format == "json":
        print(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["clusters", "bits_per_packet", "packet_ms", "throughput_kbps", "note"])
        for r in reports:
            w.writerow([r.cluster_mode, r.bits_per_packet, f"{r.packet_duration_s * 1e3:g}",
                        f"{r.throughput_bps / 1e3:.2f}", r.note])
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcam-vlc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt=True, seed_default=None):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=seed_default, help="master RNG seed")
        p.add_argument("--out-dir", default=None, help="output directory")
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("gen-codebook", help="write the 16-entry codebook")
    common(p)
    p.set_defaults(func=cmd_gen_codebook, out_dir_default=".")

    p = sub.add_parser("simulate", help="simulate a capture and write an event file plus reference bits")
    common(p, fmt=False, seed_default=0)
    p.add_argument("--events-format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_simulate, out_dir_default=".")

    p = sub.add_parser("decode", help="decode an event file into a JSON report")
    p.add_argument("events", help="event file (.bin or .csv)")
    common(p, fmt=False)
    p.add_argument("--reference", help="reference.json from simulate, for BER")
    p.add_argument("--dump-weights", action="store_true", help="write per-frame weight maps as CSV")
    p.set_defaults(func=cmd_decode, out_dir_default=".")

    for name, func, helptext in (("static-sweep", cmd_static_sweep, "BER against distance, stationary"),
                                 ("mobile-sweep", cmd_mobile_sweep, "BER per 10 m travel bin while approaching")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--trials", type=int, default=None, help="captures per sweep point")
        if name == "mobile-sweep":
            p.add_argument("--ablate-correction", action="store_true",
                           help="decode every capture with and without vibration correction")
        p.set_defaults(func=func, out_dir_default=None)

    p = sub.add_parser("throughput", help="payload bit rate per cluster mode")
    common(p)
    p.add_argument("--clusters", type=int, nargs="*", help="cluster counts (default 12 16 32)")
    p.add_argument("--trials", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_throughput, out_dir_default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out_dir is None and args.out_dir_default is not None:
        args.out_dir = args.out_dir_default
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for key, msg in exc.problems:
            print(f"  {key or '<root>'}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoSignalError, SyncNotFoundError) as exc:
        print(f"decode failed: {exc}", file=sys.stderr)
        return EXIT_NO_SIGNAL


if __name__ == "__main__":
    sys.exit(main())
