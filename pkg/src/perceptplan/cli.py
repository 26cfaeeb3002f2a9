"""Command line entry point: ``perceptplan run | compare | replay``.

Exit codes: 0 success, 2 usage or config error, 3 planner stall, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .planner import Mode
from .simbench import (ExperimentRecord, IoError, compute_metrics, emit_outputs, load_config, make_world,
                       metrics_row, read_frames, run_experiment)
from .tracking import write_snapshots

EXIT_OK, EXIT_USAGE, EXIT_STALL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("perceptplan")

COMPARISON_FIELDS = ["mode", "seed", "in_fov_pct", "front_not_fov_pct", "behind_pct", "proj_speed_mean_px_s",
                     "proj_speed_std_px_s", "collision_frames", "stalls", "median_replan_ms"]


def _configs(args):
    try:
        return load_config(args.config) if args.config else load_config(text="")
    except OSError as e:
        raise IoError(str(e)) from e


def _world(sim, cfg, seed, obstacles):
    return make_world(dataclasses.replace(sim, n_obstacles=obstacles) if obstacles else sim, cfg, seed)


def _one(cfg, sim, mode, seed, duration, prediction, obstacles, out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "replans.jsonl", "w")
    except OSError as e:
        raise IoError(str(e)) from e
    with fh:
        rec, m = run_experiment(_world(sim, cfg, seed, obstacles), mode, duration, seed, cfg, sim,
                                prediction=prediction, log=fh)
    emit_outputs(rec, m, out)
    return rec, m


def _median_ms(rec) -> float:
    tot = [r.total for r in rec.replans]
    return float(np.median(tot) * 1e3) if tot else float("nan")


def _summary(rec, m) -> str:
    return (f"{rec.mode:9s} seed {rec.seed}: in_fov {m.in_fov_pct:5.1f}%  front {m.front_not_fov_pct:5.1f}%  "
            f"behind {m.behind_pct:5.1f}%  |sdot| {m.proj_speed_mean:6.1f} px/s  collisions {m.collision_frames}"
            f"  median replan {_median_ms(rec):.0f} ms")


def cmd_run(args) -> int:
    cfg, sim = _configs(args)
    duration = args.duration if args.duration is not None else sim.duration
    rec, m = _one(cfg, sim, args.mode, args.seed, duration, args.prediction, args.obstacles, Path(args.out))
    print(_summary(rec, m))
    if args.snapshots:
        if not rec.snapshots:
            log.warning("no point clouds recorded; --snapshots needs --prediction tracked")
        try:
            write_snapshots(args.snapshots, rec.snapshots)
        except OSError as e:
            raise IoError(str(e)) from e
    if rec.stalls:
        log.error("planner stalled at t = %s s", ", ".join(f"{t:.2f}" for t in rec.stalls))
        return EXIT_STALL
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, sim = _configs(args)
    duration = args.duration if args.duration is not None else sim.duration
    out = Path(args.out)
    rows, stalled = [], False
    per_mode: dict[str, list] = {}
    for seed in args.seeds:
        for mode in Mode:
            rec, m = _one(cfg, sim, mode, seed, duration, args.prediction, args.obstacles,
                          out / f"{mode.value}_seed{seed}")
            print(_summary(rec, m), flush=True)
            stalled |= bool(rec.stalls)
            row = {k: v for k, v in metrics_row(rec, m).items() if k in COMPARISON_FIELDS}
            row["median_replan_ms"] = _median_ms(rec)
            rows.append(row)
            per_mode.setdefault(mode.value, []).append(row)
    means = {}
    for mode, rs in per_mode.items():
        means[mode] = {k: float(np.mean([r[k] for r in rs])) for k in COMPARISON_FIELDS[2:]}
        rows.append({"mode": mode, "seed": "mean", **means[mode]})
    c, d, n = (means.get(x.value) for x in (Mode.COUPLED, Mode.DECOUPLED, Mode.NO_PA))
    if c and d and n:
        ratios = {
            "in_fov_pct": (c["in_fov_pct"] / max(n["in_fov_pct"], 1e-12), c["in_fov_pct"] / max(d["in_fov_pct"], 1e-12)),
            "proj_speed_mean_px_s": (c["proj_speed_mean_px_s"] / n["proj_speed_mean_px_s"],
                                     c["proj_speed_mean_px_s"] / d["proj_speed_mean_px_s"]),
        }
        rows.append({"mode": "COUPLED/NO_PA", "seed": "ratio", **{k: v[0] for k, v in ratios.items()}})
        rows.append({"mode": "COUPLED/DECOUPLED", "seed": "ratio", **{k: v[1] for k, v in ratios.items()}})
        print(f"in_fov ratio vs NO_PA {ratios['in_fov_pct'][0]:.2f}x, vs DECOUPLED {ratios['in_fov_pct'][1]:.2f}x; "
              f"projected speed ratio {ratios['proj_speed_mean_px_s'][0]:.2f} / {ratios['proj_speed_mean_px_s'][1]:.2f}")
    try:
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARISON_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(round(float(v), 9)) if isinstance(v, (float, np.floating)) else v)
                            for k, v in r.items()})
    except OSError as e:
        raise IoError(str(e)) from e
    return EXIT_STALL if stalled else EXIT_OK


def cmd_replay(args) -> int:
    cfg, sim = _configs(args)
    frames = read_frames(args.frames)
    m = compute_metrics(frames, sim, cfg.camera())
    for k, v in m.row().items():
        print(f"{k} = {v}")
    if args.out:
        emit_outputs(ExperimentRecord(frames=frames), m, args.out, parts=("metrics", "histogram"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perceptplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value file with planner and simulation keys")
        sp.add_argument("--duration", type=float, help="simulated seconds (default: config duration)")
        sp.add_argument("--prediction", choices=["perfect", "tracked"], default="perfect")
        sp.add_argument("--obstacles", type=int, default=0,
                        help="obstacle count override (3 gives the stress scenario)")

    r = sub.add_parser("run", help="one closed-loop experiment")
    r.add_argument("--mode", type=lambda s: Mode.parse(s).value, default=Mode.COUPLED.value,
                   help="NO_PA, DECOUPLED or COUPLED")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="out")
    r.add_argument("--snapshots", help="write tracker point clouds here ('t x y z' per line)")
    common(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="all three modes over several seeds")
    c.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    c.add_argument("--out", default="out")
    common(c)
    c.set_defaults(func=cmd_compare)

    rp = sub.add_parser("replay", help="recompute metrics from a frames CSV")
    rp.add_argument("frames")
    rp.add_argument("--config")
    rp.add_argument("--out", help="also write metrics and histogram CSVs here")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IoError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    except (KeyError, ValueError) as e:
        log.error("configuration error: %s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
