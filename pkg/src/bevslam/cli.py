"""Command-line front end.

Four subcommands cover the usual loop:

  simulate   generate a dataset directory from a world template
  run        run the pipeline on a dataset (or simulate one in memory)
  eval       score an exported trajectory against a dataset's ground truth
  all        simulate + run + eval into one output directory
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, config_from_dict
from .dataio import load_dataset, load_trajectory, read_json, write_dataset, write_json
from .pipeline import evaluate_run, export_run, run_slam, simulate_dataset, trajectory_metrics
from .sim import TEMPLATES, SensorNoiseModel


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="JSON", help="run configuration file")
    p.add_argument("--seed", type=int, help="override the RNG seed")
    p.add_argument("--template", choices=sorted(TEMPLATES), help="override the world template")
    p.add_argument("--laps", type=int, help="override the lap count")
    p.add_argument("--speed", type=float, help="override the target speed (m/s)")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = config_from_dict(read_json(args.config)) if args.config else RunConfig()
    overrides = {}
    for name in ("seed", "template", "laps", "speed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "realtime", False):
        overrides["realtime"] = True
    if getattr(args, "noise_free", False):
        overrides["noise"] = SensorNoiseModel.zero()
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    dataset = simulate_dataset(config)
    write_dataset(dataset, args.out)
    print(f"wrote dataset ({len(dataset.frames)} frames, seed {dataset.seed}) to {args.out}")
    return 0


def _run_and_export(config: RunConfig, dataset, out_dir) -> dict:
    result = run_slam(config, dataset)
    report = export_run(result, out_dir)
    counters = result.counters
    print(
        f"{counters['frames_processed']} frames -> {counters['keyframes']} keyframes, "
        f"{counters['submaps_finalized']} submaps, {counters['loop_closures']} loop closures"
    )
    if "evaluation" in report:
        ate = report["evaluation"]["ate"]["rmse"]
        print(f"ATE RMSE {ate:.3f} m over {report['trajectory']['length_m']:.1f} m")
    print(f"wall time {result.timings.get('slam_s', 0.0):.1f} s", file=sys.stderr)
    return report


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.dataset) if args.dataset else None
    _run_and_export(config, dataset, args.out)
    print(f"wrote run artifacts to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    times, poses = load_trajectory(Path(args.run) / "trajectory.txt")
    metrics = trajectory_metrics(dataset, times, poses)
    out = Path(args.out) if args.out else Path(args.run) / "eval.json"
    write_json(metrics, out)
    print(f"ATE RMSE {metrics['ate']['rmse']:.3f} m, drift {metrics['drift_per_meter']:.4f} m/m")
    print(f"wrote {out}")
    return 0


def _cmd_all(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = Path(args.out)
    dataset = simulate_dataset(config)
    write_dataset(dataset, out / "dataset")
    result = run_slam(config, dataset)
    report = export_run(result, out)
    write_json(evaluate_run(result), out / "eval.json")
    counters = result.counters
    print(
        f"{counters['frames_processed']} frames -> {counters['keyframes']} keyframes, "
        f"{counters['submaps_finalized']} submaps, {counters['loop_closures']} loop closures"
    )
    print(f"ATE RMSE {report['evaluation']['ate']['rmse']:.3f} m; artifacts in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevslam",
        description="Semantic bird's-eye-view SLAM on simulated parking garages.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset directory")
    _add_config_options(p)
    p.add_argument("--noise-free", action="store_true", help="disable all sensor noise")
    p.add_argument("--out", required=True, metavar="DIR", help="dataset output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="run the pipeline and export artifacts")
    _add_config_options(p)
    p.add_argument("--dataset", metavar="DIR", help="dataset directory (default: simulate in memory)")
    p.add_argument("--realtime", action="store_true", help="pace frames against the wall clock")
    p.add_argument("--out", required=True, metavar="DIR", help="run output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="score an exported trajectory against ground truth")
    p.add_argument("--dataset", required=True, metavar="DIR", help="dataset directory")
    p.add_argument("--run", required=True, metavar="DIR", help="run output directory")
    p.add_argument("--out", metavar="JSON", help="metrics file (default: RUN/eval.json)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("all", help="simulate, run, and evaluate in one go")
    _add_config_options(p)
    p.add_argument("--noise-free", action="store_true", help="disable all sensor noise")
    p.add_argument("--realtime", action="store_true", help="pace frames against the wall clock")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.set_defaults(func=_cmd_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean one-liner, not a stack trace
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
