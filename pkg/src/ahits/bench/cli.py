"""Command-line entry point for the benchmark pipeline.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DivergenceError, FormatError, InvalidArgumentError
from .config import SCALES, ExperimentConfig, desk_scale, preset, with_overrides
from .experiment import (
    RunPaths,
    compare_methods,
    generate_stage,
    noise_sweep,
    run_experiment,
    schedule_stage,
    train_stage,
)
from .report import ComparisonReport, emit_report, load_report

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
SYSTEM_CHOICES = ("hyperbolic", "cubic", "vanderpol", "hopf", "fhn", "ks")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment config (full config or {system, scale, overrides})")
    p.add_argument("--system", choices=SYSTEM_CHOICES, help="benchmark preset used when no --config is given")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker count; results do not depend on it")
    p.add_argument("--out", type=Path, help="run directory (default: the config's out_dir)")
    p.add_argument("--scale", choices=SCALES, help="desk shrinks counts, widths and epochs")
    p.add_argument("--force", action="store_true", help="recompute stages even when their hash matches")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ahits", description="Adaptive hierarchical neural time stepping benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("generate", "integrate train/validation/test trajectories"),
        ("train", "train one stepper per dyadic stride"),
        ("schedule", "estimate the adaptive schedule and shortlist models per window"),
        ("compare", "score single steppers, HiTS and AHiTS on the test split"),
    ]:
        _common(sub.add_parser(name, help=text, description=text))
    p = sub.add_parser("noise-sweep", help="retrain on noisy data and compare at each noise level")
    _common(p)
    p.add_argument("--levels", type=float, nargs="+", help="noise percentages (default: the config's list)")
    p = sub.add_parser("report", help="print a stored report as a table")
    p.add_argument("path", type=Path, help="report .json or .csv")
    p.add_argument("--csv", action="store_true", help="print CSV instead of a table")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if args.scale == "desk" and cfg.scale == "paper":
            cfg = desk_scale(cfg)
    elif args.system is not None:
        cfg = preset(args.system, args.scale or "desk")
    else:
        raise ConfigError("give --config or --system")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    return with_overrides(cfg, overrides) if overrides else cfg


def format_table(report: ComparisonReport) -> str:
    head = f"{'system':<11} {'noise%':>6} {'method':<8} {'steps':>6} {'wall_s':>9} {'rel_mse':>10} {'mse':>10}"
    lines = [head, "-" * len(head)]
    for r in report.rows:
        lines.append(f"{r.system:<11} {r.noise_pct:>6g} {r.method:<8} {r.steps:>6d} {r.wall_seconds:>9.4f} "
                     f"{r.relative_mse:>10.3e} {r.plain_mse:>10.3e}")
    return "\n".join(lines)


def _run(args) -> int:
    if args.command == "report":
        report = load_report(args.path)
        print(report.to_csv() if args.csv else format_table(report), end="\n" if not args.csv else "")
        return EXIT_OK

    cfg = resolve_config(args)
    paths = RunPaths(cfg.out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    (paths.root / "config.json").write_text(cfg.to_json())

    if args.command == "generate":
        ds = generate_stage(cfg, paths, args.force)
        for name, d in ds.items():
            print(f"{name}: {d.shape}")
    elif args.command == "train":
        ds = generate_stage(cfg, paths, args.force)
        h = train_stage(cfg, paths, ds, force=args.force)
        print(f"hierarchy of {len(h)} steppers in {paths.hierarchy()}")
    elif args.command == "schedule":
        ds = generate_stage(cfg, paths, args.force)
        h = train_stage(cfg, paths, ds, force=args.force)
        plan, sel = schedule_stage(cfg, paths, h, ds, force=args.force)
        print(f"HiTS selection: levels {sel.lower}-{sel.upper}")
        print(f"adaptive schedule: {len(plan.steps)} steps, {len(plan.windows)} windows -> {paths.plan()}")
        for w in plan.windows:
            print(f"  offset {w.start:>6d}  stride 2^{w.stride_d:<2d} x{w.count:<5d} models {list(w.shortlist)}")
    elif args.command == "compare":
        run = run_experiment(cfg, force=args.force)
        report = compare_methods(cfg, run.hierarchy, run.datasets, run.plan, run.selection)
        paths.reports.mkdir(exist_ok=True)
        written = emit_report(report, paths.reports / "compare")
        print(format_table(report))
        print("wrote " + ", ".join(str(p) for p in written))
    elif args.command == "noise-sweep":
        reports = noise_sweep(cfg, pcts=args.levels, force=args.force)
        merged = reports[0]
        for r in reports[1:]:
            merged = merged.extend(r)
        merged.metadata["noise_pcts"] = [r.metadata["noise_pct"] for r in reports]
        paths.reports.mkdir(exist_ok=True)
        written = emit_report(merged, paths.reports / "noise_sweep")
        print(format_table(merged))
        print("wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except DivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (FormatError, OSError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
