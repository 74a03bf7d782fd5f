"""Command line runner.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 identity
thresholds not met (``identities`` only).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, build_config, parse_config, with_overrides

SUBCOMMANDS = {
    "field-check": "field_check",
    "boundary": "boundary_specdim",
    "critical": "critical_boundary",
    "bulk": "bulk_specdim",
    "transform": "transform_table",
    "ballmass": "ball_mass",
    "coupling": "coupling_check",
    "identities": "identity_checks",
}
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liouville", description="Liouville quantum gravity experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, exp in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=f"run the {exp} experiment")
        s.add_argument("--config", type=Path, help="INI-style or JSON config file")
        s.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        s.add_argument("--out", type=Path, help="output directory (overrides the config)")
        s.add_argument("--workers", type=_positive, help="worker processes")
        s.add_argument("--quenched", action="store_true", help="one fixed field for all bridges")
    return p


def load(args) -> "ExperimentConfig":
    experiment = SUBCOMMANDS[args.command]
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"cannot read {args.config}: {exc}"]) from exc
        cfg = parse_config(text) if "experiment" in text else parse_config(text, {"experiment": experiment})
        if cfg.experiment != experiment:
            raise ConfigError([f"config is for {cfg.experiment!r} but the subcommand runs {experiment!r}"])
    else:
        cfg = build_config({"experiment": experiment})
    return with_overrides(cfg, master_seed=args.seed, output_dir=None if args.out is None else str(args.out),
                          workers=args.workers, quenched=True if args.quenched else None)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiments import run_experiment

    try:
        manifest = run_experiment(cfg)
    except Exception as exc:  # reported with experiment context
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{cfg.experiment}: wrote {', '.join(manifest.files)} to {cfg.output_dir} ({manifest.wall_time:.1f} s)")
    if manifest.passed is False:
        print("identity thresholds not met", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
