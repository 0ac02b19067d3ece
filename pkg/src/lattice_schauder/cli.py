"""Command line entry point: ``lattice-schauder <subcommand> [--config F] [--out D] [--seed S] [--jobs J]``.

Exit status is 0 when every check passes, 1 when a check fails and 2 on
configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, ExperimentConfig
from .errors import LatticeSchauderError
from .experiments import run_experiment
from .report import emit_report, summary_text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lattice-schauder",
                                description="Lattice reaction-diffusion estimates: solves, sweeps and kernel checks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="YAML config file (defaults are used when omitted)")
        sp.add_argument("--out", help="output directory (default: out/<experiment>)")
        sp.add_argument("--seed", type=int, help="override the config seed (u64)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = ExperimentConfig.load(args.config)
            if cfg.experiment != args.command:
                raise ConfigError(f"config is for {cfg.experiment!r}, not {args.command!r}")
        else:
            cfg = ExperimentConfig.from_dict({"experiment": args.command})
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg = cfg.with_overrides(seed=args.seed)
        out = args.out or cfg.out or f"out/{cfg.experiment}"
        result = run_experiment(cfg, jobs=args.jobs)
        paths = emit_report(result, cfg, out)
    except (ConfigError, LatticeSchauderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(summary_text(result, cfg))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
