"""Command-line front end.

    fpmr run <config> [--out DIR] [--format csv|json] [--plot] [--threads N] [--converge TOL]
    fpmr oracle <config> ...     time-sliced reference instead of the Fokker-Planck path
    fpmr validate <config>       schema check only
    fpmr list                    shipped example configurations

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, shipped_configs
from .experiments import ExperimentError, run_experiment
from .output import write_outputs
from .sparse import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _resolve(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = shipped_configs()
    if name in shipped:
        return shipped[name]
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fpmr",
        description="Fokker-Planck magnetic resonance simulations driven by YAML configurations.",
        epilog="Exit codes: 0 success, 1 invalid configuration, 2 numerical failure. "
               "A config argument may be a path or the name of a shipped example (see 'fpmr list').",
    )
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in (("run", "run the Fokker-Planck simulation"),
                        ("oracle", "run the time-sliced Liouville-von Neumann reference "
                                   "(static, mas, dor and deer experiments)")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="YAML configuration file or shipped example name")
        p.add_argument("--out", help="output directory (default: output.directory of the config)")
        p.add_argument("--format", choices=["csv", "json"], action="append",
                       help="output format; repeat for both (default: output.formats of the config)")
        p.add_argument("--plot", action="store_true", help="also write SVG line plots")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for powder orientations and frequency points")
        if name == "run":
            p.add_argument("--converge", type=float, metavar="TOL",
                           help="double every grid until the relative max-abs output change is below TOL")

    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config")
    sub.add_parser("list", help="list the shipped example configurations")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list":
        for name, path in shipped_configs().items():
            print(f"{name}\t{path}")
        return EXIT_OK

    path = _resolve(args.config)
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{path}: valid {cfg.experiment.kind} configuration")
        return EXIT_OK

    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    oracle = args.command == "oracle"
    try:
        report = run_experiment(cfg, threads=args.threads, oracle=oracle,
                                converge=None if oracle else args.converge)
    except (ExperimentError, NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # inconsistencies only detectable once the spin system is built
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stem = path.stem + ("_oracle" if oracle else "")
    out = args.out or cfg.output.directory
    formats = args.format or cfg.output.formats
    try:
        paths = write_outputs(report, out, stem, formats, args.plot or cfg.output.plot)
    except OSError as exc:
        print(f"error: cannot write outputs to {out}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    meta = {k: v for k, v in report.result.metadata.items() if isinstance(v, (int, float, str, bool))}
    if meta:
        print("  ".join(f"{k}={v}" for k, v in meta.items()))
    if report.converged is False:
        print("warning: grids did not converge within the doubling cap", file=sys.stderr)
    print(f"wall time {report.wall_time_s:.2f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
