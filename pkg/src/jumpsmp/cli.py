"""Command-line driver.

    jumpsmp run --config exp.toml [--seed N] [--paths N] [--threads N] [--out DIR]
    jumpsmp run --kind orders [--benchmark lq_jump] ...
    jumpsmp list

``run`` prints one line per criterion, writes ``summary.json`` and one CSV per
table into the output directory, and exits with status 0 iff every criterion
passes (1 on a failed criterion, 2 on a usage error).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .benchmarks import get_benchmark, list_benchmarks
from .experiments import KINDS, ConfigError, ExperimentConfig, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def load_config(path) -> dict:
    """Read a TOML experiment config: top-level keys plus an optional [options] table."""
    with open(path, "rb") as fh:
        return tomli.load(fh)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jumpsmp", description="Maximum-principle experiments for jump diffusions")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", type=Path, help="TOML experiment configuration")
    run.add_argument("--kind", choices=KINDS, help="experiment kind (overrides the config)")
    run.add_argument("--benchmark", help="benchmark name (overrides the config)")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--paths", type=int, help="number of sample paths")
    run.add_argument("--steps", type=int, help="base mesh steps")
    run.add_argument("--threads", type=int, help="threads for noise generation (results do not change)")
    run.add_argument("--out", type=Path, help="output directory")
    sub.add_parser("list", help="list benchmarks and experiment kinds")
    return ap


def _config(args) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    for key, val in (("kind", args.kind), ("benchmark", args.benchmark), ("master_seed", args.seed),
                     ("n_paths", args.paths), ("base_steps", args.steps), ("threads", args.threads),
                     ("output_dir", None if args.out is None else str(args.out))):
        if val is not None:
            data[key] = val
    return ExperimentConfig.from_mapping(data)


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command == "list":
        for name in list_benchmarks():
            try:
                desc = get_benchmark(name).description
            except LookupError as err:
                desc = f"(unavailable: {err})"
            print(f"{name:24s} {desc}")
        print("kinds: " + ", ".join(KINDS))
        return EXIT_OK
    try:
        cfg = _config(args)
        get_benchmark(cfg.benchmark)
    except (ConfigError, KeyError, LookupError, OSError, tomli.TOMLDecodeError, TypeError, ValueError) as err:
        print(f"jumpsmp: {err}", file=sys.stderr)
        return EXIT_USAGE
    result = run_experiment(cfg)
    for c in result.criteria:
        print(c.line())
    out = Path(cfg.output_dir) if cfg.output_dir else Path("results") / f"{cfg.kind}-{cfg.benchmark}-{cfg.hash()}"
    result.write(out)
    print(f"{'PASS' if result.passed else 'FAIL'} {cfg.kind}/{cfg.benchmark} -> {out}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
