"""Command-line entry point.

Verbs: run, validate, summarize, count-params. Exit codes: 0 ok,
2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, parse_config, serialize_config
from .harness import TrainingDiverged, count_params, run, summarize, summary_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text)


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    seeds = [args.seed] if args.seed is not None else None

    def progress(row: dict) -> None:
        print(f"iter {row['iteration']:>4}  steps {row['env_steps']:>9}  "
              f"return {row['mean_return']:8.3f}  kl {row['kl']:.4f}  "
              f"entropy {row['entropy']:.3f}", flush=True)

    manifest = run(config, seeds=seeds,
                   on_iteration=progress if not args.quiet else None)
    for seed, paths in manifest.outputs.items():
        print(f"seed {seed}: {paths['csv']}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = _load_config(args.config)
    sys.stdout.write(serialize_config(config))
    print(f"ok: {config.name}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    rows = summarize(args.csvs)
    text = summary_to_csv(rows)
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_count_params(args) -> int:
    config = _load_config(args.config)
    rows = count_params(config, tuple(args.hidden))
    print(f"{'module':<8}{'|z|':>6}{'memory':>10}{'heads':>8}{'total':>10}")
    for row in rows:
        print(f"{row['module']:<8}{row['hidden']:>6}{row['memory_params']:>10}"
              f"{row['head_params']:>8}{row['total_params']:>10}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gcmem",
        description="Train and inspect graph-convolutional-memory agents")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None,
                       help="run a single seed instead of the config's list")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="parse a config and echo it back")
    p_val.add_argument("config")
    p_val.set_defaults(fn=_cmd_validate)

    p_sum = sub.add_parser("summarize", help="cross-seed mean and 90% CI")
    p_sum.add_argument("csvs", nargs="+")
    p_sum.add_argument("--out", default=None)
    p_sum.set_defaults(fn=_cmd_summarize)

    p_cp = sub.add_parser("count-params", help="parameter counts per module")
    p_cp.add_argument("config")
    p_cp.add_argument("--hidden", type=int, nargs="+", default=[8, 16, 32])
    p_cp.set_defaults(fn=_cmd_count_params)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, OSError, RuntimeError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
