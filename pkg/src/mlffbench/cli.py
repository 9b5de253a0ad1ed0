"""Command line entry point: ``mlffbench <verb> [options]``.

Verbs: ``gen``, ``stage-bench``, ``md``, ``ratio``, ``verify``.  Options
given on the command line override the ``--config`` file.  Exit status is 0
on success, 1 when a run or a check fails and 2 for configuration or usage
errors.
"""
from __future__ import annotations

import argparse
import sys

from . import bench
from .config import BenchConfig, MODELS, STRATEGIES, load_config, parse_sizes
from .errors import ConfigurationError
from .md import MODES

VERBS = ("gen", "stage-bench", "md", "ratio", "verify")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlffbench", description="Cost benchmarks for ML and classical force fields.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--sizes", help="comma separated residue counts")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--reps", type=int)
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=MODES, help="md: system configuration")
    p.add_argument("--steps", type=int, help="md: timed steps")
    return p


def resolve_config(args) -> BenchConfig:
    config = load_config(args.config) if args.config else BenchConfig()
    return config.with_overrides(
        sizes=parse_sizes(args.sizes) if args.sizes else None,
        model=args.model, strategy=args.strategy, reps=args.reps,
        deterministic=args.deterministic, out=args.out, mode=args.mode, steps=args.steps,
    )


def _summary(verb, result) -> tuple:
    """(exit status, one line for stdout)."""
    if verb == "gen":
        return 0, f"wrote {len(result)} systems"
    if verb == "stage-bench":
        return 0, f"wrote {len(result.rows)} timing rows"
    if verb == "md":
        lines = [f"size={r['size']} atoms={r['atoms']} ns/day={r['ns_per_day']:.4g} "
                 f"drift={r['relative_energy_drift']:.3g}" for r in result]
        return 0, "\n".join(lines)
    if verb == "ratio":
        lines = [f"{e['label']}: ratio={e['ratio']}" for e in result["entries"]]
        return 0, "\n".join(lines)
    lines = [f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} value={c['value']}" for c in result["checks"]]
    return (0 if result["passed"] else 1), "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        run = {"gen": bench.cmd_gen, "stage-bench": bench.cmd_stage_bench, "md": bench.cmd_md,
               "ratio": bench.cmd_ratio, "verify": bench.cmd_verify}[args.verb]
        result = run(config)
    except ConfigurationError as exc:
        print(f"mlffbench: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"mlffbench: {args.verb} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    status, text = _summary(args.verb, result)
    print(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
