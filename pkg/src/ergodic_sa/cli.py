"""Command-line front end: ``ergodic-sa run|preset|list-presets|validate``.

Exit codes: 0 success, 2 schema error, 3 tolerance failure, 4 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ErgodicSAError, SchemaError, UnknownPreset
from .presets import list_presets, preset_config

EXIT_OK, EXIT_SCHEMA, EXIT_TOLERANCE, EXIT_RUNTIME = 0, 2, 3, 4


def _report(result, stream) -> int:
    s = result.summary
    for w in s["warnings"]:
        print(f"warning: {w}", file=stream)
    for c in s["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']} (tol {c['tolerance']})", file=stream)
    print(f"{s['scenario']}: {'PASS' if s['passed'] else 'FAIL'} -> {result.output_dir}", file=stream)
    return EXIT_OK if s["passed"] else EXIT_TOLERANCE


def _execute(load, workers, stream) -> int:
    from .runner import run_scenario

    try:
        cfg = load()
    except SchemaError as exc:
        for path, reason in exc.errors:
            print(f"schema error at {path}: {reason}", file=sys.stderr)
        return EXIT_SCHEMA
    except UnknownPreset as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        result = run_scenario(cfg, workers=workers)
    except (ErgodicSAError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return _report(result, stream)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergodic-sa", description="Seeded stochastic-approximation experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run an experiment config (JSON)")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=1, help="worker processes for replicas (output is unchanged)")

    pr = sub.add_parser("preset", help="run a shipped scenario")
    pr.add_argument("name")
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--out", default=None, help="output directory")
    pr.add_argument("--workers", type=int, default=1)

    sub.add_parser("list-presets", help="list shipped scenarios")

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = sys.stdout
    if args.verb == "list-presets":
        for name, desc in list_presets():
            print(f"{name}\t{desc}", file=out)
        return EXIT_OK
    if args.verb == "validate":
        try:
            cfg = load_config(args.config)
        except SchemaError as exc:
            for path, reason in exc.errors:
                print(f"schema error at {path}: {reason}", file=sys.stderr)
            return EXIT_SCHEMA
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        print(f"ok: {cfg.scenario} ({len(cfg.arm_specs())} arm(s), {cfg.replicas} replicas, N={cfg.horizon})",
              file=out)
        return EXIT_OK
    if args.verb == "run":
        return _execute(lambda: load_config(args.config), args.workers, out)
    return _execute(lambda: preset_config(args.name, seed=args.seed, out=args.out), args.workers, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
