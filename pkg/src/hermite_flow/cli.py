"""Command line entry point: ``hermite-flow <kind> --config <path> [--out DIR] [--seed N] [--threads N]``.

Exit status is 0 when every criterion passes, 1 when any fails and 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import threading
from dataclasses import replace

from .config import KINDS, ConfigError, parse_config
from .experiments import run_experiment

THREADS_ENV = "HERMITE_FLOW_THREADS"


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hermite-flow", description="Run a teacher-student experiment.")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True, help="JSON experiment file")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="master seed (overrides base.seed)")
    parser.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress lines")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        spec = parse_config(args.config)
        if spec.kind != args.kind:
            raise ConfigError(f"config kind {spec.kind!r} does not match command {args.kind!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            spec = replace(spec, base=replace(spec.base, seed=args.seed))
        if args.out:
            spec = replace(spec, output_dir=args.out)
        threads = _threads(args.threads)
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"hermite-flow: error: {exc}", file=sys.stderr)
        return 2

    lock = threading.Lock()
    last = [-1]

    def progress(t: int, loss: float) -> None:
        # one line per ~1.5x growth in t keeps the stream short
        with lock:
            if t == 0 or t >= 1.5 * last[0] or t < last[0]:
                last[0] = t
                print(f"t={t} loss={loss:.6g}", file=sys.stderr)

    try:
        report = run_experiment(spec, threads=threads, progress=None if args.quiet else progress)
    except OSError as exc:
        print(f"hermite-flow: I/O error: {exc}", file=sys.stderr)
        return 2
    for c in report.criteria:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name}: value={c.value} ({c.tolerance})")
    print(f"report written to {spec.output_dir}/report.json")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
