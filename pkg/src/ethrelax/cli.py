"""Command-line entry point.

Usage::

    ethrelax SUBCOMMAND [CONFIG] [--out DIR] [--threads N] [--section.key=value ...]

Exit codes: 0 success, 1 config error, 2 some sweep points failed, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, env_threads, resolve_config

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_INTERNAL = 0, 1, 2, 3

SUBCOMMANDS = ("estimate", "equipartition", "relax", "scaling", "oracle", "validate-config")


def _parser():
    p = argparse.ArgumentParser(prog="ethrelax", description="ETH diagnostics and relaxation runs for coupled spin systems.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("config", nargs="?", help="YAML or JSON run config (defaults if omitted)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, help="worker processes (default: ETHRELAX_THREADS or CPU count)")
    return p


def _split_overrides(argv):
    known, overrides = [], []
    for a in argv:
        head = a.split("=", 1)[0]
        if a.startswith("--") and "." in head and head not in ("--out", "--threads"):
            overrides.append(a)
        else:
            known.append(a)
    return known, overrides


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    known, overrides = _split_overrides(argv)
    try:
        args = _parser().parse_args(known)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args.config, overrides, args.out)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate-config":
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return EXIT_OK
    threads = args.threads or env_threads() or os.cpu_count() or 1
    try:
        from .runner import RUNNERS

        res = RUNNERS[args.command](cfg, threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    ok = sum(1 for r in res.records if r["status"] == "ok")
    print(f"{args.command}: {ok} ok, {res.failed} failed, {res.skipped} resumed -> {res.out_dir}")
    for r in res.records:
        if r["status"] != "ok":
            print(f"  failed {r['key']}: {r['payload']['error_type']}: {r['payload']['message']}", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
