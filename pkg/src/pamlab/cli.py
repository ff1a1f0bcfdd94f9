"""Command line: ``pamlab <experiment> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, parse_config
from .experiments import run


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pamlab", description="Run a parabolic Anderson model experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, type=Path, help="INI configuration file")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides run.out_dir)")
    p.add_argument("--seed", type=_u64, default=None, help="master seed (overrides run.master_seed)")
    p.add_argument("--threads", type=_positive, default=None,
                   help="worker threads (else $PAMLAB_THREADS, run.threads, or the CPU count)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config.read_text())
    except OSError as e:
        print(f"pamlab: cannot read {args.config}: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"pamlab: {e}", file=sys.stderr)
        return 2
    if cfg.experiment != args.experiment:
        print(f"pamlab: config describes experiment {cfg.experiment!r}, not {args.experiment!r}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.master_seed = args.seed
    summary = run(cfg, args.out, args.threads)
    flags = summary.get("pass", {})
    print(json.dumps({"n_samples": summary["n_samples"], "pass": flags,
                      "runtime_seconds": round(summary["runtime_seconds"], 3)}, sort_keys=True))
    return 0 if flags and all(flags.values()) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
