"""Command-line entry point for the benchmark harness."""

from __future__ import annotations

import argparse
import sys

from .bench import MODES, BenchConfig, run_bench
from .errors import ConfigError
from .optim import KINDS
from .schedule import SCHEDULES


def _parse_sweep(text: str) -> tuple:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="optfuse",
        description="Benchmark and verify fused optimizer schedules on synthetic models.")
    p.add_argument("--model", default="chain",
                   choices=("chain", "shared-chain", "mul-probe"))
    p.add_argument("--layers", type=int, default=8, help="number of trainable layers")
    p.add_argument("--width", type=int, default=32, help="layer width")
    p.add_argument("--optimizer", default="adam",
                   choices=[k for k in KINDS if k != "newton"])
    p.add_argument("--eta", type=float, default=0.001, help="step size")
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--clip-norm", type=float, default=None,
                   help="attach global-norm gradient clipping")
    p.add_argument("--schedule", default="backward-fusion", choices=SCHEDULES)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--batch-sweep", type=_parse_sweep, default=None, metavar="LO:HI")
    p.add_argument("--iters", type=int, default=100, help="measured iterations")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--workers", type=int, default=1,
                   help="worker count for parallel backward-fusion")
    p.add_argument("--precision", default="f32", choices=("f32", "f64"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="time", choices=MODES)
    p.add_argument("--metric", default="speedup", choices=("speedup", "saved"),
                   help="sweep column content")
    p.add_argument("--out", default=None, help="write the report to this path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = BenchConfig(
            model=args.model, layers=args.layers, width=args.width,
            optimizer=args.optimizer, eta=args.eta, weight_decay=args.weight_decay,
            clip_norm=args.clip_norm, schedule=args.schedule, precision=args.precision,
            batch=args.batch, batch_sweep=args.batch_sweep, iters=args.iters,
            warmup=args.warmup, workers=args.workers, seed=args.seed,
            mode=args.mode, metric=args.metric, out=args.out)
        result = run_bench(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for line in result["lines"]:
        print(line)
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
