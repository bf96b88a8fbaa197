"""Benchmark harness: configured runs, sweeps, verification, and reports.

One harness drives everything the CLI exposes: timed single configurations,
per-stage breakdown tables, batch-size sweeps emitted as plot-ready TSV,
optimizer comparisons, trace dumps, and the cross-schedule verification
grid whose failure makes the process exit nonzero.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .graph import Graph, build_model
from .optim import OptimizerPolicy
from .schedule import (BACKWARD_FUSION, BASELINE, FORWARD_FUSION, SCHEDULES,
                       flush_pending_updates, run_backward_fusion, run_baseline,
                       run_forward_fusion)
from .tensor import Tensor, uniform

MODES = ("time", "trace", "verify", "breakdown", "sweep", "optimizers")
STAGES = ("forward", "backward", "optimizer")
LOCAL_OPTIMIZERS = ("sgd", "sgd-momentum", "adagrad", "rmsprop", "adadelta", "adam")
CSV_HEADER = "idx\tforward-fusion\tbackward-fusion"
SKIP_MARKER = "skip"

# (model, build kwargs) cells of the verification grid
VERIFY_MODELS = (
    ("chain", {"layers": 3, "width": 4}),
    ("shared-chain", {"layers": 4, "width": 4}),
    ("mul-probe", {"width": 3}),
)


@dataclass
class BenchConfig:
    """Everything one harness invocation needs."""

    model: str = "chain"
    layers: int = 8
    width: int = 32
    optimizer: str = "adam"
    eta: float = 0.001
    weight_decay: float = 0.0
    clip_norm: float | None = None
    schedule: str = BACKWARD_FUSION
    precision: str = "f32"
    batch: int = 32
    batch_sweep: tuple | None = None  # (lo, hi) inclusive
    iters: int = 100
    warmup: int = 10
    workers: int = 1
    seed: int = 0
    out: str | None = None
    mode: str = "time"
    metric: str = "speedup"  # sweep column content: "speedup" | "saved"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}, expected one of {SCHEDULES}")
        if self.iters < 1:
            raise ConfigError(f"measured iterations must be >= 1, got {self.iters}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.metric not in ("speedup", "saved"):
            raise ConfigError(f"metric must be 'speedup' or 'saved', got {self.metric!r}")
        if self.batch_sweep is not None:
            lo, hi = self.batch_sweep
            if lo < 1 or hi < lo:
                raise ConfigError(f"batch sweep needs 1 <= lo <= hi, got {lo}:{hi}")

    def batch_sizes(self) -> list:
        if self.batch_sweep is None:
            return [self.batch]
        lo, hi = self.batch_sweep
        return list(range(lo, hi + 1))  # strictly increasing by construction


def make_policy(cfg: BenchConfig) -> OptimizerPolicy:
    return OptimizerPolicy(kind=cfg.optimizer, eta=cfg.eta,
                           weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)


def make_graph(cfg: BenchConfig) -> Graph:
    return build_model(cfg.model, layers=cfg.layers, width=cfg.width,
                       seed=cfg.seed, precision=cfg.precision)


def make_input(graph: Graph, batch: int, seed: int) -> Tensor:
    return uniform(graph.input_shape(batch), 0.1, 1.0, seed, graph.precision)


def _run_once(schedule: str, graph: Graph, policy: OptimizerPolicy, inp: Tensor,
              workers: int = 1):
    if schedule == BASELINE:
        return run_baseline(graph, policy, inp)
    if schedule == FORWARD_FUSION:
        return run_forward_fusion(graph, policy, inp)
    return run_backward_fusion(graph, policy, inp, workers=workers)


def measure(cfg: BenchConfig, schedule: str, batch: int) -> dict:
    """Warm up, then run the measured iterations; returns per-stage means
    plus mean and median totals in milliseconds."""
    graph = make_graph(cfg)
    policy = make_policy(cfg)
    inp = make_input(graph, batch, cfg.seed)
    for _ in range(cfg.warmup):
        _run_once(schedule, graph, policy, inp, cfg.workers)
    per_stage = {s: [] for s in STAGES}
    totals = []
    for _ in range(cfg.iters):
        report = _run_once(schedule, graph, policy, inp, cfg.workers)
        for s in STAGES:
            per_stage[s].append(report.stage_ms[s])
        totals.append(report.total_ms)
    out = {s: statistics.fmean(per_stage[s]) for s in STAGES}
    out["total"] = statistics.fmean(totals)
    out["median"] = statistics.median(totals)
    return out


def emit_csv(rows, path: str) -> None:
    """Write sweep rows as tab-separated text: header then one line per
    batch size. Floats are written with full precision so a parse-back
    reproduces the in-memory values exactly."""
    with open(path, "w") as fh:
        for line in format_csv(rows):
            fh.write(line + "\n")


def format_csv(rows) -> list:
    lines = [CSV_HEADER]
    for idx, ff, bf in rows:
        lines.append(f"{idx}\t{_cell(ff)}\t{_cell(bf)}")
    return lines


def _cell(value) -> str:
    return value if isinstance(value, str) else repr(float(value))


def parse_csv(path: str) -> list:
    """Read a file produced by emit_csv back into (idx, ff, bf) rows."""
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected header {header!r}")
        for line in fh:
            idx, ff, bf = line.rstrip("\n").split("\t")
            rows.append((int(idx), _parse_cell(ff), _parse_cell(bf)))
    return rows


def _parse_cell(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def sweep(cfg: BenchConfig) -> list:
    """One row per batch size: fusion speedup vs baseline (or saved ms)."""
    rows = []
    for b in cfg.batch_sizes():
        base = measure(cfg, BASELINE, b)
        row = [b]
        for schedule in (FORWARD_FUSION, BACKWARD_FUSION):
            try:
                fused = measure(cfg, schedule, b)
            except Exception as e:  # e.g. GlobalInfoRequired with clipping
                row.append(f"{SKIP_MARKER}:{type(e).__name__}")
                continue
            if cfg.metric == "saved":
                row.append(base["total"] - fused["total"])
            else:
                row.append(base["total"] / fused["total"])
        rows.append(tuple(row))
    return rows


def breakdown(cfg: BenchConfig) -> list:
    """Per-stage means for all three schedules; fused schedules report an
    optimizer stage of zero because that time is billed to the host stage."""
    rows = []
    for schedule in SCHEDULES:
        stats = measure(cfg, schedule, cfg.batch)
        for stage in STAGES:
            rows.append((schedule, stage, stats[stage]))
    return rows


# -- optimizer comparison ----------------------------------------------------

def _comparison_policies(cfg: BenchConfig) -> list:
    decay = cfg.weight_decay if cfg.weight_decay > 0 else 1e-4
    names = [("sgd-no-decay", "sgd", 0.0)]
    names += [(kind, kind, decay) for kind in LOCAL_OPTIMIZERS]
    return names


def compare_optimizers(cfg: BenchConfig) -> list:
    """(name, optimizer-time ratio, fusion speedups) for the seven standard
    configurations at one batch size."""
    rows = []
    for name, kind, decay in _comparison_policies(cfg):
        sub = replace(cfg, optimizer=kind, weight_decay=decay, clip_norm=None)
        base = measure(sub, BASELINE, cfg.batch)
        ratio = base["optimizer"] / base["total"]
        ff = measure(sub, FORWARD_FUSION, cfg.batch)
        bf = measure(sub, BACKWARD_FUSION, cfg.batch)
        rows.append((name, ratio, base["total"] / ff["total"], base["total"] / bf["total"]))
    return rows


# -- verification grid -------------------------------------------------------

def _iteration_inputs(graph: Graph, batch: int, seed: int, iters: int) -> list:
    base = int(np.random.SeedSequence([seed, 9173]).generate_state(1)[0])
    return [make_input(graph, batch, base + i) for i in range(iters)]


def _bitwise_equal(a: Tensor, b: Tensor) -> bool:
    return a.data.tobytes() == b.data.tobytes()


def _max_rel_err(a: Tensor, b: Tensor) -> float:
    diff = np.abs(a.data.astype(np.float64) - b.data.astype(np.float64))
    denom = np.maximum(np.abs(b.data.astype(np.float64)), 1e-30)
    return float(np.max(diff / denom)) if diff.size else 0.0


def verify_cell(optimizer: str, model: str, build_kwargs: dict, precision: str,
                seed: int, iters: int = 10, batch: int = 2, workers: int = 4) -> list:
    """Train the same configuration under all four schedule variants and
    compare final parameters; returns human-readable failure strings."""
    variants = {}
    for name in ("baseline", "forward", "backward-serial", "backward-parallel"):
        variants[name] = (
            build_model(model, **build_kwargs, seed=seed, precision=precision),
            OptimizerPolicy(kind=optimizer, eta=0.01),
        )
    g0 = variants["baseline"][0]
    inputs = _iteration_inputs(g0, batch, seed, iters)

    for inp in inputs:
        run_baseline(*variants["baseline"], inp)
        run_forward_fusion(*variants["forward"], inp)
        run_backward_fusion(*variants["backward-serial"], inp)
        run_backward_fusion(*variants["backward-parallel"], inp, workers=workers)
    flush_pending_updates(*variants["forward"])

    cell = f"{optimizer}/{model}/{precision}/seed{seed}"
    failures = []
    base_params = variants["baseline"][0].parameters
    for name in ("forward", "backward-serial"):
        for p, q in zip(base_params, variants[name][0].parameters):
            if not _bitwise_equal(p.value, q.value):
                failures.append(f"{cell}: {name} parameter {p.id} not bitwise equal "
                                f"(max rel err {_max_rel_err(q.value, p.value):.3e})")
    for p, q in zip(base_params, variants["backward-parallel"][0].parameters):
        err = _max_rel_err(q.value, p.value)
        if err > 1e-12:
            failures.append(f"{cell}: parallel parameter {p.id} rel err {err:.3e} > 1e-12")
    return failures


def verify_grid(iters: int = 10, seeds=(0, 1, 2), workers: int = 4,
                batch: int = 2, precisions=("f32", "f64")) -> tuple:
    """Full equivalence grid; returns (cells checked, failure strings)."""
    cells = 0
    failures = []
    for optimizer in LOCAL_OPTIMIZERS:
        for model, kwargs in VERIFY_MODELS:
            for precision in precisions:
                for seed in seeds:
                    cells += 1
                    failures.extend(verify_cell(
                        optimizer, model, kwargs, precision, seed,
                        iters=iters, batch=batch, workers=workers))
    return cells, failures


# -- entry point for the CLI -------------------------------------------------

def run_bench(cfg: BenchConfig) -> dict:
    """Execute one harness mode; returns display lines, structured rows, and
    the process exit code."""
    if cfg.mode == "verify":
        cells, failures = verify_grid(workers=max(cfg.workers, 2))
        lines = [f"verified {cells} cells"]
        lines += failures if failures else ["all trajectories equivalent"]
        return {"mode": "verify", "lines": lines, "failures": failures,
                "cells": cells, "exit_code": 1 if failures else 0}

    if cfg.mode == "trace":
        graph = make_graph(cfg)
        policy = make_policy(cfg)
        inp = make_input(graph, cfg.batch, cfg.seed)
        for _ in range(max(cfg.warmup, 1)):  # reach steady state before recording
            _run_once(cfg.schedule, graph, policy, inp, cfg.workers)
        report = _run_once(cfg.schedule, graph, policy, inp, cfg.workers)
        lines = report.trace.export_lines()
        _maybe_write(cfg.out, lines)
        return {"mode": "trace", "lines": lines, "trace": report.trace, "exit_code": 0}

    if cfg.mode == "breakdown":
        rows = breakdown(cfg)
        lines = ["schedule\tstage\tms"]
        lines += [f"{s}\t{stage}\t{ms:.4f}" for s, stage, ms in rows]
        _maybe_write(cfg.out, lines)
        return {"mode": "breakdown", "lines": lines, "rows": rows, "exit_code": 0}

    if cfg.mode == "sweep":
        rows = sweep(cfg)
        lines = format_csv(rows)
        if cfg.out:
            emit_csv(rows, cfg.out)
        return {"mode": "sweep", "lines": lines, "rows": rows, "exit_code": 0}

    if cfg.mode == "optimizers":
        rows = compare_optimizers(cfg)
        lines = ["optimizer\tratio\tforward-fusion\tbackward-fusion"]
        lines += [f"{n}\t{r:.6f}\t{ff:.6f}\t{bf:.6f}" for n, r, ff, bf in rows]
        _maybe_write(cfg.out, lines)
        return {"mode": "optimizers", "lines": lines, "rows": rows, "exit_code": 0}

    # time
    stats = measure(cfg, cfg.schedule, cfg.batch)
    lines = [f"{stage}_ms={stats[stage]:.4f}" for stage in STAGES]
    lines.append(f"total_ms={stats['total']:.4f}")
    lines.append(f"median_ms={stats['median']:.4f}")
    if cfg.schedule != BASELINE:
        base = measure(cfg, BASELINE, cfg.batch)
        lines.append(f"baseline_total_ms={base['total']:.4f}")
        lines.append(f"speedup={base['total'] / stats['total']:.4f}")
    _maybe_write(cfg.out, lines)
    return {"mode": "time", "lines": lines, "stats": stats, "exit_code": 0}


def _maybe_write(path: str | None, lines) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
