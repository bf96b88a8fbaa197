"""Execution traces: ordered task records plus whole-tensor memory transactions.

A trace is what one training iteration leaves behind: which tasks ran (with
their dependency edges) and which tensor regions were read or written, in
order. The locality model replays the transactions; the critical-path
analyzer walks the task DAG.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

# task kinds
FORWARD = "forward-node"
BACKWARD = "backward-node"
OPT_STEP = "optimizer-step"
FLUSH = "flush"
CLIP_BARRIER = "clip-barrier"

# memory region classes
PARAM = "parameter"
GRAD = "gradient"
HISTORY = "history"
ACTIVATION = "activation"

READ = "R"
WRITE = "W"

INPUT_REGION = -1  # owner id for the model-input activation region

STEP_KINDS = (OPT_STEP, FLUSH)  # both apply a parameter's update


@dataclass(frozen=True)
class TaskRecord:
    task_id: int
    kind: str
    ref: int  # node id (forward/backward) or parameter id (steps/flush)
    deps: tuple
    seq: int


@dataclass(frozen=True)
class MemRecord:
    region: str
    owner: int
    access: str  # "R" | "W"
    seq: int


class ScheduleTrace:
    """Append-only record of one iteration under one schedule.

    Appends are serialized through a lock so parallel workers can share a
    trace; `seq` is a single counter across tasks and transactions, so the
    interleaving of a step with the gradient writes it depends on stays
    checkable.
    """

    def __init__(self, schedule: str):
        self.schedule = schedule
        self.tasks: list[TaskRecord] = []
        self.mem: list[MemRecord] = []
        self._lock = threading.Lock()
        self._next_seq = 0
        self._next_task_id = 0

    def new_task_id(self) -> int:
        with self._lock:
            tid = self._next_task_id
            self._next_task_id += 1
            return tid

    def record_task(self, task_id: int, kind: str, ref: int, deps=()) -> int:
        with self._lock:
            rec = TaskRecord(task_id, kind, ref, tuple(deps), self._next_seq)
            self._next_seq += 1
            self.tasks.append(rec)
        return task_id

    def add_task(self, kind: str, ref: int, deps=()) -> int:
        """Allocate an id and record the task in one go (serial call sites)."""
        tid = self.new_task_id()
        return self.record_task(tid, kind, ref, deps)

    def record_mem(self, region: str, owner: int, access: str) -> None:
        with self._lock:
            self.mem.append(MemRecord(region, owner, access, self._next_seq))
            self._next_seq += 1

    def tasks_of_kind(self, *kinds: str) -> list[TaskRecord]:
        return [t for t in self.tasks if t.kind in kinds]

    def mem_count(self, region: str | None = None, access: str | None = None) -> int:
        return sum(
            1
            for m in self.mem
            if (region is None or m.region == region) and (access is None or m.access == access)
        )

    def export_lines(self) -> list[str]:
        """Line-delimited form: `task <kind> <id> deps=<ids>` / `mem <class> <id> <R|W>`."""
        merged = sorted(self.tasks + self.mem, key=lambda r: r.seq)
        lines = []
        for rec in merged:
            if isinstance(rec, TaskRecord):
                deps = ",".join(str(d) for d in rec.deps)
                lines.append(f"task {rec.kind} {rec.task_id} deps={deps}")
            else:
                lines.append(f"mem {rec.region} {rec.owner} {rec.access}")
        return lines


def validate_trace(trace: ScheduleTrace, node_params: dict[int, list[int]] | None = None) -> None:
    """Replay a trace's bookkeeping and raise AssertionError on an illegal order.

    Checks that every task appears after all of its declared dependencies,
    and (given the graph's node -> parameter map) that each parameter's step
    appears after the backward task of every node that accumulates into it.
    """
    seq_of = {t.task_id: t.seq for t in trace.tasks}
    for t in trace.tasks:
        for d in t.deps:
            assert d in seq_of, f"task {t.task_id} depends on unrecorded task {d}"
            assert seq_of[d] < t.seq, f"task {t.task_id} recorded before its dependency {d}"
    if node_params is None:
        return
    backward_seq: dict[int, list[int]] = {}
    for t in trace.tasks_of_kind(BACKWARD):
        for pid in node_params.get(t.ref, ()):
            backward_seq.setdefault(pid, []).append(t.seq)
    for t in trace.tasks_of_kind(*STEP_KINDS):
        for s in backward_seq.get(t.ref, ()):
            assert t.seq > s, (
                f"step for parameter {t.ref} at seq {t.seq} precedes a gradient "
                f"accumulation at seq {s}"
            )
