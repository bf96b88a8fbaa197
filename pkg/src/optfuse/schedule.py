"""The three training schedules and the in-place update guard.

All three schedules drive identical arithmetic and therefore identical
parameter trajectories; they differ in when each parameter's update runs,
which tasks can overlap, and what the memory-transaction stream looks like:

* baseline: full forward, full backward, then every update in one
  serialized phase.
* forward-fusion: updates are deferred and applied lazily, each one right
  before the next forward execution of a layer using the parameter (or at
  an explicit flush).
* backward-fusion: each update runs during the backward pass as soon as the
  parameter's gradient is complete and nothing still reads its old value;
  with several workers those updates overlap the remaining backward tasks.
"""

from __future__ import annotations

import heapq
import threading
import time
from dataclasses import dataclass, field

from . import trace as tr
from .errors import ConfigError, GlobalInfoRequired
from .graph import Graph, Parameter
from .optim import OptimizerPolicy, clip_by_global_norm

BASELINE = "baseline"
FORWARD_FUSION = "forward-fusion"
BACKWARD_FUSION = "backward-fusion"
SCHEDULES = (BASELINE, FORWARD_FUSION, BACKWARD_FUSION)


@dataclass
class StepReport:
    """What one training iteration did: loss, trace, and per-stage wall time.

    Updates fused into another stage are billed to that stage, so fused
    schedules report an optimizer stage of zero.
    """

    schedule: str
    loss: float
    trace: tr.ScheduleTrace
    stage_ms: dict = field(default_factory=dict)
    pending_updates: int = 0

    @property
    def total_ms(self) -> float:
        return sum(self.stage_ms.values())


def check_inplace_safety(param: Parameter, graph: Graph) -> bool:
    """True iff `param` may be updated in place right now: its gradient is
    fully accumulated and no incomplete backward task still reads its old
    value. Backward tasks count as readers until they complete, whatever
    their internal progress."""
    return param.count == 0 and not graph._value_readers.get(param.id)


def _reject_newton(policy: OptimizerPolicy) -> None:
    if policy.kind == "newton":
        raise ConfigError("newton has no per-parameter step and cannot drive a schedule")


def _ms(seconds: float) -> float:
    return seconds * 1000.0


def run_baseline(graph: Graph, policy: OptimizerPolicy, inp) -> StepReport:
    """Three contiguous phases; the update phase is one serialized chain."""
    _reject_newton(policy)
    policy.begin_iteration()
    trace = tr.ScheduleTrace(BASELINE)

    t0 = time.perf_counter()
    loss = graph.forward(inp, trace)
    t1 = time.perf_counter()
    graph.backward(trace)
    t2 = time.perf_counter()

    prev = trace.tasks[-1].task_id  # last backward task
    if policy.clip_norm is not None:
        clip_by_global_norm(graph, policy.clip_norm, trace)
        prev = trace.add_task(tr.CLIP_BARRIER, -1, (prev,))
    for p in reversed(graph.parameters):
        tid = trace.new_task_id()
        policy.step(p, trace=trace)
        trace.record_task(tid, tr.OPT_STEP, p.id, (prev,))
        prev = tid
    t3 = time.perf_counter()

    return StepReport(BASELINE, loss, trace, {
        "forward": _ms(t1 - t0), "backward": _ms(t2 - t1), "optimizer": _ms(t3 - t2)})


def run_forward_fusion(graph: Graph, policy: OptimizerPolicy, inp) -> StepReport:
    """Lazy schedule: apply deferred updates just before each layer's forward.

    The `updated` latch guarantees one application per parameter even when a
    layer (and so its parameter) is used several times. New gradients are
    accumulated and deferred again at the end of backward, tagged with this
    iteration's step index so a later application is arithmetically
    identical to an eager one. Global-information transforms are fine: the
    clip runs once all gradients exist, before anything is applied.
    """
    _reject_newton(policy)
    policy.begin_iteration()
    trace = tr.ScheduleTrace(FORWARD_FUSION)

    def apply_pending(node):
        extra = []
        for p in node.params:
            if p.pending and not p.updated:
                tid = trace.new_task_id()
                policy.step(p, step_t=graph.pending_step_t, trace=trace)
                trace.record_task(tid, tr.OPT_STEP, p.id, ())
                p.updated = True
                extra.append(tid)
        return extra

    t0 = time.perf_counter()
    loss = graph.forward(inp, trace, pre_node_hook=apply_pending)
    t1 = time.perf_counter()
    graph.backward(trace)
    if policy.clip_norm is not None:
        clip_by_global_norm(graph, policy.clip_norm, trace)
        trace.add_task(tr.CLIP_BARRIER, -1, (trace.tasks[-1].task_id,))
    for p in graph.parameters:
        p.pending = True
        p.updated = False
    graph.pending_step_t = policy.t
    t2 = time.perf_counter()

    return StepReport(FORWARD_FUSION, loss, trace, {
        "forward": _ms(t1 - t0), "backward": _ms(t2 - t1), "optimizer": 0.0},
        pending_updates=sum(1 for p in graph.parameters if p.pending))


def flush_pending_updates(graph: Graph, policy: OptimizerPolicy,
                          trace: tr.ScheduleTrace | None = None) -> int:
    """Apply every deferred update exactly as the next forward pass would
    (same order, same step index); afterwards observed parameter values
    match the eager trajectory. Idempotent."""
    flushed = 0
    prev = None
    for layer in graph.layers:
        p = layer.param
        if not p.pending:
            continue
        if trace is not None:
            tid = trace.new_task_id()
            policy.step(p, step_t=graph.pending_step_t, trace=trace)
            trace.record_task(tid, tr.FLUSH, p.id, () if prev is None else (prev,))
            prev = tid
        else:
            policy.step(p, step_t=graph.pending_step_t)
        flushed += 1
    return flushed


def run_backward_fusion(graph: Graph, policy: OptimizerPolicy, inp,
                        workers: int = 1) -> StepReport:
    """Eager schedule: update each parameter as soon as it is safe.

    During backward, each gradient contribution decrements the parameter's
    usage count; when the count reaches zero and no incomplete backward task
    still reads the old value, the update runs immediately. With more than
    one worker, update tasks overlap backward tasks of other nodes. Raises
    GlobalInfoRequired (mutating nothing) for policies or transforms that
    must see all gradients first.
    """
    if policy.requires_global_info:
        raise GlobalInfoRequired(
            f"backward-fusion cannot host {policy.kind!r}"
            + (" with global-norm clipping" if policy.clip_norm is not None else ""))
    _reject_newton(policy)
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    policy.begin_iteration()
    trace = tr.ScheduleTrace(BACKWARD_FUSION)

    t0 = time.perf_counter()
    loss = graph.forward(inp, trace)
    t1 = time.perf_counter()

    tasks = graph.backward_tasks(trace)
    if workers == 1:
        for task in tasks:
            task.run(graph, trace)
            _fuse_ready_steps(task, graph, policy, trace)
    else:
        _ParallelRunner(graph, policy, trace, tasks, workers).drain()
    t2 = time.perf_counter()

    return StepReport(BACKWARD_FUSION, loss, trace, {
        "forward": _ms(t1 - t0), "backward": _ms(t2 - t1), "optimizer": 0.0})


def _fuse_ready_steps(task, graph: Graph, policy: OptimizerPolicy,
                      trace: tr.ScheduleTrace) -> None:
    for p in task.node.params:
        if check_inplace_safety(p, graph):
            tid = trace.new_task_id()
            policy.step(p, trace=trace)
            trace.record_task(tid, tr.OPT_STEP, p.id, (task.task_id,))


class _ParallelRunner:
    """Worker pool draining a dependency-respecting ready queue.

    Ties among ready tasks break toward the lowest task id (creation order),
    so one worker reproduces the serial order. Completion handling runs
    under the pool lock: that is where update tasks are spawned, so the
    safety check and the spawn are atomic with respect to other completions.
    """

    def __init__(self, graph, policy, trace, backward_tasks, workers):
        self.graph = graph
        self.policy = policy
        self.trace = trace
        self.workers = workers
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._ready: list = []
        self._waiting: dict[int, tuple[set, object]] = {}
        # Tasks already recorded (the forward pass) are satisfied dependencies.
        self._completed: set[int] = {t.task_id for t in trace.tasks}
        self._outstanding = 0
        self._failure: BaseException | None = None
        with self._cond:
            for task in backward_tasks:
                self._submit(task.task_id, task.deps, task)

    @staticmethod
    def _priority(task_id, payload):
        # Ready updates run before ready backward tasks (apply as early as
        # possible); within a class, lowest id first, which makes a single
        # worker reproduce the serial interleaving.
        return (0 if isinstance(payload, _StepTask) else 1, task_id)

    def _submit(self, task_id, deps, payload) -> None:
        remaining = {d for d in deps if d not in self._completed}
        self._outstanding += 1
        if remaining:
            self._waiting[task_id] = (remaining, payload)
        else:
            heapq.heappush(self._ready, (*self._priority(task_id, payload), payload))
            self._cond.notify()

    def _on_complete(self, task_id, payload) -> None:
        if not isinstance(payload, _StepTask):
            # backward task finished: spawn updates that just became safe
            for p in payload.node.params:
                if check_inplace_safety(p, self.graph):
                    tid = self.trace.new_task_id()
                    self._submit(tid, (task_id,), _StepTask(p, (task_id,), tid))
        self._completed.add(task_id)
        for wid, (remaining, wpayload) in list(self._waiting.items()):
            remaining.discard(task_id)
            if not remaining:
                del self._waiting[wid]
                heapq.heappush(self._ready, (*self._priority(wid, wpayload), wpayload))
                self._cond.notify()
        self._outstanding -= 1
        if self._outstanding == 0:
            self._cond.notify_all()

    def _worker(self) -> None:
        while True:
            with self._cond:
                while not self._ready and self._outstanding > 0 and self._failure is None:
                    self._cond.wait()
                if self._failure is not None or (not self._ready and self._outstanding == 0):
                    self._cond.notify_all()
                    return
                _, task_id, payload = heapq.heappop(self._ready)
            try:
                if isinstance(payload, _StepTask):
                    self.policy.step(payload.param, trace=self.trace)
                    self.trace.record_task(payload.task_id, tr.OPT_STEP,
                                           payload.param.id, payload.deps)
                else:
                    payload.run(self.graph, self.trace)
            except BaseException as e:  # propagate to drain()
                with self._cond:
                    self._failure = e
                    self._cond.notify_all()
                return
            with self._cond:
                self._on_complete(task_id, payload)

    def drain(self) -> None:
        threads = [threading.Thread(target=self._worker, daemon=True)
                   for _ in range(self.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._failure is not None:
            raise self._failure


class _StepTask:
    __slots__ = ("param", "deps", "task_id")

    def __init__(self, param, deps, task_id):
        self.param = param
        self.deps = deps
        self.task_id = task_id
