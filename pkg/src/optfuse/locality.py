"""Locality and parallelism analysis over schedule traces.

Quantifies the two mechanisms that distinguish the schedules: data locality
(an LRU cache replayed over the whole-tensor memory transactions) and
parallelism (the longest dependency chain in the task DAG), plus the
analytical throughput model that ties saved time to batch size.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from . import trace as tr
from .errors import ConfigError

REGION_CLASSES = (tr.PARAM, tr.GRAD, tr.HISTORY, tr.ACTIVATION)


@dataclass
class CacheConfig:
    """Fully associative LRU cache; capacity counts tensor-region slots."""

    capacity: int
    policy: str = "lru"

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError(f"cache capacity must be >= 1, got {self.capacity}")
        if self.policy != "lru":
            raise ConfigError(f"only 'lru' is modeled, got {self.policy!r}")


@dataclass
class CacheReport:
    hits: dict = field(default_factory=lambda: {c: 0 for c in REGION_CLASSES})
    misses: dict = field(default_factory=lambda: {c: 0 for c in REGION_CLASSES})

    @property
    def total_misses(self) -> int:
        return sum(self.misses.values())

    def accesses(self, region: str) -> int:
        return self.hits[region] + self.misses[region]


class LRUCache:
    """Slot cache keyed by (region class, owner id); every access touches."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._slots: OrderedDict = OrderedDict()

    def access(self, region: str, owner: int) -> bool:
        """Touch one region; returns True on hit."""
        key = (region, owner)
        if key in self._slots:
            self._slots.move_to_end(key)
            return True
        if len(self._slots) >= self.capacity:
            self._slots.popitem(last=False)
        self._slots[key] = True
        return False


def simulate_cache(trace: tr.ScheduleTrace, config: CacheConfig,
                   cache: LRUCache | None = None) -> CacheReport:
    """Replay a trace's memory transactions through an LRU cache.

    Pass an existing cache to chain several iterations through one cache
    state; by default the cache starts cold.
    """
    if cache is None:
        cache = LRUCache(config.capacity)
    report = CacheReport()
    for rec in sorted(trace.mem, key=lambda m: m.seq):
        if cache.access(rec.region, rec.owner):
            report.hits[rec.region] += 1
        else:
            report.misses[rec.region] += 1
    return report


def transaction_count(trace: tr.ScheduleTrace, region: str,
                      access: str | None = None) -> int:
    """Number of memory transactions of one region class (optionally only
    reads or only writes). Fusion reorders transactions; it never changes
    these totals."""
    return trace.mem_count(region, access)


def critical_path_depth(trace: tr.ScheduleTrace) -> int:
    """Length (in tasks) of the longest dependency chain in the trace."""
    depth: dict[int, int] = {}
    best = 0
    for task in sorted(trace.tasks, key=lambda t: t.task_id):
        d = 1 + max((depth.get(dep, 0) for dep in task.deps), default=0)
        depth[task.task_id] = d
        best = max(best, d)
    return best


def predict_speedup(b: float, t_grad: float, t_opt: float, t_saved: float) -> float:
    """Analytical speedup of one iteration after saving `t_saved` ms.

    With gradient work proportional to the mini-batch size and the update
    work independent of it, s = (b*t_grad + t_opt) / (b*t_grad + t_opt -
    t_saved); strictly decreasing in b whenever any time is saved.
    """
    total = b * t_grad + t_opt
    if total <= 0:
        raise ValueError(f"iteration time must be positive, got {total}")
    if not 0 <= t_saved < total:
        raise ValueError(f"saved time {t_saved} must satisfy 0 <= t_saved < {total}")
    return total / (total - t_saved)
