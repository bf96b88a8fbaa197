"""Update policies: per-parameter step rules plus the global-norm clip.

Every rule maps (gradient, history, step index) to an in-place increment of
the parameter; except for Newton's method, a parameter's update never looks
at any other parameter, which is what lets the schedulers reorder updates
freely. Momentum keeps the running buffer v(t) = alpha*v(t-1) + g instead of
the whole gradient history; the equivalence of the two forms is covered by
tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import trace as tr
from .errors import ConfigError, NumericError, SchedulingContractError
from .graph import Graph, Parameter
from .tensor import Tensor, axpy_inplace

KINDS = ("sgd", "sgd-momentum", "newton", "adagrad", "rmsprop", "adadelta", "adam")

_HISTORY_SLOTS = {
    "sgd": (),
    "sgd-momentum": ("momentum",),
    "adagrad": ("sum_sq",),
    "rmsprop": ("square_avg",),
    "adadelta": ("square_avg", "acc_delta"),
    "adam": ("exp_avg", "exp_avg_sq"),
}


@dataclass
class OptimizerPolicy:
    """One update rule and its constants.

    `t` counts begun iterations; it feeds the bias corrections and must be
    advanced exactly once per training iteration by the scheduler.
    """

    kind: str = "sgd"
    eta: float = 0.01
    alpha: float = 0.9          # momentum decay
    weight_decay: float = 0.0
    epsilon: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    clip_norm: float | None = None
    t: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}, expected one of {KINDS}")
        if self.eta <= 0:
            raise ConfigError(f"step size must be > 0, got {self.eta}")
        if not 0 <= self.alpha < 1:
            raise ConfigError(f"momentum decay must be in [0, 1), got {self.alpha}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")

    @property
    def requires_global_info(self) -> bool:
        """True iff no parameter may be updated before all gradients exist."""
        return self.clip_norm is not None or self.kind == "newton"

    def history_slots(self) -> tuple:
        return _HISTORY_SLOTS.get(self.kind, ())

    def begin_iteration(self) -> None:
        self.t += 1

    def step(self, param: Parameter, step_t: int | None = None,
             trace: tr.ScheduleTrace | None = None) -> None:
        """Apply this policy's update to one parameter, in place.

        Reads the accumulated gradient, updates the history slots, resets
        the gradient to zero, and increments the value by the step vector.
        Requires the gradient to be complete (usage count back at zero).
        """
        if self.kind == "newton":
            raise ConfigError("newton needs the full Hessian and has no per-parameter step")
        if param.count != 0:
            raise SchedulingContractError(
                f"parameter {param.id} still has {param.count} pending gradient "
                f"contributions")
        t = self.t if step_t is None else step_t

        slots = self.history_slots()
        for name in slots:
            if name not in param.history:
                param.history[name] = Tensor(
                    param.value.shape, np.zeros_like(param.value.data))

        if trace is not None:
            trace.record_mem(tr.PARAM, param.id, tr.READ)
            trace.record_mem(tr.GRAD, param.id, tr.READ)
            if slots:
                trace.record_mem(tr.HISTORY, param.id, tr.READ)

        g = param.grad.data
        if self.weight_decay > 0:
            g = g + self.weight_decay * param.value.data
        delta = self._delta(param, g, t)

        if trace is not None:
            if slots:
                trace.record_mem(tr.HISTORY, param.id, tr.WRITE)
            trace.record_mem(tr.GRAD, param.id, tr.WRITE)
        param.grad.data[:] = 0
        axpy_inplace(param.value, 1.0, Tensor(param.value.shape, delta))
        if trace is not None:
            trace.record_mem(tr.PARAM, param.id, tr.WRITE)
        param.pending = False

    def _delta(self, param: Parameter, g: np.ndarray, t: int) -> np.ndarray:
        kind = self.kind
        if kind == "sgd":
            return -self.eta * g
        if kind == "sgd-momentum":
            buf = param.history["momentum"].data
            buf *= self.alpha
            buf += g
            return -self.eta * buf
        if kind == "adagrad":
            acc = param.history["sum_sq"].data
            acc += g * g
            return -self.eta * g / (np.sqrt(acc) + self.epsilon)
        if kind == "rmsprop":
            sq = param.history["square_avg"].data
            sq[:] = self.rho * sq + (1 - self.rho) * (g * g)
            return -self.eta * g / (np.sqrt(sq) + self.epsilon)
        if kind == "adadelta":
            sq = param.history["square_avg"].data
            acc = param.history["acc_delta"].data
            sq[:] = self.rho * sq + (1 - self.rho) * (g * g)
            dx = np.sqrt(acc + self.epsilon) / np.sqrt(sq + self.epsilon) * g
            acc[:] = self.rho * acc + (1 - self.rho) * (dx * dx)
            return -self.eta * dx
        # adam
        m = param.history["exp_avg"].data
        v = param.history["exp_avg_sq"].data
        m[:] = self.beta1 * m + (1 - self.beta1) * g
        v[:] = self.beta2 * v + (1 - self.beta2) * (g * g)
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        return -self.eta * m_hat / (np.sqrt(v_hat) + self.epsilon)


def clip_by_global_norm(graph: Graph, max_norm: float,
                        trace: tr.ScheduleTrace | None = None) -> float:
    """Scale every gradient by max_norm/norm when the joint L2 norm exceeds
    max_norm; returns the applied factor (1.0 when nothing was clipped).

    Reads all gradients before touching any of them, so a schedule hosting
    this transform needs global information.
    """
    total = 0.0
    for p in graph.parameters:
        if trace is not None:
            trace.record_mem(tr.GRAD, p.id, tr.READ)
        total += float(np.dot(p.grad.data, p.grad.data))
    norm = float(np.sqrt(total))
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for p in graph.parameters:
        p.grad.data *= factor
        if trace is not None:
            trace.record_mem(tr.GRAD, p.id, tr.WRITE)
    return factor


def newton_step(theta: Tensor, grad_fn, hessian_fn, eta: float = 1.0) -> Tensor:
    """One full-Hessian update: theta - eta * H(theta)^-1 grad(theta).

    A standalone validator for toy problems (dimension <= 16); it never
    participates in the graph schedulers because the Hessian couples all
    coordinates.
    """
    d = theta.size
    if d > 16:
        raise ConfigError(f"newton step is limited to dimension <= 16, got {d}")
    g = np.asarray(grad_fn(theta.data.copy()), dtype=np.float64).reshape(d)
    h = np.asarray(hessian_fn(theta.data.copy()), dtype=np.float64).reshape(d, d)
    try:
        direction = np.linalg.solve(h, g)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"Hessian is singular: {e}") from e
    if not np.all(np.isfinite(direction)):
        raise NumericError("Hessian solve produced non-finite values")
    new = theta.data.astype(np.float64) - eta * direction
    return Tensor(theta.shape, new.astype(theta.data.dtype))
