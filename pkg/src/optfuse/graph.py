"""Dynamic computational graph: eager forward tape and reverse-mode backward.

The model structure (layers and their parameter bindings) is static, but the
tape of operator nodes is rebuilt on every forward pass, so a scheduler only
ever sees nodes as they execute. Each node's backward is one atomic task
that produces gradients for all of its inputs; that task is the granularity
at which the in-place update guard reasons about readers of a parameter's
old value.
"""

from __future__ import annotations

import numpy as np

from . import trace as tr
from .errors import ConfigError, ShapeError, StateError
from .tensor import Tensor, matmul_arrays, uniform, zeros

LINEAR = "linear"
ELEMENTWISE = "elementwise"
REDUCE_TO_LOSS = "reduce-to-loss"
CLIP_BARRIER = "clip-barrier"

MODELS = ("chain", "shared-chain", "mul-probe")


class Parameter:
    """A trainable tensor with its gradient accumulator and optimizer state.

    `count` tracks how many forward usages still owe a gradient contribution
    this iteration; `updated` is the once-per-iteration latch used by the
    lazy (forward-fused) schedule; `pending` marks a deferred update.
    """

    def __init__(self, pid: int, value: Tensor):
        self.id = pid
        self.value = value
        self.grad = zeros(value.shape, value.precision)
        self.history: dict[str, Tensor] = {}
        self.count = 0
        self.updated = False
        self.pending = False

    def __repr__(self) -> str:
        return f"Parameter(id={self.id}, shape={self.value.shape})"


class _Layer:
    """Static model structure: one tape node per iteration."""

    def __init__(self, op: str, param: Parameter, terminal: bool):
        self.op = op  # "linear" | "mul"
        self.param = param
        self.terminal = terminal

    @property
    def kind(self) -> str:
        return REDUCE_TO_LOSS if self.terminal else LINEAR


class OpNode:
    """One executed operator on the iteration tape."""

    def __init__(self, nid: int, layer: _Layer, input_ids: tuple):
        self.id = nid
        self.layer = layer
        self.kind = layer.kind
        self.params = [layer.param]
        self.input_ids = input_ids
        self.fwd_task_id: int | None = None
        # saved for backward
        self._x: np.ndarray | None = None
        self._mask: np.ndarray | None = None


class BackwardTask:
    """Atomic backward of one node: accumulates parameter gradients, then
    computes the gradient flowing to the node's input."""

    def __init__(self, node: OpNode, task_id: int | None, deps: tuple):
        self.node = node
        self.task_id = task_id
        self.deps = deps

    def run(self, graph: "Graph", trace: tr.ScheduleTrace | None, post_grad_hook=None) -> None:
        node = self.node
        layer = node.layer
        p = layer.param

        if trace is not None:
            if layer.op == "linear":
                trace.record_mem(tr.ACTIVATION, node.id, tr.READ)  # relu mask
            src = node.input_ids[0] if node.input_ids else tr.INPUT_REGION
            trace.record_mem(tr.ACTIVATION, src, tr.READ)

        gout = None if layer.terminal else graph._pending_out_grad.pop(node.id)

        if layer.op == "linear":
            gm = node._mask if gout is None else gout * node._mask
            contrib = matmul_arrays(node._x.T, gm).reshape(-1)
        else:  # mul: loss term is sum(theta * x)
            gm = None
            contrib = node._x if gout is None else gout * node._x

        if trace is not None:
            trace.record_mem(tr.GRAD, p.id, tr.READ)
        p.grad.data += contrib
        if trace is not None:
            trace.record_mem(tr.GRAD, p.id, tr.WRITE)
        p.count -= 1
        if post_grad_hook is not None:
            post_grad_hook(p, node)

        # Gradient w.r.t. the node input reads the parameter's *current*
        # value; it must be the task's last transaction so a fused step's
        # read of the same parameter can land adjacent to it.
        if trace is not None:
            trace.record_mem(tr.PARAM, p.id, tr.READ)
        if layer.op == "linear":
            gin = matmul_arrays(gm, p.value.view().T)
        else:
            gin = p.value.data.copy()

        if node.input_ids:
            graph._pending_out_grad[node.input_ids[0]] = gin
        else:
            graph._input_grad = gin

        graph._value_readers.get(p.id, set()).discard(node.id)
        if trace is not None:
            trace.record_task(self.task_id, tr.BACKWARD, node.id, self.deps)


class Graph:
    """The training graph: parameter registry plus the per-iteration tape."""

    def __init__(self, model: str, layers: list[_Layer], parameters: list[Parameter],
                 width: int, precision: str):
        self.model = model
        self.layers = layers
        self.parameters = parameters
        self.width = width
        self.precision = precision
        # per-iteration state
        self.tape: list[OpNode] = []
        self.pending_step_t: int | None = None
        self._forward_done = False
        self._backward_built = False
        self._pending_out_grad: dict[int, np.ndarray] = {}
        self._value_readers: dict[int, set[int]] = {}
        self._input_grad: np.ndarray | None = None

    # -- structure ---------------------------------------------------------

    def input_shape(self, batch: int = 1) -> tuple:
        if self.model == "mul-probe":
            return (self.width,)
        return (batch, self.width)

    def node_params(self) -> dict[int, list[int]]:
        return {i: [layer.param.id] for i, layer in enumerate(self.layers)}

    @property
    def input_grad(self) -> Tensor | None:
        if self._input_grad is None:
            return None
        return Tensor(self._input_grad.shape, self._input_grad.reshape(-1).copy())

    # -- execution ---------------------------------------------------------

    def forward(self, inp: Tensor, trace: tr.ScheduleTrace | None = None,
                pre_node_hook=None) -> float:
        """Run all layers in order, rebuilding the tape; returns the scalar loss.

        Increments each parameter's usage count once per executing node that
        binds it. `pre_node_hook(node)` runs before the node executes and may
        return extra task ids the node's forward task then depends on.
        """
        self._check_input(inp)
        self.tape = []
        self._forward_done = False
        self._backward_built = False
        self._pending_out_grad = {}
        self._value_readers = {}
        self._input_grad = None
        for p in self.parameters:
            p.count = 0

        x = inp.view()
        prev_task: int | None = None
        loss = 0.0
        for i, layer in enumerate(self.layers):
            node = OpNode(i, layer, (i - 1,) if i > 0 else ())
            self.tape.append(node)
            extra_deps = pre_node_hook(node) if pre_node_hook is not None else None
            p = layer.param
            if trace is not None:
                trace.record_mem(tr.PARAM, p.id, tr.READ)
                trace.record_mem(tr.ACTIVATION, i - 1 if i > 0 else tr.INPUT_REGION, tr.READ)
            p.count += 1

            try:
                x, out_scalar = self._execute(node, x)
            except ShapeError as e:
                raise ShapeError(f"node {i} ({layer.op}): {e}") from e

            if trace is not None:
                trace.record_mem(tr.ACTIVATION, i, tr.WRITE)
                deps = [] if prev_task is None else [prev_task]
                if extra_deps:
                    deps.extend(extra_deps)
                prev_task = trace.add_task(tr.FORWARD, i, deps)
                node.fwd_task_id = prev_task
            if layer.terminal:
                loss = out_scalar

        self._forward_done = True
        return loss

    def _execute(self, node: OpNode, x: np.ndarray):
        layer = node.layer
        if layer.op == "linear":
            pre = matmul_arrays(x, layer.param.value.view())
            mask = (pre > 0).astype(pre.dtype)
            node._x = x
            node._mask = mask
            out = pre * mask
            return out, float(out.sum()) if layer.terminal else None
        node._x = x.copy()
        out = layer.param.value.data * x
        return out, float(out.sum())

    def _check_input(self, inp: Tensor) -> None:
        if self.model == "mul-probe":
            if inp.shape != (self.width,):
                raise ShapeError(
                    f"node 0 (mul): expected input shape ({self.width},), got {inp.shape}")
        else:
            if len(inp.shape) != 2 or inp.shape[1] != self.width or inp.shape[0] < 1:
                raise ShapeError(
                    f"node 0 (linear): expected input shape (batch, {self.width}), "
                    f"got {inp.shape}")

    def backward_tasks(self, trace: tr.ScheduleTrace | None = None) -> list[BackwardTask]:
        """Reverse-order task list with explicit dependencies; also arms the
        per-parameter old-value reader sets consulted by the in-place guard."""
        if not self._forward_done:
            raise StateError("backward requires a completed forward pass this iteration")
        if self._backward_built:
            raise StateError("backward already consumed this iteration's tape")
        self._backward_built = True
        self._forward_done = False
        self._value_readers = {p.id: set() for p in self.parameters}
        for node in self.tape:
            self._value_readers[node.layer.param.id].add(node.id)

        tasks = []
        prev_tid = None
        for node in reversed(self.tape):
            if trace is not None:
                tid = trace.new_task_id()
            else:
                tid = None
            if prev_tid is not None:
                deps = (prev_tid,)
            elif node.fwd_task_id is not None:
                deps = (node.fwd_task_id,)
            else:
                deps = ()
            tasks.append(BackwardTask(node, tid, deps))
            prev_tid = tid
        return tasks

    def backward(self, trace: tr.ScheduleTrace | None = None, post_grad_hook=None,
                 node_done_hook=None) -> None:
        """Serial reverse pass: runs every backward task in reverse topological
        order, accumulating into each parameter's gradient."""
        for task in self.backward_tasks(trace):
            task.run(self, trace, post_grad_hook)
            if node_done_hook is not None:
                node_done_hook(task.node)

    def zero_grads(self, trace: tr.ScheduleTrace | None = None) -> None:
        for p in self.parameters:
            p.grad.data[:] = 0
            p.count = 0
            if trace is not None:
                trace.record_mem(tr.GRAD, p.id, tr.WRITE)


def _param_seed(seed: int, pid: int) -> int:
    return int(np.random.SeedSequence([seed, pid]).generate_state(1)[0])


def build_model(model: str, layers: int = 1, width: int = 1, share_groups=None,
                seed: int = 0, precision: str = "f32", init_range=None) -> Graph:
    """Construct one of the synthetic training graphs.

    chain(n, w): n linear+relu layers of width w, last one reducing to the
    scalar loss. shared-chain additionally binds one parameter to every
    layer of each share group. mul-probe is the single node
    loss = sum(theta * x).
    """
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}, expected one of {MODELS}")
    if layers < 1 or width < 1:
        raise ConfigError(f"layers and width must be >= 1, got {layers}, {width}")

    if model == "mul-probe":
        lo, hi = init_range if init_range else (0.5, 1.5)
        p = Parameter(0, uniform((width,), lo, hi, _param_seed(seed, 0), precision))
        return Graph(model, [_Layer("mul", p, terminal=True)], [p], width, precision)

    owner = list(range(layers))  # layer index -> owning layer of its parameter
    if model == "shared-chain":
        groups = share_groups if share_groups is not None else [[0, min(2, layers - 1)]]
        seen: set[int] = set()
        for group in groups:
            if len(group) < 2:
                raise ConfigError(f"share group {group} needs at least two layers")
            for idx in group:
                if not 0 <= idx < layers:
                    raise ConfigError(f"share group index {idx} out of range for {layers} layers")
                if idx in seen:
                    raise ConfigError(f"layer {idx} appears in more than one share group")
                seen.add(idx)
            head = min(group)
            for idx in group:
                owner[idx] = head
    elif share_groups is not None:
        raise ConfigError("share_groups only applies to model 'shared-chain'")

    lo, hi = init_range if init_range else (-1.0 / width ** 0.5, 1.0 / width ** 0.5)
    params: dict[int, Parameter] = {}
    model_layers = []
    for i in range(layers):
        if owner[i] not in params:
            pid = len(params)
            params[owner[i]] = Parameter(
                pid, uniform((width, width), lo, hi, _param_seed(seed, pid), precision))
        model_layers.append(_Layer("linear", params[owner[i]], terminal=(i == layers - 1)))
    return Graph(model, model_layers, list(params.values()), width, precision)
