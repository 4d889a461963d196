"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built eagerly: every op below computes its value immediately and
registers a closure that pushes the output gradient back to its inputs.
``backward`` walks the graph once in reverse topological order, so each
closure runs exactly once per call.

Values are numpy float64 arrays throughout: 0-d for scalars (losses),
1-d for vectors (biases, probability vectors), 2-d for feature maps laid
out with one column per sequence position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractError,
    DeterminismError,
    DimensionError,
    DivergenceError,
    EmptyContextError,
    EmptyInputError,
)


class Node:
    """One vertex of the computation graph.

    ``value`` is a float64 ndarray. ``grad`` has the same shape once
    ``backward`` has run over a graph containing this node; before that it
    is None. Leaves (parameters, constants) have no inputs and no backward
    closure.
    """

    __slots__ = ("value", "grad", "op", "inputs", "name", "_backward", "_ran")

    def __init__(self, value, op: str = "leaf", inputs: tuple = (), name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self.inputs = tuple(inputs)
        self.name = name
        self._backward = None
        self._ran = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or self.op
        return f"Node({tag}, shape={self.value.shape})"


def param(value, name: str | None = None) -> Node:
    """Create a trainable leaf node."""
    return Node(value, op="param", name=name)


def constant(value, name: str | None = None) -> Node:
    """Create a leaf node that the optimizer never touches."""
    return Node(value, op="const", name=name)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Fan-balanced uniform init: +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _accum(node: Node, g) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _require_2d(v: np.ndarray, what: str) -> None:
    if v.ndim != 2:
        raise DimensionError(f"{what}: expected a 2-d array, got shape {v.shape}")


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Node, b: Node) -> Node:
    """Matrix product. Accepts (m,k)@(k,n) -> (m,n) and (m,k)@(k,) -> (m,)."""
    va, vb = a.value, b.value
    _require_2d(va, "matmul lhs")
    if vb.ndim not in (1, 2):
        raise DimensionError(f"matmul rhs: expected 1-d or 2-d, got shape {vb.shape}")
    if va.shape[1] != vb.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {va.shape} @ {vb.shape}")
    out = Node(va @ vb, "matmul", (a, b))

    def _bw(g):
        if vb.ndim == 2:
            _accum(a, g @ vb.T)
            _accum(b, va.T @ g)
        else:
            _accum(a, np.outer(g, vb))
            _accum(b, va.T @ g)

    out._backward = _bw
    return out


def vecmat(v: Node, m: Node) -> Node:
    """Row-vector times matrix: (k,) @ (k,n) -> (n,)."""
    vv, vm = v.value, m.value
    if vv.ndim != 1:
        raise DimensionError(f"vecmat lhs: expected 1-d, got {vv.shape}")
    _require_2d(vm, "vecmat rhs")
    if vv.shape[0] != vm.shape[0]:
        raise DimensionError(f"vecmat: inner dims differ, {vv.shape} @ {vm.shape}")
    out = Node(vv @ vm, "vecmat", (v, m))

    def _bw(g):
        _accum(v, vm @ g)
        _accum(m, np.outer(vv, g))

    out._backward = _bw
    return out


def add(a: Node, b: Node) -> Node:
    """Elementwise sum of two equal-shape nodes."""
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = Node(a.value + b.value, "add", (a, b))

    def _bw(g):
        _accum(a, g)
        _accum(b, g)

    out._backward = _bw
    return out


def mul(a: Node, b: Node) -> Node:
    """Hadamard product of two equal-shape nodes."""
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = Node(a.value * b.value, "mul", (a, b))

    def _bw(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    out._backward = _bw
    return out


def scale(a: Node, s: float) -> Node:
    """Multiply by a python scalar."""
    s = float(s)
    out = Node(a.value * s, "scale", (a,))
    out._backward = lambda g: _accum(a, g * s)
    return out


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    out = Node(t, "tanh", (a,))
    out._backward = lambda g: _accum(a, g * (1.0 - t * t))
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    s = _sigmoid_stable(a.value)
    out = Node(s, "sigmoid", (a,))
    out._backward = lambda g: _accum(a, g * s * (1.0 - s))
    return out


def log(a: Node) -> Node:
    """Natural log. The whole input must be strictly positive."""
    if np.any(a.value <= 0.0):
        raise ContractError("log: input must be strictly positive")
    out = Node(np.log(a.value), "log", (a,))
    out._backward = lambda g: _accum(a, g / a.value)
    return out


def clamp_min(a: Node, floor: float) -> Node:
    """max(x, floor) elementwise; gradient passes only where x > floor."""
    floor = float(floor)
    keep = a.value > floor
    out = Node(np.maximum(a.value, floor), "clamp_min", (a,))
    out._backward = lambda g: _accum(a, g * keep)
    return out


def gate_mix(g_node: Node, u: Node, o: Node) -> Node:
    """Highway-style blend g*u + (1-g)*o with all three operands equal shape."""
    if not (g_node.value.shape == u.value.shape == o.value.shape):
        raise DimensionError("gate_mix: operand shapes must match")
    gv = g_node.value
    out = Node(gv * u.value + (1.0 - gv) * o.value, "gate_mix", (g_node, u, o))

    def _bw(g):
        _accum(g_node, g * (u.value - o.value))
        _accum(u, g * gv)
        _accum(o, g * (1.0 - gv))

    out._backward = _bw
    return out


def add_bias(mat: Node, bias: Node) -> Node:
    """Add a length-d bias vector to every column of a d x m matrix."""
    vm, vb = mat.value, bias.value
    _require_2d(vm, "add_bias matrix")
    if vb.ndim != 1 or vb.shape[0] != vm.shape[0]:
        raise DimensionError(f"add_bias: bias {vb.shape} does not fit matrix {vm.shape}")
    out = Node(vm + vb[:, None], "add_bias", (mat, bias))

    def _bw(g):
        _accum(mat, g)
        _accum(bias, g.sum(axis=1))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# structural ops


def transpose(a: Node) -> Node:
    _require_2d(a.value, "transpose")
    out = Node(np.ascontiguousarray(a.value.T), "transpose", (a,))
    out._backward = lambda g: _accum(a, g.T)
    return out


def concat_rows(nodes: list[Node]) -> Node:
    """Stack 2-d nodes vertically; all must share the column count."""
    if not nodes:
        raise ContractError("concat_rows: need at least one input")
    cols = nodes[0].value.shape[1] if nodes[0].value.ndim == 2 else None
    for n in nodes:
        _require_2d(n.value, "concat_rows")
        if n.value.shape[1] != cols:
            raise DimensionError("concat_rows: column counts differ")
    out = Node(np.concatenate([n.value for n in nodes], axis=0), "concat_rows", tuple(nodes))
    offsets = np.cumsum([0] + [n.value.shape[0] for n in nodes])

    def _bw(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            _accum(n, g[lo:hi, :])

    out._backward = _bw
    return out


def concat_cols(nodes: list[Node]) -> Node:
    """Stack 2-d nodes side by side; all must share the row count."""
    if not nodes:
        raise ContractError("concat_cols: need at least one input")
    rows = nodes[0].value.shape[0] if nodes[0].value.ndim == 2 else None
    for n in nodes:
        _require_2d(n.value, "concat_cols")
        if n.value.shape[0] != rows:
            raise DimensionError("concat_cols: row counts differ")
    out = Node(np.concatenate([n.value for n in nodes], axis=1), "concat_cols", tuple(nodes))
    offsets = np.cumsum([0] + [n.value.shape[1] for n in nodes])

    def _bw(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            _accum(n, g[:, lo:hi])

    out._backward = _bw
    return out


def concat_vec(nodes: list[Node]) -> Node:
    """Concatenate 1-d nodes into one longer vector."""
    if not nodes:
        raise ContractError("concat_vec: need at least one input")
    for n in nodes:
        if n.value.ndim != 1:
            raise DimensionError("concat_vec: inputs must be 1-d")
    out = Node(np.concatenate([n.value for n in nodes]), "concat_vec", tuple(nodes))
    offsets = np.cumsum([0] + [n.value.shape[0] for n in nodes])

    def _bw(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            _accum(n, g[lo:hi])

    out._backward = _bw
    return out


def slice_cols(a: Node, start: int, stop: int) -> Node:
    _require_2d(a.value, "slice_cols")
    ncols = a.value.shape[1]
    if not (0 <= start <= stop <= ncols):
        raise ContractError(f"slice_cols: [{start}:{stop}] out of range for {ncols} columns")
    out = Node(a.value[:, start:stop].copy(), "slice_cols", (a,))

    def _bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[:, start:stop] += g

    out._backward = _bw
    return out


def pad_cols(a: Node, left: int, right: int) -> Node:
    """Zero-pad columns on either side of a 2-d node."""
    _require_2d(a.value, "pad_cols")
    if left < 0 or right < 0:
        raise ContractError("pad_cols: pad widths must be nonnegative")
    out = Node(np.pad(a.value, ((0, 0), (left, right))), "pad_cols", (a,))
    stop = left + a.value.shape[1]
    out._backward = lambda g: _accum(a, g[:, left:stop])
    return out


def tile_cols(a: Node, n: int) -> Node:
    """Repeat a d x 1 column n times to form d x n."""
    _require_2d(a.value, "tile_cols")
    if a.value.shape[1] != 1:
        raise DimensionError("tile_cols: input must have exactly one column")
    if n < 1:
        raise ContractError("tile_cols: n must be positive")
    out = Node(np.repeat(a.value, n, axis=1), "tile_cols", (a,))
    out._backward = lambda g: _accum(a, g.sum(axis=1, keepdims=True))
    return out


def stack_cols(nodes: list[Node]) -> Node:
    """Stack equal-length 1-d nodes as the columns of a matrix."""
    if not nodes:
        raise ContractError("stack_cols: need at least one input")
    length = nodes[0].value.shape[0] if nodes[0].value.ndim == 1 else None
    for n in nodes:
        if n.value.ndim != 1 or n.value.shape[0] != length:
            raise DimensionError("stack_cols: inputs must be equal-length 1-d vectors")
    out = Node(np.stack([n.value for n in nodes], axis=1), "stack_cols", tuple(nodes))

    def _bw(g):
        for i, n in enumerate(nodes):
            _accum(n, g[:, i])

    out._backward = _bw
    return out


def stack_rows(nodes: list[Node]) -> Node:
    """Stack equal-length 1-d nodes as the rows of a matrix."""
    if not nodes:
        raise ContractError("stack_rows: need at least one input")
    length = nodes[0].value.shape[0] if nodes[0].value.ndim == 1 else None
    for n in nodes:
        if n.value.ndim != 1 or n.value.shape[0] != length:
            raise DimensionError("stack_rows: inputs must be equal-length 1-d vectors")
    out = Node(np.stack([n.value for n in nodes], axis=0), "stack_rows", tuple(nodes))

    def _bw(g):
        for i, n in enumerate(nodes):
            _accum(n, g[i, :])

    out._backward = _bw
    return out


def row_sums(a: Node) -> Node:
    """Sum a 2-d node along its columns, returning one value per row."""
    _require_2d(a.value, "row_sums")
    out = Node(a.value.sum(axis=1), "row_sums", (a,))
    out._backward = lambda g: _accum(a, np.broadcast_to(g[:, None], a.value.shape))
    return out


def sum_all(a: Node) -> Node:
    out = Node(a.value.sum(), "sum_all", (a,))
    out._backward = lambda g: _accum(a, np.broadcast_to(g, a.value.shape))
    return out


def pick(v: Node, index: int) -> Node:
    """Select one entry of a 1-d node as a scalar."""
    if v.value.ndim != 1:
        raise DimensionError("pick: input must be 1-d")
    if not (0 <= index < v.value.shape[0]):
        raise ContractError(f"pick: index {index} out of range for length {v.value.shape[0]}")
    out = Node(np.asarray(v.value[index]), "pick", (v,))

    def _bw(g):
        if v.grad is None:
            v.grad = np.zeros_like(v.value)
        v.grad[index] += g

    out._backward = _bw
    return out


def mean_of(nodes: list[Node]) -> Node:
    """Average a list of scalar nodes."""
    if not nodes:
        raise ContractError("mean_of: need at least one input")
    for n in nodes:
        if n.value.size != 1:
            raise ContractError("mean_of: inputs must be scalars")
    k = len(nodes)
    total = 0.0
    for n in nodes:
        total += n.value.item()
    out = Node(np.asarray(total / k), "mean_of", tuple(nodes))

    def _bw(g):
        share = g / k
        for n in nodes:
            _accum(n, np.broadcast_to(share, n.value.shape))

    out._backward = _bw
    return out


def embed(table: Node, ids) -> Node:
    """Gather embedding rows for a token id sequence as a d x len feature map."""
    _require_2d(table.value, "embed table")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise EmptyInputError("embed: need a non-empty 1-d id sequence")
    vocab = table.value.shape[0]
    if idx.min() < 0 or idx.max() >= vocab:
        raise ContractError(f"embed: id out of range for vocabulary of {vocab}")
    out = Node(table.value[idx].T, "embed", (table,))

    def _bw(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g.T)
        _accum(table, gt)

    out._backward = _bw
    return out


def max_over_positions(h: Node) -> tuple[Node, np.ndarray]:
    """Row-wise max over the position axis of a d x m feature map.

    Returns the pooled vector and the winning column per row. Ties go to
    the lowest column index, and the gradient is routed only to winners.
    """
    _require_2d(h.value, "max_over_positions")
    if h.value.shape[1] == 0:
        raise EmptyInputError("max_over_positions: empty position axis")
    idx = h.value.argmax(axis=1)
    out = Node(h.value.max(axis=1), "max_over_positions", (h,))
    rows = np.arange(h.value.shape[0])

    def _bw(g):
        if h.grad is None:
            h.grad = np.zeros_like(h.value)
        np.add.at(h.grad, (rows, idx), g)

    out._backward = _bw
    return out, idx.copy()


# ---------------------------------------------------------------------------
# softmax


def masked_softmax(scores: Node, mask) -> Node:
    """Softmax over the unmasked entries of a 1-d score vector.

    Masked entries come out exactly 0. Stability comes from subtracting the
    running max before exponentiation. Raises EmptyContextError when every
    position is masked.
    """
    v = scores.value
    if v.ndim != 1:
        raise DimensionError("masked_softmax: scores must be 1-d")
    m = np.asarray(mask, dtype=bool)
    if m.shape != v.shape:
        raise DimensionError(f"masked_softmax: mask {m.shape} does not match scores {v.shape}")
    if not m.any():
        raise EmptyContextError("masked_softmax: all positions are masked")
    shifted = np.where(m, v, -np.inf)
    e = np.exp(shifted - shifted.max())
    p = e / e.sum()
    out = Node(p, "masked_softmax", (scores,))
    out._backward = lambda g: _accum(scores, p * (g - np.dot(g, p)))
    return out


def masked_softmax_rows(scores: Node, mask=None) -> Node:
    """Row-wise masked softmax over an m x n score matrix.

    ``mask`` may be a length-n vector shared by every row, a full m x n
    boolean matrix (used by exclude-self attention), or None for all-true.
    Any row left with zero unmasked entries raises EmptyContextError.
    """
    v = scores.value
    _require_2d(v, "masked_softmax_rows")
    m_rows, n_cols = v.shape
    if mask is None:
        full = np.ones((m_rows, n_cols), dtype=bool)
    else:
        mk = np.asarray(mask, dtype=bool)
        if mk.ndim == 1:
            if mk.shape[0] != n_cols:
                raise DimensionError("masked_softmax_rows: mask length does not match columns")
            full = np.broadcast_to(mk, (m_rows, n_cols))
        elif mk.shape == (m_rows, n_cols):
            full = mk
        else:
            raise DimensionError(f"masked_softmax_rows: mask {mk.shape} does not fit {v.shape}")
    alive = full.any(axis=1)
    if not alive.all():
        bad = int(np.flatnonzero(~alive)[0])
        raise EmptyContextError(f"masked_softmax_rows: row {bad} has no unmasked positions")
    shifted = np.where(full, v, -np.inf)
    e = np.exp(shifted - shifted.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    out = Node(p, "masked_softmax_rows", (scores,))

    def _bw(g):
        _accum(scores, p * (g - (g * p).sum(axis=1, keepdims=True)))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# graph traversal


def topo_order(root: Node) -> list[Node]:
    """Inputs-before-outputs ordering of the graph reachable from root."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in node.inputs:
            if id(inp) not in seen:
                stack.append((inp, False))
    return order


def backward(loss: Node) -> None:
    """Propagate d(loss)/d(node) to every node reachable from ``loss``.

    Gradients accumulate into ``node.grad``; callers zero parameter grads
    between optimization steps. Running backward twice on the same loss
    node is an error because the second pass would double-count.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.value.shape}")
    if loss._ran:
        raise ContractError("backward: already ran on this loss node; reset gradients and rebuild")
    loss._ran = True
    order = topo_order(loss)
    _accum(loss, np.ones_like(loss.value))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(nodes) -> None:
    for n in nodes:
        n.grad = None


def assert_finite(value: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite value in {what}")


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-tensor maximum relative errors from a finite-difference check."""

    errors: dict[str, float]
    step: float
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst_tensor(self) -> str:
        if not self.errors:
            return ""
        return max(self.errors, key=self.errors.get)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def lines(self) -> list[str]:
        width = max((len(n) for n in self.errors), default=4)
        return [f"{name:<{width}}  {err:.3e}" for name, err in self.errors.items()]


def grad_check(build_loss, params: dict[str, Node], step: float = 1e-5,
               tolerance: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must be a zero-argument callable that rebuilds the full
    loss graph from the live ``params`` leaves, deterministically. It is
    called twice up front; any bitwise difference raises DeterminismError.

    The relative error for one entry is |a - n| / max(|a|, |n|, 1), and the
    report keeps the per-tensor maximum.
    """
    if step <= 0.0:
        raise ContractError("grad_check: step must be positive")
    first = build_loss()
    second = build_loss()
    if not np.array_equal(first.value, second.value):
        raise DeterminismError("grad_check: two forward passes disagreed")

    zero_grads(params.values())
    backward(first)
    analytic = {
        name: (node.grad.copy() if node.grad is not None else np.zeros_like(node.value))
        for name, node in params.items()
    }

    errors: dict[str, float] = {}
    for name, node in params.items():
        flat = node.value.reshape(-1)
        worst = 0.0
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + step
            up = build_loss().value.item()
            flat[i] = keep - step
            down = build_loss().value.item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if rel > worst:
                worst = rel
        errors[name] = worst
    return GradCheckReport(errors=errors, step=step, tolerance=tolerance)
