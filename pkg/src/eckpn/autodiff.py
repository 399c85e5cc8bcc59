"""Reverse-mode differentiation over dense float64 matrices.

Every tensor is a 2-d numpy array wrapped in a :class:`Value` node. Ops
build an acyclic graph; :func:`backward` walks it once in reverse
topological order, so repeated runs on the same graph accumulate
gradients in the same order and are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EngineError, ShapeError


class Value:
    """A node in the computation graph: data, grad accumulator, provenance."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(op, arr.shape)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(op={self.op!r}, shape={self.data.shape})"


class ParamTensor:
    """A named trainable leaf. Names must be unique within a model."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, data):
        self.name = name
        self.value = Value(np.array(data, dtype=np.float64), requires_grad=True, op="param")

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    @property
    def shape(self):
        return self.value.data.shape

    def zero_grad(self):
        self.value.grad = None

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.shape})"


def constant(data) -> Value:
    """Wrap an array as a non-differentiated leaf."""
    return Value(data, requires_grad=False, op="const")


def _accum(v: Value, g: np.ndarray):
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = np.zeros_like(v.data)
    v.grad += g


def _result(op, data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    return Value(data, requires_grad=needs, op=op,
                 parents=tuple(parents) if needs else (),
                 backward=backward if needs else None)


def _check_same_shape(op, a: Value, b: Value):
    if a.data.shape != b.data.shape:
        raise ShapeError(op, a.data.shape, b.data.shape)


# ---------------------------------------------------------------- arithmetic

def add(a: Value, b: Value) -> Value:
    _check_same_shape("add", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result("add", a.data + b.data, (a, b), bw)


def sub(a: Value, b: Value) -> Value:
    _check_same_shape("sub", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result("sub", a.data - b.data, (a, b), bw)


def mul(a: Value, b: Value) -> Value:
    """Elementwise product of two same-shape values."""
    _check_same_shape("mul", a, b)

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result("mul", a.data * b.data, (a, b), bw)


def square(a: Value) -> Value:
    def bw(g):
        _accum(a, g * (2.0 * a.data))

    return _result("square", a.data * a.data, (a,), bw)


def scale(a: Value, c: float) -> Value:
    """Multiply by a python scalar constant."""
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _result("scale", a.data * c, (a,), bw)


def matmul(a: Value, b: Value) -> Value:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result("matmul", a.data @ b.data, (a, b), bw)


def transpose(a: Value) -> Value:
    def bw(g):
        _accum(a, g.T)

    return _result("transpose", a.data.T, (a,), bw)


def mask(a: Value, const: np.ndarray) -> Value:
    """Elementwise multiply by a non-differentiated matrix."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != a.data.shape:
        raise ShapeError("mask", a.data.shape, const.shape)

    def bw(g):
        _accum(a, g * const)

    return _result("mask", a.data * const, (a,), bw)


# ------------------------------------------------------------ shape plumbing

def concat_cols(*parts: Value) -> Value:
    if len(parts) < 2:
        raise EngineError("concat_cols needs at least two operands")
    rows = parts[0].data.shape[0]
    for p in parts[1:]:
        if p.data.shape[0] != rows:
            raise ShapeError("concat_cols", parts[0].data.shape, p.data.shape)
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, j0, j1 in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, j0:j1])

    return _result("concat_cols", np.concatenate([p.data for p in parts], axis=1),
                   parts, bw)


def slice_cols(a: Value, j0: int, j1: int) -> Value:
    if not (0 <= j0 < j1 <= a.data.shape[1]):
        raise ShapeError("slice_cols", a.data.shape, (j0, j1))

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, j0:j1] = g
        _accum(a, full)

    return _result("slice_cols", a.data[:, j0:j1].copy(), (a,), bw)


def gather_rows(a: Value, indices) -> Value:
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _result("gather_rows", a.data[idx], (a,), bw)


def reshape(a: Value, rows: int, cols: int) -> Value:
    if rows * cols != a.data.size:
        raise ShapeError("reshape", a.data.shape, (rows, cols))

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _result("reshape", a.data.reshape(rows, cols), (a,), bw)


def broadcast_rows(a: Value, rows: int) -> Value:
    """Repeat a 1 x d row vector over `rows` rows."""
    if a.data.shape[0] != 1:
        raise ShapeError("broadcast_rows", a.data.shape)

    def bw(g):
        _accum(a, g.sum(axis=0, keepdims=True))

    return _result("broadcast_rows", np.repeat(a.data, rows, axis=0), (a,), bw)


# ------------------------------------------------------------- nonlinearities

def sigmoid(a: Value) -> Value:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _result("sigmoid", out, (a,), bw)


def leaky_relu(a: Value, slope: float = 0.2) -> Value:
    x = a.data
    out = np.where(x >= 0, x, slope * x)

    def bw(g):
        _accum(a, g * np.where(x >= 0, 1.0, slope))

    return _result("leaky_relu", out, (a,), bw)


def log(a: Value) -> Value:
    if np.any(a.data <= 0):
        raise EngineError("log: non-positive input; clamp before taking logs")

    def bw(g):
        _accum(a, g / a.data)

    return _result("log", np.log(a.data), (a,), bw)


def clamp(a: Value, lo: float, hi: float) -> Value:
    """Clip into [lo, hi]; gradient passes only where the input is inside."""
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accum(a, g * inside)

    return _result("clamp", np.clip(a.data, lo, hi), (a,), bw)


def row_softmax(a: Value) -> Value:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accum(a, out * (g - dot))

    return _result("row_softmax", out, (a,), bw)


# ---------------------------------------------------------------- reductions

def sum_all(a: Value) -> Value:
    def bw(g):
        _accum(a, np.full_like(a.data, g[0, 0]))

    return _result("sum_all", np.array([[a.data.sum()]]), (a,), bw)


def mean_all(a: Value) -> Value:
    n = a.data.size

    def bw(g):
        _accum(a, np.full_like(a.data, g[0, 0] / n))

    return _result("mean_all", np.array([[a.data.mean()]]), (a,), bw)


def row_sum(a: Value) -> Value:
    def bw(g):
        _accum(a, np.repeat(g, a.data.shape[1], axis=1))

    return _result("row_sum", a.data.sum(axis=1, keepdims=True), (a,), bw)


def row_mean(a: Value) -> Value:
    n = a.data.shape[1]

    def bw(g):
        _accum(a, np.repeat(g / n, n, axis=1))

    return _result("row_mean", a.data.mean(axis=1, keepdims=True), (a,), bw)


# ------------------------------------------------------------- normalization

BN_EPS = 1e-5


def batch_norm(x: Value, gamma: Value, beta: Value, eps: float = BN_EPS) -> Value:
    """Normalize each column over the rows with learned scale/shift.

    Statistics come from the current matrix only; there is no running
    state, so train and eval behave identically on a given episode.
    """
    d = x.data.shape[1]
    if gamma.data.shape != (1, d) or beta.data.shape != (1, d):
        raise ShapeError("batch_norm", x.data.shape, gamma.data.shape, beta.data.shape)
    rows = x.data.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        _accum(gamma, (g * xhat).sum(axis=0, keepdims=True))
        _accum(beta, g.sum(axis=0, keepdims=True))
        dxhat = g * gamma.data
        s1 = dxhat.sum(axis=0, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=0, keepdims=True)
        _accum(x, (inv / rows) * (rows * dxhat - s1 - xhat * s2))

    return _result("batch_norm", out, (x, gamma, beta), bw)


# ------------------------------------------------------------------ backward

def topo_order(root: Value) -> list[Value]:
    """Deterministic post-order over the graph reachable from root."""
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Value):
    """Populate .grad with d(root)/d(value) for every reachable value."""
    if root.data.shape != (1, 1):
        raise EngineError(f"backward needs a 1x1 scalar root, got {root.data.shape}")
    if not root.requires_grad:
        return
    order = topo_order(root)
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ------------------------------------------------------- gradient verification

def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


@dataclass
class GradCheckEntry:
    """Per-parameter comparison of analytic vs numeric gradients.

    rel_err is the pass metric: |a - n| / max(1e-8, |a| + |n|) with the
    euclidean norm over the parameter's gradient entries. max_entry_err
    applies the same formula entrywise and is diagnostic only; a scalar
    finite difference cannot resolve entries whose true gradient sits
    below the float64 noise floor, so it does not gate the pass.
    """

    name: str
    rel_err: float
    max_entry_err: float
    worst_index: tuple[int, int]
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.note == ""


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.ok and e.rel_err <= self.tol for e in self.entries)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_err:.3e} over " \
               f"{len(self.entries)} parameters (tol {self.tol:g})"


def grad_check(params: Sequence[ParamTensor], builder: Callable[[], Value],
               eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `builder` must deterministically rebuild the scalar loss from the
    current parameter data; it is re-run twice per parameter entry.
    """
    if eps <= 0 or tol <= 0:
        raise EngineError("grad_check: eps and tol must be positive")
    for p in params:
        p.zero_grad()
    root = builder()
    backward(root)
    analytic = {
        p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for p in params
    }
    for p in params:
        p.zero_grad()

    report = GradCheckReport(tol=tol, eps=eps)
    for p in params:
        arr = p.data
        numeric = np.zeros_like(arr)
        worst = 0.0
        worst_idx = (0, 0)
        note = ""
        for i in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                saved = arr[i, j]
                arr[i, j] = saved + eps
                f_plus = builder().data[0, 0]
                arr[i, j] = saved - eps
                f_minus = builder().data[0, 0]
                arr[i, j] = saved
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    note = f"non-finite loss at entry ({i},{j})"
                    continue
                numeric[i, j] = (f_plus - f_minus) / (2.0 * eps)
                err = relative_error(analytic[p.name][i, j], numeric[i, j])
                if err > worst:
                    worst = err
                    worst_idx = (i, j)
        a = analytic[p.name]
        diff_norm = float(np.linalg.norm(a - numeric))
        denom = max(1e-8, float(np.linalg.norm(a)) + float(np.linalg.norm(numeric)))
        report.entries.append(
            GradCheckEntry(p.name, diff_norm / denom, worst, worst_idx, note)
        )
    return report
