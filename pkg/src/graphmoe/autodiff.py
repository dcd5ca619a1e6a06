"""Minimal reverse-mode autodiff over dense float64 matrices.

Define-by-run: every forward pass builds a fresh Tape; backward() walks the
recorded ops in exact reverse order. Values are 2-D float64 arrays throughout
(scalars are 1x1). No broadcasting beyond what individual ops define.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .rng import RngState
from .sparse import ShapeError, SparseMatrix


class DomainError(ValueError):
    pass


class AdNode:
    __slots__ = ("id", "value", "grad", "tape")

    def __init__(self, tape: "Tape", value: np.ndarray, node_id: int):
        self.tape = tape
        self.value = value
        self.grad: np.ndarray | None = None
        self.id = node_id

    @property
    def shape(self):
        return self.value.shape

    def accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class Tape:
    def __init__(self):
        self._records: list[tuple[AdNode, Callable[[np.ndarray], None]]] = []
        self._next_id = 0

    def leaf(self, value) -> AdNode:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError("tape values must be 2-D")
        node = AdNode(self, value, self._next_id)
        self._next_id += 1
        return node

    def emit(self, value: np.ndarray, backward: Callable[[np.ndarray], None]) -> AdNode:
        """Create an output node and record its backward rule."""
        out = self.leaf(value)
        self._records.append((out, backward))
        return out


def backward(tape: Tape, loss: AdNode) -> None:
    if loss.value.shape != (1, 1):
        raise ShapeError("backward requires a scalar (1x1) loss")
    loss.accum(np.ones((1, 1)))
    for out, rule in reversed(tape._records):
        if out.grad is not None:
            rule(out.grad)


# ---------------------------------------------------------------------------
# core ops


def matmul(a: AdNode, b: AdNode) -> AdNode:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def rule(g):
        a.accum(g @ b.value.T)
        b.accum(a.value.T @ g)

    return a.tape.emit(a.value @ b.value, rule)


def spmm(s: SparseMatrix, d: AdNode) -> AdNode:
    value = s.matmul_dense(d.value)

    def rule(g):
        d.accum(s.transpose().matmul_dense(g))

    return d.tape.emit(value, rule)


def _unary(a: AdNode, y: np.ndarray, dydx: np.ndarray) -> AdNode:
    return a.tape.emit(y, lambda g: a.accum(g * dydx))


def relu(a: AdNode) -> AdNode:
    x = a.value
    return _unary(a, np.maximum(x, 0.0), (x > 0).astype(np.float64))


def leaky_relu(a: AdNode, slope: float = 0.2) -> AdNode:
    x = a.value
    return _unary(a, np.where(x > 0, x, slope * x),
                  np.where(x > 0, 1.0, slope))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: AdNode) -> AdNode:
    y = _sigmoid_np(a.value)
    return _unary(a, y, y * (1.0 - y))


def swish(a: AdNode) -> AdNode:
    x = a.value
    s = _sigmoid_np(x)
    return _unary(a, x * s, s + x * s * (1.0 - s))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: AdNode) -> AdNode:
    # tanh approximation
    x = a.value
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return _unary(a, y, dydx)


def log(a: AdNode) -> AdNode:
    x = a.value
    if np.any(x <= 0):
        raise DomainError("log of non-positive entry")
    return _unary(a, np.log(x), 1.0 / x)


def exp(a: AdNode) -> AdNode:
    y = np.exp(a.value)
    return _unary(a, y, y)


def clamp_min(a: AdNode, floor: float) -> AdNode:
    x = a.value
    return _unary(a, np.maximum(x, floor), (x >= floor).astype(np.float64))


def scale(a: AdNode, c: float) -> AdNode:
    return a.tape.emit(a.value * c, lambda g: a.accum(g * c))


def affine(a: AdNode, mul: float, add_const: float) -> AdNode:
    return a.tape.emit(a.value * mul + add_const, lambda g: a.accum(g * mul))


def _binary_check(a: AdNode, b: AdNode) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"elementwise shape mismatch: {a.shape} vs {b.shape}")


def add(a: AdNode, b: AdNode) -> AdNode:
    _binary_check(a, b)

    def rule(g):
        a.accum(g)
        b.accum(g)

    return a.tape.emit(a.value + b.value, rule)


def sub(a: AdNode, b: AdNode) -> AdNode:
    _binary_check(a, b)

    def rule(g):
        a.accum(g)
        b.accum(-g)

    return a.tape.emit(a.value - b.value, rule)


def hadamard(a: AdNode, b: AdNode) -> AdNode:
    _binary_check(a, b)

    def rule(g):
        a.accum(g * b.value)
        b.accum(g * a.value)

    return a.tape.emit(a.value * b.value, rule)


_ELEMENTWISE = {
    "add": add, "sub": sub, "hadamard": hadamard, "scale": scale,
    "relu": relu, "leaky_relu": leaky_relu, "sigmoid": sigmoid,
    "swish": swish, "gelu": gelu, "log": log, "exp": exp,
}


def elementwise(kind: str, a: AdNode, b=None) -> AdNode:
    """Dispatch by name; binary kinds take a second node, scale a float."""
    op = _ELEMENTWISE[kind]
    return op(a) if b is None else op(a, b)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def rowwise_softmax(a: AdNode, temperature: float = 1.0) -> AdNode:
    if temperature <= 0:
        raise DomainError("softmax temperature must be positive")
    y = _softmax_rows(a.value / temperature)

    def rule(g):
        dz = y * (g - (g * y).sum(axis=1, keepdims=True))
        a.accum(dz / temperature)

    return a.tape.emit(y, rule)


def layer_norm(a: AdNode, gain: AdNode, bias: AdNode, eps: float = 1e-5) -> AdNode:
    x = a.value
    d = x.shape[1]
    if gain.value.shape != (1, d) or bias.value.shape != (1, d):
        raise ShapeError("layer_norm gain/bias must be 1 x cols")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv

    def rule(g):
        gain.accum((g * xhat).sum(axis=0, keepdims=True))
        bias.accum(g.sum(axis=0, keepdims=True))
        dxhat = g * gain.value
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        a.accum(inv * (dxhat - m1 - xhat * m2))

    return a.tape.emit(xhat * gain.value + bias.value, rule)


def dropout(a: AdNode, rate: float, rng: RngState, training: bool) -> AdNode:
    if rate >= 1.0 or rate < 0.0:
        raise DomainError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return a
    keep = rng.uniform(a.value.shape) >= rate
    factor = keep / (1.0 - rate)
    return _unary(a, a.value * factor, factor)


def mean_rows(a: AdNode) -> AdNode:
    n = a.value.shape[0]
    if n < 1:
        raise ShapeError("mean_rows of empty matrix")
    y = a.value.mean(axis=0, keepdims=True)
    return a.tape.emit(y, lambda g: a.accum(np.broadcast_to(g / n, a.value.shape)))


def sum_all(a: AdNode) -> AdNode:
    y = np.array([[a.value.sum()]])
    return a.tape.emit(y, lambda g: a.accum(np.full_like(a.value, g[0, 0])))


def column(a: AdNode, j: int) -> AdNode:
    def rule(g):
        full = np.zeros_like(a.value)
        full[:, j : j + 1] = g
        a.accum(full)

    return a.tape.emit(a.value[:, j : j + 1].copy(), rule)


def scale_rows(a: AdNode, w: AdNode) -> AdNode:
    """Multiply row i of `a` by w[i, 0]; w has shape (rows, 1)."""
    if w.value.shape != (a.value.shape[0], 1):
        raise ShapeError("scale_rows weight must be rows x 1")

    def rule(g):
        a.accum(g * w.value)
        w.accum((g * a.value).sum(axis=1, keepdims=True))

    return a.tape.emit(a.value * w.value, rule)


def smul(a: AdNode, s: AdNode) -> AdNode:
    """Multiply a matrix by a scalar (1x1) node."""
    if s.value.shape != (1, 1):
        raise ShapeError("smul scalar must be 1x1")

    def rule(g):
        a.accum(g * s.value[0, 0])
        s.accum(np.array([[float((g * a.value).sum())]]))

    return a.tape.emit(a.value * s.value[0, 0], rule)


def scale_by_entry(a: AdNode, s: AdNode, j: int) -> AdNode:
    """Multiply a matrix by entry s[0, j] of a 1 x m node."""

    def rule(g):
        a.accum(g * s.value[0, j])
        ds = np.zeros_like(s.value)
        ds[0, j] = float((g * a.value).sum())
        s.accum(ds)

    return a.tape.emit(a.value * s.value[0, j], rule)


def softmax_cross_entropy(logits: AdNode, onehot: np.ndarray, mask) -> AdNode:
    mask = np.asarray(mask, dtype=np.int64)
    if mask.shape[0] == 0:
        raise DomainError("softmax_cross_entropy over an empty mask")
    if logits.value.shape[0] != onehot.shape[0]:
        raise ShapeError("logits/onehot row mismatch")
    z = logits.value[mask]
    y = onehot[mask]
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = -(y * logp).sum() / mask.shape[0]
    p = np.exp(logp)

    def rule(g):
        full = np.zeros_like(logits.value)
        full[mask] = (p - y) * (g[0, 0] / mask.shape[0])
        logits.accum(full)

    return logits.tape.emit(np.array([[loss]]), rule)


def gumbel_softmax(logits: AdNode, temperature: float, hard: bool,
                   rng: RngState, training: bool) -> AdNode:
    if temperature <= 0:
        raise DomainError("gumbel temperature must be positive")
    x = logits.value
    if training:
        u = np.clip(rng.uniform(x.shape), 1e-12, 1.0 - 1e-12)
        z = (x - np.log(-np.log(u))) / temperature
    else:
        z = x / temperature
    soft = _softmax_rows(z)
    if hard or not training:
        value = np.zeros_like(soft)
        value[np.arange(soft.shape[0]), soft.argmax(axis=1)] = 1.0
    else:
        value = soft

    def rule(g):
        # straight-through: gradient of the soft relaxation
        dz = soft * (g - (g * soft).sum(axis=1, keepdims=True))
        logits.accum(dz / temperature)

    return logits.tape.emit(value, rule)


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(build: Callable[[Tape, Sequence[AdNode]], AdNode],
               inputs: Sequence[np.ndarray], eps: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    `build(tape, leaves)` must construct a scalar output; it is re-invoked for
    every probe, so any stochastic op inside must reseed its own RngState.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]

    def run(xs):
        tape = Tape()
        leaves = [tape.leaf(x) for x in xs]
        out = build(tape, leaves)
        return tape, leaves, out

    tape, leaves, out = run(inputs)
    backward(tape, out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
                for leaf in leaves]

    coords = [(i, r, c)
              for i, x in enumerate(inputs)
              for r in range(x.shape[0])
              for c in range(x.shape[1])]
    if max_coords is not None and len(coords) > max_coords:
        pick = RngState(seed).permutation(len(coords))[:max_coords]
        coords = [coords[int(k)] for k in pick]

    worst = 0.0
    for i, r, c in coords:
        plus = [x.copy() for x in inputs]
        minus = [x.copy() for x in inputs]
        plus[i][r, c] += eps
        minus[i][r, c] -= eps
        f_plus = run(plus)[2].value[0, 0]
        f_minus = run(minus)[2].value[0, 0]
        numeric = (f_plus - f_minus) / (2 * eps)
        err = abs(analytic[i][r, c] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, err)
    return worst
