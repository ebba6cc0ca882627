"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Values are dumb containers (data + optional grad); operations record a
backward closure on the active :class:`Tape`, which is a plain list in
execution order, so reverse iteration is exact reverse topological order.
Running without an active tape gives a pure (and faster) forward pass,
used at evaluation time.

``backward`` keeps intermediate gradients in a private map and only
accumulates into leaf ``.grad`` buffers, so calling it repeatedly adds the
same leaf gradients again rather than compounding through intermediates.

Set ``debug_checks(True)`` to verify every op output is finite (handy when
chasing a NaN); the training loop itself only checks the loss scalar.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_TAPES: list["Tape"] = []
_DEBUG_CHECKS = False


def debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class Value:
    """Scalar-or-tensor node; ``requires_grad`` marks it as reachable."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def leaf(data) -> Value:
    return Value(data, requires_grad=True)


def constant(data) -> Value:
    return Value(data, requires_grad=False)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


class Tape:
    """Ordered record of one forward pass."""

    __slots__ = ("ops",)

    def __init__(self):
        # entries: (out_value, inputs_tuple, backward_fn(g) -> grads tuple)
        self.ops: list[tuple[Value, tuple[Value, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.ops)


def _record(out: Value, inputs: tuple[Value, ...], backward_fn: Callable) -> Value:
    if _DEBUG_CHECKS and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite value produced in forward pass")
    if _TAPES and out.requires_grad:
        _TAPES[-1].ops.append((out, inputs, backward_fn))
    return out


def backward(tape: Tape, root: Value) -> None:
    """Populate leaf gradients of ``root`` with respect to every leaf."""
    if root.data.size != 1:
        raise ValueError("backward root must be scalar")
    produced = {id(out) for out, _, _ in tape.ops}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    holders: dict[int, Value] = {id(root): root}
    for out, inputs, fn in reversed(tape.ops):
        g = grads.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue
        for v, c in zip(inputs, fn(g)):
            if c is None or not v.requires_grad:
                continue
            key = id(v)
            if key in grads:
                grads[key] = grads[key] + c
            else:
                grads[key] = c
                holders[key] = v
    for key, g in grads.items():
        v = holders[key]
        if key not in produced:
            v.grad = g if v.grad is None else v.grad + g


# ---------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data + b.data, a.requires_grad or b.requires_grad)

    def back(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _record(out, (a, b), back)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data - b.data, a.requires_grad or b.requires_grad)

    def back(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return _record(out, (a, b), back)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data * b.data, a.requires_grad or b.requires_grad)

    def back(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _record(out, (a, b), back)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = Value(a.data / b.data, a.requires_grad or b.requires_grad)

    def back(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
              if b.requires_grad else None)
        return (ga, gb)

    return _record(out, (a, b), back)


def scale(a, c: float) -> Value:
    a = as_value(a)
    out = Value(a.data * c, a.requires_grad)

    def back(g):
        return (g * c,)

    return _record(out, (a,), back)


def shift(a, c: float) -> Value:
    a = as_value(a)
    out = Value(a.data + c, a.requires_grad)

    def back(g):
        return (g,)

    return _record(out, (a,), back)


def neg(a) -> Value:
    return scale(a, -1.0)


def relu(a) -> Value:
    a = as_value(a)
    out = Value(np.maximum(a.data, 0.0), a.requires_grad)
    mask = a.data > 0  # subgradient 0 at the kink

    def back(g):
        return (g * mask,)

    return _record(out, (a,), back)


def tanh(a) -> Value:
    a = as_value(a)
    y = np.tanh(a.data)
    out = Value(y, a.requires_grad)

    def back(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), back)


def sqrt(a) -> Value:
    a = as_value(a)
    y = np.sqrt(a.data)
    out = Value(y, a.requires_grad)

    def back(g):
        return (g * (0.5 / y),)

    return _record(out, (a,), back)


def square(a) -> Value:
    a = as_value(a)
    out = Value(a.data * a.data, a.requires_grad)

    def back(g):
        return (g * (2.0 * a.data),)

    return _record(out, (a,), back)


def matmul(a, b) -> Value:
    """np.matmul with leading-batch broadcasting on either operand."""
    a, b = as_value(a), as_value(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    out = Value(np.matmul(a.data, b.data), a.requires_grad or b.requires_grad)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)),
                              a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g),
                              b.data.shape)
        return (ga, gb)

    return _record(out, (a, b), back)


def reshape(a, shape) -> Value:
    a = as_value(a)
    out = Value(a.data.reshape(shape), a.requires_grad)
    orig = a.data.shape

    def back(g):
        return (g.reshape(orig),)

    return _record(out, (a,), back)


def transpose(a, axes: Sequence[int]) -> Value:
    a = as_value(a)
    axes = tuple(axes)
    out = Value(np.ascontiguousarray(a.data.transpose(axes)), a.requires_grad)
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (g.transpose(inverse),)

    return _record(out, (a,), back)


def concat_last(parts: Sequence) -> Value:
    parts = [as_value(p) for p in parts]
    out = Value(np.concatenate([p.data for p in parts], axis=-1),
                any(p.requires_grad for p in parts))
    sizes = [p.data.shape[-1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            g[..., bounds[i]:bounds[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return _record(out, tuple(parts), back)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    out = Value(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    shape = a.data.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else _axis_count(a.data.shape, axis)
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def variance(a, axis=None, keepdims: bool = False) -> Value:
    """Population variance mean(x^2) - mean(x)^2 along ``axis``."""
    m = mean(a, axis=axis, keepdims=True)
    centered = sub(a, m)
    return mean(square(centered), axis=axis, keepdims=keepdims)


def _axis_count(shape, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def row_select(a, rows) -> Value:
    a = as_value(a)
    rows = np.asarray(rows, dtype=int)
    out = Value(a.data[rows], a.requires_grad)
    shape = a.data.shape

    def back(g):
        ga = np.zeros(shape)
        np.add.at(ga, rows, g)
        return (ga,)

    return _record(out, (a,), back)


def scatter_rows(values, rows, n: int, counts=None) -> Value:
    """Scatter-add rows of ``values`` (k, m) into an (n, m) matrix.

    ``counts`` multiplies each row before the add (drawing a row c times
    and summing equals adding c * row once). Repeated row indices add.
    """
    values = as_value(values)
    rows = np.asarray(rows, dtype=int)
    k, m = values.data.shape
    if counts is None:
        counts = np.ones(k)
    counts = np.asarray(counts, dtype=float)
    weighted = counts[:, None] * values.data
    out_data = np.zeros((n, m))
    if len(np.unique(rows)) == len(rows):
        out_data[rows] = weighted
    else:
        np.add.at(out_data, rows, weighted)
    out = Value(out_data, values.requires_grad)

    def back(g):
        return (counts[:, None] * g[rows],)

    return _record(out, (values,), back)


# ---------------------------------------------------------------------------
# histogram kernels


def kernel_eval(x, bins: int, kernel: str = "triangular",
                width: float | None = None) -> Value:
    """Per-bin kernel responses: (..., c) -> (..., c, bins).

    Kernels: triangular max(0, 1 - u/w) with subgradient 0 at both kinks,
    and raised-cosine 0.5 (1 + cos(pi u / w)) on u <= w. The bin centers
    are the fixed equidistant points (2l - 1)/bins - 1.
    """
    if kernel not in ("triangular", "raised-cosine"):
        raise ValueError("kernel_eval supports triangular and raised-cosine")
    x = as_value(x)
    w = 2.0 / bins if width is None else float(width)
    centers = (2.0 * np.arange(1, bins + 1) - 1.0) / bins - 1.0
    diff = x.data[..., None] - centers
    u = np.abs(diff)
    if kernel == "triangular":
        resp = np.maximum(0.0, 1.0 - u / w)
        dresp = np.where((u > 0) & (u < w), -np.sign(diff) / w, 0.0)
    else:
        inside = u <= w
        resp = np.where(inside, 0.5 * (1.0 + np.cos(np.pi * u / w)), 0.0)
        dresp = np.where(inside,
                         -0.5 * np.pi / w * np.sin(np.pi * u / w) * np.sign(diff),
                         0.0)
    out = Value(resp, x.requires_grad)

    def back(g):
        return ((g * dresp).sum(axis=-1),)

    return _record(out, (x,), back)


def phist_pool(x, bins: int, kernel: str = "triangular",
               width: float | None = None) -> Value:
    """Histogram pooling: (..., rows, c) -> (..., c, bins), summing kernel
    responses over the rows axis.

    When the kernel width equals the bin spacing 2/bins (the default) each
    value touches at most the two neighboring bins, and the pooled
    histogram is computed by weighted bincount instead of a dense
    (rows, c, bins) response tensor.
    """
    x = as_value(x)
    w = 2.0 / bins if width is None else float(width)
    if kernel in ("triangular", "raised-cosine") and w == 2.0 / bins:
        return _phist_pool_fast(x, bins, kernel)
    resp = kernel_eval(x, bins, kernel, w)
    return reduce_sum(resp, axis=-3)


def _phist_pool_fast(x: Value, bins: int, kernel: str) -> Value:
    spacing = 2.0 / bins
    data = x.data
    lead_shape = data.shape[:-2]
    rows, c = data.shape[-2], data.shape[-1]
    flat = data.reshape(-1, rows, c)
    nbatch = flat.shape[0]

    # position between neighboring centers: t in [-0.5, bins - 0.5] on [-1, 1]
    t = (flat + 1.0) / spacing - 0.5
    left = np.floor(t).astype(np.int64)
    frac = t - left
    if kernel == "triangular":
        w_right = frac
        w_left = 1.0 - frac
    else:
        cosf = np.cos(np.pi * frac)
        w_left = 0.5 * (1.0 + cosf)
        w_right = 0.5 * (1.0 - cosf)

    valid_l = (left >= 0) & (left <= bins - 1)
    valid_r = (left >= -1) & (left <= bins - 2)
    base = (np.arange(nbatch)[:, None, None] * c
            + np.arange(c)[None, None, :]) * bins
    idx_l = base + np.where(valid_l, left, 0)
    idx_r = base + np.where(valid_r, left + 1, 0)
    total = nbatch * c * bins
    pooled = np.bincount(idx_l.ravel(),
                         weights=(w_left * valid_l).ravel(),
                         minlength=total)
    pooled += np.bincount(idx_r.ravel(),
                          weights=(w_right * valid_r).ravel(),
                          minlength=total)
    out = Value(pooled.reshape(*lead_shape, c, bins), x.requires_grad)

    def back(g):
        gf = g.reshape(-1)
        gl = np.where(valid_l, gf[idx_l], 0.0)
        gr = np.where(valid_r, gf[idx_r], 0.0)
        if kernel == "triangular":
            gx = (gr - gl) / spacing
        else:
            gx = 0.5 * np.pi * np.sin(np.pi * frac) / spacing * (gr - gl)
        return (gx.reshape(data.shape),)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# normalization and loss


def whiten(x, axis, eps: float = 1e-12) -> Value:
    """Per-channel whitening: y = x/sigma - mean(x/sigma), with sigma the
    population standard deviation over ``axis`` (gradient flows through the
    statistics, as in batch normalization).
    """
    x = as_value(x)
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(axis)
    n = _axis_count(x.data.shape, axis)
    mu = x.data.mean(axis=axis, keepdims=True)
    var = np.mean(x.data * x.data, axis=axis, keepdims=True) - mu * mu
    sigma = np.sqrt(np.maximum(var, 0.0) + eps)
    z = x.data / sigma
    y = z - z.mean(axis=axis, keepdims=True)
    out = Value(y, x.requires_grad)

    def back(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gym) / sigma,)

    return _record(out, (x,), back)


def softmax_cross_entropy(logits, label: int) -> Value:
    """Cross entropy of softmax(logits) against an integer class label.

    ``logits`` is a vector (or 1 x C row); returns a scalar Value.
    """
    logits = as_value(logits)
    flat = logits.data.reshape(-1)
    c = flat.shape[0]
    if not 0 <= label < c:
        raise ValueError(f"label {label} out of range for {c} classes")
    m = flat.max()
    exps = np.exp(flat - m)
    z = exps.sum()
    logprob = flat[label] - m - math.log(z)
    out = Value(-logprob, logits.requires_grad)
    probs = exps / z

    def back(g):
        gl = probs.copy()
        gl[label] -= 1.0
        return ((float(g) * gl).reshape(logits.data.shape),)

    return _record(out, (logits,), back)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Value], leaves: dict[str, Value],
               h: float = 1e-5, max_samples: int | None = None,
               rng: np.random.Generator | None = None) -> dict[str, float]:
    """Compare backward gradients of ``f()`` against central differences.

    ``f`` must be deterministic and rebuild its computation from the leaf
    data on every call. Returns the max relative error per leaf, with the
    denominator floored at 1 so tiny gradients are compared absolutely.
    For large leaves, ``max_samples`` random entries are probed.
    """
    for v in leaves.values():
        v.zero_grad()
    with Tape() as tape:
        root = f()
    backward(tape, root)
    analytic = {name: (np.zeros_like(v.data) if v.grad is None else v.grad.copy())
                for name, v in leaves.items()}
    rng = rng or np.random.default_rng(0)
    report: dict[str, float] = {}
    for name, v in leaves.items():
        size = v.data.size
        idxs = np.arange(size)
        if max_samples is not None and size > max_samples:
            idxs = rng.choice(size, size=max_samples, replace=False)
        worst = 0.0
        flat_analytic = analytic[name].reshape(-1)
        for i in idxs:
            pos = np.unravel_index(i, v.data.shape)
            orig = v.data[pos]
            v.data[pos] = orig + h
            up = float(f().data)
            v.data[pos] = orig - h
            down = float(f().data)
            v.data[pos] = orig
            numeric = (up - down) / (2.0 * h)
            a = flat_analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
        report[name] = worst
    return report
