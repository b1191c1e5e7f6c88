"""Dense double-precision arrays with recorded-operation reverse-mode differentiation.

Every numeric computation in the toolkit runs on :class:`NumArray`. While a
:class:`Tape` is active (``with Tape() as tape:``), each primitive that touches
a gradient-carrying input appends one record (output, inputs, backward rule) to
the tape. ``backward(loss, tape)`` replays the records in reverse order and
accumulates ``d(loss)/d(leaf)`` into each leaf's ``grad`` field. Without an
active tape the same primitives run as plain numpy, which is what inference
uses.

The active tape is thread-local, so distinct tapes may run concurrently.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, DomainError, NumericError

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class NumArray:
    """A dense float64 array plus a same-shape gradient accumulator.

    ``grad is None`` means "zero". Values are treated as immutable after
    creation; only the optimizer rewrites parameter values between passes.
    """

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_values(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.values)

    def _accumulate(self, g: np.ndarray) -> None:
        # never mutate in place: records may share gradient buffers
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self):
        return f"NumArray(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar, all routed through the recorded primitives
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class _Record:
    __slots__ = ("out", "backward")

    def __init__(self, out, backward):
        self.out = out
        self.backward = backward


class OpTape:
    """Ordered record of primitive operations (a Wengert list).

    Replaying the recorded backward rules in reverse order accumulates the
    gradient of a scalar output into every gradient-carrying input exactly
    once per usage.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def __len__(self):
        return len(self.records)


Tape = OpTape


def _lift(x) -> NumArray:
    return x if isinstance(x, NumArray) else NumArray(np.asarray(x, dtype=np.float64))


def _emit(out_values, inputs, backward) -> NumArray:
    """Wrap an op result; record it when a tape is active and a gradient path exists."""
    tape = _active_tape()
    if tape is not None and any(a.requires_grad for a in inputs):
        out = NumArray(out_values, requires_grad=True)
        tape.records.append(_Record(out, backward(out)))
        return out
    return NumArray(out_values)


def _reduce_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the shape of its source array."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: NumArray, b: NumArray, op: str):
    if a.values.shape == b.values.shape:
        return
    try:
        np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.values.shape} and {b.values.shape} are not broadcastable"
        ) from None


# ---------------------------------------------------------------------------
# binary primitives


def add(a: NumArray, b: NumArray) -> NumArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g, a.values.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g, b.values.shape))

        return run

    return _emit(a.values + b.values, (a, b), bwd)


def sub(a: NumArray, b: NumArray) -> NumArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g, a.values.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(-g, b.values.shape))

        return run

    return _emit(a.values - b.values, (a, b), bwd)


def mul(a: NumArray, b: NumArray) -> NumArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g * bv, a.values.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g * av, b.values.shape))

        return run

    return _emit(av * bv, (a, b), bwd)


def div(a: NumArray, b: NumArray) -> NumArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")
    av, bv = a.values, b.values
    out_values = av / bv

    def bwd(out):
        ov = out.values

        def run(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g / bv, a.values.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(-g * ov / bv, b.values.shape))

        return run

    return _emit(out_values, (a, b), bwd)


# ---------------------------------------------------------------------------
# unary primitives


def neg(a: NumArray) -> NumArray:
    a = _lift(a)

    def bwd(out):
        def run(g):
            a._accumulate(-g)

        return run

    return _emit(-a.values, (a,), bwd)


def sigmoid(a: NumArray) -> NumArray:
    a = _lift(a)
    av = a.values
    # exp of a non-positive argument only, stable in both tails
    e = np.exp(-np.abs(av))
    out_values = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(out):
        ov = out.values

        def run(g):
            a._accumulate(g * ov * (1.0 - ov))

        return run

    return _emit(out_values, (a,), bwd)


def tanh(a: NumArray) -> NumArray:
    a = _lift(a)
    out_values = np.tanh(a.values)

    def bwd(out):
        ov = out.values

        def run(g):
            a._accumulate(g * (1.0 - ov * ov))

        return run

    return _emit(out_values, (a,), bwd)


def relu(a: NumArray) -> NumArray:
    a = _lift(a)
    av = a.values

    def bwd(out):
        mask = av > 0

        def run(g):
            a._accumulate(g * mask)

        return run

    return _emit(np.maximum(av, 0.0), (a,), bwd)


def sqrt(a: NumArray) -> NumArray:
    a = _lift(a)
    out_values = np.sqrt(a.values)

    def bwd(out):
        ov = out.values

        def run(g):
            a._accumulate(g * 0.5 / ov)

        return run

    return _emit(out_values, (a,), bwd)


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: NumArray, b: NumArray | None = None) -> NumArray:
    """Dispatch a pointwise primitive by name.

    Binary kinds (add/sub/mul) require ``b``; unary kinds (sigmoid/tanh/relu)
    reject it.
    """
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"elementwise '{kind}' needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        if b is not None:
            raise ContractError(f"elementwise '{kind}' takes one operand")
        return _UNARY[kind](a)
    raise ContractError(f"unknown elementwise kind '{kind}'")


# ---------------------------------------------------------------------------
# matmul and convolution


def matmul(a: NumArray, b: NumArray) -> NumArray:
    """Matrix product with numpy semantics on the last two axes.

    Leading axes broadcast; gradients are the transpose-product rules with the
    broadcast axes summed back out.
    """
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim < 2 or bv.ndim < 2:
        raise DimensionError(f"matmul needs 2-d operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree, {av.shape} x {bv.shape}")

    def bwd(out):
        def run(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(bv, -1, -2))
                a._accumulate(_reduce_to_shape(ga, av.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(av, -1, -2), g)
                b._accumulate(_reduce_to_shape(gb, bv.shape))

        return run

    return _emit(np.matmul(av, bv), (a, b), bwd)


def conv1d_same(x: NumArray, kernel: NumArray, bias: NumArray) -> NumArray:
    """Depthwise same-length 1-d convolution along the last (time) axis.

    ``x`` is (..., V, T), ``kernel`` is (V, k) with k odd, ``bias`` is (V,).
    The input is zero-padded by (k-1)/2 on both ends, so channel c of the
    output depends only on channel c of the input and the length is preserved.
    """
    x, kernel, bias = _lift(x), _lift(kernel), _lift(bias)
    xv, kv, bv = x.values, kernel.values, bias.values
    if kv.ndim != 2:
        raise DimensionError(f"conv1d_same kernel must be (V, k), got {kv.shape}")
    v, k = kv.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same kernel length must be odd, got {k}")
    if xv.ndim < 2 or xv.shape[-2] != v:
        raise DimensionError(f"conv1d_same: input {xv.shape} does not match kernel {kv.shape}")
    if bv.shape != (v,):
        raise DimensionError(f"conv1d_same bias must be ({v},), got {bv.shape}")
    t = xv.shape[-1]
    p = (k - 1) // 2

    pad = [(0, 0)] * (xv.ndim - 1) + [(p, p)]
    xp = np.pad(xv, pad)
    out_values = bv[:, None] * np.ones_like(xv)
    for j in range(k):
        out_values = out_values + kv[:, j][:, None] * xp[..., j : j + t]

    def bwd(out):
        def run(g):
            if x.requires_grad:
                gp = np.pad(g, pad)
                gx = np.zeros_like(xv)
                for j in range(k):
                    gx = gx + kv[:, j][:, None] * gp[..., 2 * p - j : 2 * p - j + t]
                x._accumulate(gx)
            if kernel.requires_grad:
                gk = np.empty_like(kv)
                sum_axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
                for j in range(k):
                    gk[:, j] = (g * xp[..., j : j + t]).sum(axis=sum_axes)
                kernel._accumulate(gk)
            if bias.requires_grad:
                sum_axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
                bias._accumulate(g.sum(axis=sum_axes))

        return run

    return _emit(out_values, (x, kernel, bias), bwd)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axis = axis % ndim
    return axis


def reduce_sum(a: NumArray, axis=None, keepdims: bool = False) -> NumArray:
    a = _lift(a)
    av = a.values
    axis = _norm_axis(axis, av.ndim)

    def bwd(out):
        def run(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, av.shape).copy() if g.shape != av.shape else g)

        return run

    return _emit(av.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def reduce_mean(a: NumArray, axis=None, keepdims: bool = False) -> NumArray:
    a = _lift(a)
    av = a.values
    axis = _norm_axis(axis, av.ndim)
    n = av.size if axis is None else av.shape[axis]
    if n == 0:
        raise DomainError("mean over an empty axis")

    def bwd(out):
        def run(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            g = g / n
            a._accumulate(np.broadcast_to(g, av.shape).copy() if g.shape != av.shape else g)

        return run

    return _emit(av.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def reduce_mean_var(x: NumArray, axis, keepdims: bool = False):
    """Mean and population variance (divide by N) along ``axis``, both differentiable."""
    x = _lift(x)
    if x.values.shape[_norm_axis(axis, x.values.ndim)] == 0:
        raise DomainError("reduce_mean_var over an empty axis")
    m = reduce_mean(x, axis=axis, keepdims=True)
    d = sub(x, m)
    v = reduce_mean(mul(d, d), axis=axis, keepdims=True)
    if not keepdims:
        ax = _norm_axis(axis, x.values.ndim)
        shape = tuple(s for i, s in enumerate(x.values.shape) if i != ax)
        m = reshape(m, shape)
        v = reshape(v, shape)
    return m, v


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: NumArray, shape) -> NumArray:
    a = _lift(a)
    av = a.values

    def bwd(out):
        def run(g):
            a._accumulate(g.reshape(av.shape))

        return run

    return _emit(av.reshape(shape), (a,), bwd)


def swap_last(a: NumArray) -> NumArray:
    """Transpose the last two axes."""
    a = _lift(a)

    def bwd(out):
        def run(g):
            a._accumulate(np.swapaxes(g, -1, -2))

        return run

    return _emit(np.swapaxes(a.values, -1, -2).copy(), (a,), bwd)


def concat(arrays, axis: int) -> NumArray:
    arrays = [_lift(a) for a in arrays]
    if not arrays:
        raise ContractError("concat of zero arrays")
    vals = [a.values for a in arrays]
    axis = axis % vals[0].ndim
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        def run(g):
            for a, lo, hi in zip(arrays, offsets[:-1], offsets[1:]):
                if a.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    a._accumulate(g[tuple(idx)])

        return run

    return _emit(np.concatenate(vals, axis=axis), arrays, bwd)


def stack(arrays, axis: int) -> NumArray:
    arrays = [_lift(a) for a in arrays]
    if not arrays:
        raise ContractError("stack of zero arrays")

    def bwd(out):
        def run(g):
            pieces = np.moveaxis(g, axis, 0)
            for a, piece in zip(arrays, pieces):
                if a.requires_grad:
                    a._accumulate(piece)

        return run

    return _emit(np.stack([a.values for a in arrays], axis=axis), arrays, bwd)


def index_last(a: NumArray, i: int) -> NumArray:
    """Select index ``i`` of the last axis (drops the axis)."""
    a = _lift(a)
    av = a.values

    def bwd(out):
        def run(g):
            gx = np.zeros_like(av)
            gx[..., i] = g
            a._accumulate(gx)

        return run

    return _emit(av[..., i].copy(), (a,), bwd)


def slice_last(a: NumArray, start: int, stop: int) -> NumArray:
    a = _lift(a)
    av = a.values

    def bwd(out):
        def run(g):
            gx = np.zeros_like(av)
            gx[..., start:stop] = g
            a._accumulate(gx)

        return run

    return _emit(av[..., start:stop].copy(), (a,), bwd)


def pad_last(a: NumArray, before: int, after: int) -> NumArray:
    """Zero-pad the last axis."""
    a = _lift(a)
    av = a.values
    t = av.shape[-1]

    def bwd(out):
        def run(g):
            a._accumulate(g[..., before : before + t])

        return run

    pad = [(0, 0)] * (av.ndim - 1) + [(before, after)]
    return _emit(np.pad(av, pad), (a,), bwd)


def broadcast_to(a: NumArray, shape) -> NumArray:
    a = _lift(a)
    av = a.values

    def bwd(out):
        def run(g):
            a._accumulate(_reduce_to_shape(g, av.shape))

        return run

    return _emit(np.broadcast_to(av, shape).copy(), (a,), bwd)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: NumArray, tape: OpTape) -> None:
    """Accumulate d(loss)/d(leaf) into the grad field of every gradient-carrying leaf.

    Intermediate grads are cleared first, so repeated calls without resetting
    the leaves accumulate (two calls give exactly twice the gradient), while
    resetting the leaves in between reproduces identical gradients.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    for rec in tape.records:
        rec.out.grad = None
    loss.grad = np.ones_like(loss.values)
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is not None:
            rec.backward(g)


def grad_check(f, params, step: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central finite differences.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    NumArray computed from ``params``. Returns the maximum over all parameter
    entries of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise DomainError(f"finite-difference step must be positive, got {step}")
    params = list(params)
    for p in params:
        p.zero_grad()
    with OpTape() as tape:
        out = f()
    if not np.isfinite(out.values).all():
        raise NumericError("grad_check: function produced non-finite output")
    backward(out, tape)
    analytic = [p.grad_values().copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().item()
            flat[i] = orig - step
            lo = f().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError("grad_check: function produced non-finite output")
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return float(worst)
