"""Latent-context generator: residual alignment, gated increments, GRU integration.

The pipeline normalizes a lookback window, aligns per-channel change timing
with a residual depthwise convolution, differences the aligned branch, passes
the increments through a sigmoid gate driven by [state; increment], and
integrates the gated increments with a GRU whose hidden sequence is the
per-step context.

To keep the forecaster channel-independent, the gate and GRU weight matrices
are constrained to their per-channel diagonals through constant masks; the
full arrays are stored (and serialized) but only the diagonal entries carry
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import NumArray
from .errors import DimensionError
from .preprocess import NormStats, difference, normalize


@dataclass
class GruParams:
    w_in_update: NumArray
    w_rec_update: NumArray
    b_update: NumArray
    w_in_reset: NumArray
    w_rec_reset: NumArray
    b_reset: NumArray
    w_in_cand: NumArray
    w_rec_cand: NumArray
    b_cand: NumArray


@dataclass
class ContextParams:
    """Learnable arrays of the context generator.

    conv_kernel (V, k) and conv_bias (V,) drive the depthwise alignment
    convolution; gate_w (V, 2V) and gate_b (V,) the increment gate; the GRU
    holds per-gate input weights (V, V), recurrent weights (V, V) and biases.
    """

    conv_kernel: NumArray
    conv_bias: NumArray
    gate_w: NumArray
    gate_b: NumArray
    gru: GruParams

    @property
    def num_channels(self) -> int:
        return self.conv_kernel.shape[0]

    def named_arrays(self):
        yield "ctx.conv_kernel", self.conv_kernel
        yield "ctx.conv_bias", self.conv_bias
        yield "ctx.gate_w", self.gate_w
        yield "ctx.gate_b", self.gate_b
        g = self.gru
        yield "ctx.gru.w_in_update", g.w_in_update
        yield "ctx.gru.w_rec_update", g.w_rec_update
        yield "ctx.gru.b_update", g.b_update
        yield "ctx.gru.w_in_reset", g.w_in_reset
        yield "ctx.gru.w_rec_reset", g.w_rec_reset
        yield "ctx.gru.b_reset", g.b_reset
        yield "ctx.gru.w_in_cand", g.w_in_cand
        yield "ctx.gru.w_rec_cand", g.w_rec_cand
        yield "ctx.gru.b_cand", g.b_cand


@dataclass
class ContextOutput:
    """Everything the generator produces for one window (or batch of windows)."""

    xprime: NumArray      # normalized window, pre-alignment, (..., V, T)
    context: NumArray     # GRU hidden sequence, (..., V, T)
    stats: NormStats
    gates: NumArray       # gate values in (0, 1), (..., V, T)
    aligned: NumArray     # x' + conv(x'), (..., V, T)
    increments: NumArray  # gated increments, (..., V, T)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> NumArray:
    bound = 1.0 / np.sqrt(fan_in)
    return NumArray(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@lru_cache(maxsize=8)
def _gate_mask(v: int) -> np.ndarray:
    m = np.zeros((v, 2 * v))
    idx = np.arange(v)
    m[idx, idx] = 1.0
    m[idx, v + idx] = 1.0
    return m


@lru_cache(maxsize=8)
def _diag_mask(v: int) -> np.ndarray:
    return np.eye(v)


def init_context_params(num_channels: int, kernel_size: int = 3,
                        rng: np.random.Generator | None = None) -> ContextParams:
    """Fan-in-scaled uniform initialization; draw order is fixed for reproducibility."""
    rng = rng if rng is not None else np.random.default_rng(0)
    v = num_channels
    conv_kernel = _uniform(rng, (v, kernel_size), kernel_size)
    conv_bias = _uniform(rng, (v,), kernel_size)
    gate_w = NumArray(_uniform(rng, (v, 2 * v), 2 * v).values * _gate_mask(v),
                      requires_grad=True)
    gate_b = _uniform(rng, (v,), 2 * v)

    def gru_triple():
        w_in = NumArray(_uniform(rng, (v, v), v).values * _diag_mask(v), requires_grad=True)
        w_rec = NumArray(_uniform(rng, (v, v), v).values * _diag_mask(v), requires_grad=True)
        b = _uniform(rng, (v,), v)
        return w_in, w_rec, b

    wz, uz, bz = gru_triple()
    wr, ur, br = gru_triple()
    wc, uc, bc = gru_triple()
    return ContextParams(conv_kernel, conv_bias, gate_w, gate_b,
                         GruParams(wz, uz, bz, wr, ur, br, wc, uc, bc))


def align(xprime: NumArray, params: ContextParams) -> NumArray:
    """Residual alignment: x' plus its depthwise convolution, never a replacement."""
    return xprime + ad.conv1d_same(xprime, params.conv_kernel, params.conv_bias)


def gate(aligned: NumArray, delta: NumArray, params: ContextParams):
    """Sigmoid gate over [aligned_t; delta_t], returning (gated increments, gate values).

    The gate values lie strictly in (0, 1), so the gated increments never
    exceed the raw increments in magnitude.
    """
    aligned, delta = ad._lift(aligned), ad._lift(delta)
    if aligned.values.shape != delta.values.shape:
        raise DimensionError(
            f"gate: aligned {aligned.values.shape} vs increments {delta.values.shape}"
        )
    v = params.num_channels
    u = ad.concat([aligned, delta], axis=-2)
    w = params.gate_w * NumArray(_gate_mask(v))
    m = ad.sigmoid(ad.matmul(w, u) + ad.reshape(params.gate_b, (v, 1)))
    return m * delta, m


def gru_encode(increments: NumArray, params: ContextParams) -> NumArray:
    """Run the per-channel GRU over (..., V, T); return the hidden state at every step.

    Recurrence, starting from a zero hidden state:
        z_t = sigmoid(Wz x_t + Uz s_{t-1} + bz)
        r_t = sigmoid(Wr x_t + Ur s_{t-1} + br)
        c_t = tanh(Wc x_t + Uc (r_t * s_{t-1}) + bc)
        s_t = z_t * s_{t-1} + (1 - z_t) * c_t
    """
    x = ad._lift(increments)
    v = params.num_channels
    if x.values.ndim < 2 or x.values.shape[-2] != v:
        raise DimensionError(f"gru_encode: input {x.values.shape} vs {v} channels")
    squeeze = x.values.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.values.shape)
    t_len = x.values.shape[-1]
    g = params.gru
    diag = NumArray(_diag_mask(v))

    def proj(w, b):
        return ad.matmul(w * diag, x) + ad.reshape(b, (v, 1))

    in_z = proj(g.w_in_update, g.b_update)
    in_r = proj(g.w_in_reset, g.b_reset)
    in_c = proj(g.w_in_cand, g.b_cand)
    rec_z = ad.swap_last(g.w_rec_update * diag)
    rec_r = ad.swap_last(g.w_rec_reset * diag)
    rec_c = ad.swap_last(g.w_rec_cand * diag)

    state = NumArray(np.zeros(x.values.shape[:-1]))
    states = []
    for t in range(t_len):
        z = ad.sigmoid(ad.index_last(in_z, t) + ad.matmul(state, rec_z))
        r = ad.sigmoid(ad.index_last(in_r, t) + ad.matmul(state, rec_r))
        c = ad.tanh(ad.index_last(in_c, t) + ad.matmul(r * state, rec_c))
        state = c + z * (state - c)
        states.append(state)
    out = ad.stack(states, axis=-1)
    if squeeze:
        out = ad.reshape(out, out.values.shape[1:])
    return out


def generate(window: NumArray, params: ContextParams, gated: bool = True) -> ContextOutput:
    """Full generator pipeline: normalize, align, difference, gate, integrate.

    Returns the pre-alignment normalized branch (the predictor fuses that one),
    the context sequence, the window statistics, and the gate values. With
    ``gated=False`` the gate is bypassed (gate values identically one).
    """
    xprime, stats = normalize(window)
    aligned = align(xprime, params)
    delta = difference(aligned)
    if gated:
        increments, gates = gate(aligned, delta, params)
    else:
        increments, gates = delta, NumArray(np.ones_like(delta.values))
    ctx = gru_encode(increments, params)
    return ContextOutput(xprime=xprime, context=ctx, stats=stats, gates=gates,
                         aligned=aligned, increments=increments)
