"""Reversible per-window normalization and first-order differencing.

Normalization is window-local and per-channel: each channel of a lookback
window is centered and scaled by its own mean and standard deviation, and the
same statistics denormalize the forecast back to the original scale. The
differencing uses a zero first element so the output keeps the input length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumArray
from .errors import ContractError, DataError, DimensionError

EPS = 1e-5


@dataclass
class NormStats:
    """Per-window, per-channel mean and std, shaped (..., V, 1) for broadcasting.

    std is sqrt(population variance) + EPS, so it is strictly positive even
    for constant channels.
    """

    mean: NumArray
    std: NumArray

    @property
    def num_channels(self) -> int:
        return self.mean.shape[-2]


def normalize(window: NumArray) -> tuple[NumArray, NormStats]:
    """Center and scale each channel of a (..., V, T) window over its T steps.

    Differentiable through the statistics. Raises DataError on non-finite
    input and ContractError when the window has fewer than two steps.
    """
    window = ad._lift(window)
    if window.values.shape[-1] < 2:
        raise ContractError(f"normalize needs at least 2 steps, got {window.values.shape}")
    if not np.isfinite(window.values).all():
        raise DataError("normalize: window contains non-finite values")
    mean, var = ad.reduce_mean_var(window, axis=-1, keepdims=True)
    std = ad.sqrt(var) + EPS
    xprime = (window - mean) / std
    return xprime, NormStats(mean=mean, std=std)


def denormalize(y_out: NumArray, stats: NormStats) -> NumArray:
    """Map a (..., V, H) normalized forecast back to the original scale."""
    y_out = ad._lift(y_out)
    if y_out.values.shape[-2] != stats.num_channels:
        raise DimensionError(
            f"denormalize: {y_out.values.shape[-2]} channels vs stats for {stats.num_channels}"
        )
    return y_out * stats.std + stats.mean


def difference(xprime: NumArray) -> NumArray:
    """First-order difference along time with a zero boundary element.

    output[..., 0] = 0 and output[..., t] = x[..., t] - x[..., t-1] for t >= 1,
    so the result has the same shape as the input.
    """
    xprime = ad._lift(xprime)
    d = ad.slice_last(xprime, 1, xprime.values.shape[-1]) - ad.slice_last(
        xprime, 0, xprime.values.shape[-1] - 1
    )
    return ad.pad_last(d, 1, 0)
