"""Mini-batch training with an adaptive-moment optimizer, early stopping, and metrics.

The loss is MSE on denormalized forecasts, so metrics and training both live
in the original units of the series. Batches are shuffled with a seeded
generator and the last partial batch is kept.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumArray, OpTape, backward
from .data import MultiSeries, WindowSample, make_windows
from .errors import ConfigError, ContractError, NumericError
from .predictor import ModelParams, forward_batch

LR_RANGE = (1e-5, 1e-3)
BATCH_RANGE = (4, 32)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    stride: int = 1

    def __post_init__(self):
        if not (LR_RANGE[0] <= self.lr <= LR_RANGE[1]):
            raise ConfigError(f"learning rate {self.lr} outside search range {LR_RANGE}")
        if not (BATCH_RANGE[0] <= self.batch_size <= BATCH_RANGE[1]):
            raise ConfigError(f"batch size {self.batch_size} outside search range {BATCH_RANGE}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def num_epochs(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_mse", "val_mae"])
            for i in range(self.num_epochs()):
                writer.writerow([i, repr(self.train_loss[i]), repr(self.val_mse[i]),
                                 repr(self.val_mae[i])])


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def optimizer_step(named_params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected adaptive-moment update, in place on the parameter values.

    Rejects the whole step (raising NumericError, state untouched) if any
    gradient is non-finite.
    """
    named_params = list(named_params)
    for name, arr in named_params:
        g = grads[name]
        if g.shape != arr.values.shape:
            raise ContractError(f"gradient for '{name}' has shape {g.shape}, "
                                f"expected {arr.values.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for '{name}', step rejected")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, arr in named_params:
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        arr.values = arr.values - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _batch_arrays(samples: list[WindowSample], idx) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([samples[i].input for i in idx])
    y = np.stack([samples[i].target for i in idx])
    return x, y


def train_step(model: ModelParams, x: np.ndarray, y: np.ndarray,
               state: AdamState, lr: float) -> float:
    """One forward/backward/update pass on a (B, V, L) batch; returns the batch MSE."""
    with OpTape() as tape:
        yhat, _ = forward_batch(NumArray(x), model)
        err = yhat - NumArray(y)
        loss = (err * err).mean()
    loss_val = loss.item()
    if not np.isfinite(loss_val):
        raise NumericError(f"training diverged: batch loss is {loss_val}")
    backward(loss, tape)
    grads = {name: arr.grad_values() for name, arr in model.named_arrays()}
    optimizer_step(model.named_arrays(), grads, state, lr)
    model.zero_grad()
    return loss_val


def train(model: ModelParams, train_series: MultiSeries, val_series: MultiSeries,
          cfg: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Train until max_epochs or until validation MSE stops improving.

    Returns the model holding the parameters of the best validation epoch.
    """
    train_windows = make_windows(train_series, model.lookback, model.horizon, cfg.stride)
    val_windows = make_windows(val_series, model.lookback, model.horizon, cfg.stride)
    if not train_windows or not val_windows:
        raise ConfigError("train/val splits produced no windows")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = TrainHistory()
    best_mse = np.inf
    best_values: dict[str, np.ndarray] = {}
    since_best = 0

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(len(train_windows))
        total_sq, total_n = 0.0, 0
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            x, y = _batch_arrays(train_windows, idx)
            loss_val = train_step(model, x, y, state, cfg.lr)
            total_sq += loss_val * len(idx)
            total_n += len(idx)
        metrics = evaluate(model, val_windows)
        history.train_loss.append(total_sq / total_n)
        history.val_mse.append(metrics["mse"])
        history.val_mae.append(metrics["mae"])
        history.epoch_seconds.append(time.perf_counter() - t0)

        if metrics["mse"] < best_mse:
            best_mse = metrics["mse"]
            history.best_epoch = epoch
            best_values = {name: arr.values.copy() for name, arr in model.named_arrays()}
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break

    for name, arr in model.named_arrays():
        arr.values = best_values[name]
    return model, history


def evaluate(model: ModelParams, samples: list[WindowSample], batch_size: int = 64,
             horizon: int | None = None) -> dict[str, float]:
    """MSE / MAE / MAPE over all samples, horizons, and channels, in original units.

    Samples are aggregated in origin order, so the result does not depend on
    the order they are passed in. ``horizon`` truncates the scored forecast to
    its first steps; by default the full horizon is scored.
    """
    if not samples:
        raise ContractError("evaluate needs at least one sample")
    if horizon is not None and not (1 <= horizon <= model.horizon):
        raise ConfigError(f"horizon {horizon} outside [1, {model.horizon}]")
    ordered = sorted(range(len(samples)), key=lambda i: (samples[i].origin, i))
    sum_sq = sum_abs = sum_ape = 0.0
    count = 0
    for lo in range(0, len(ordered), batch_size):
        idx = ordered[lo : lo + batch_size]
        x, y = _batch_arrays(samples, idx)
        yhat, _ = forward_batch(NumArray(x), model)
        pred = yhat.values
        if horizon is not None:
            pred, y = pred[..., :horizon], y[..., :horizon]
        err = pred - y
        sum_sq += float((err * err).sum())
        sum_abs += float(np.abs(err).sum())
        sum_ape += float((np.abs(err) / np.maximum(np.abs(y), 1e-8)).sum())
        count += err.size
    return {"mse": sum_sq / count, "mae": sum_abs / count, "mape": 100.0 * sum_ape / count}


def rolling_forecasts(model: ModelParams, series: MultiSeries,
                      batch_size: int = 64) -> tuple[np.ndarray, int]:
    """First-step-ahead predictions at every origin, merged into one trajectory.

    Returns (preds, offset): preds[:, i] is the one-step forecast for
    series.values[:, offset + i], with offset = model lookback.
    """
    n = series.length
    lookback, horizon = model.lookback, model.horizon
    if n < lookback + horizon:
        raise ConfigError(f"series of {n} steps is too short for rolling forecasts")
    origins = range(0, n - lookback - horizon + 1)
    preds = np.empty((series.num_channels, len(origins)))
    for lo in range(0, len(origins), batch_size):
        chunk = [series.values[:, o : o + lookback] for o in origins[lo : lo + batch_size]]
        yhat, _ = forward_batch(NumArray(np.stack(chunk)), model)
        preds[:, lo : lo + len(chunk)] = yhat.values[:, :, 0].T
    return preds, lookback
