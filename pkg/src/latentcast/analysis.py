"""Diagnostics: change events, post-event error accumulation, reduced-form proxy
regression, distance correlation, tracking-error bound simulation, and
event-conditioned gate statistics.

Everything here is plain numpy on recorded values; nothing needs gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import NumArray
from .context import generate
from .data import MultiSeries
from .errors import ConfigError, DomainError, FitError
from .predictor import ModelParams

PROXY_FORMS = ("inertia_only", "update_only", "full")


# ---------------------------------------------------------------------------
# change-event detection


@dataclass
class EventSet:
    events: list[int]
    threshold: float
    percentile: float
    min_gap: int
    scores: np.ndarray

    def to_dict(self) -> dict:
        return {
            "events": [int(e) for e in self.events],
            "threshold": self.threshold,
            "percentile": self.percentile,
            "min_gap": self.min_gap,
            "event_count": len(self.events),
        }


def _percentile(values: np.ndarray, q: float) -> float:
    """Order-statistic percentile with linear interpolation between ranks."""
    s = np.sort(np.asarray(values, dtype=np.float64))
    if s.size == 0:
        raise DomainError("percentile of an empty set")
    if s.size == 1:
        return float(s[0])
    rank = (q / 100.0) * (s.size - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, s.size - 1)
    frac = rank - lo
    return float(s[lo] + frac * (s[hi] - s[lo]))


def change_scores(values: np.ndarray) -> np.ndarray:
    """Per-step change intensity: channel-mean absolute first difference of the
    per-channel standardized series. scores[0] is 0."""
    x = np.asarray(values, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True) + 1e-12
    xs = (x - mean) / std
    scores = np.zeros(x.shape[1])
    scores[1:] = np.abs(np.diff(xs, axis=1)).mean(axis=0)
    return scores


def detect_events(truth: MultiSeries | np.ndarray, percentile: float = 90.0,
                  min_gap: int = 16) -> EventSet:
    """Threshold the change scores at the given percentile, then greedily keep
    candidates left to right while enforcing the minimum gap."""
    values = truth.values if isinstance(truth, MultiSeries) else np.asarray(truth, float)
    if values.ndim == 1:
        values = values[None, :]
    if values.shape[1] < 2:
        raise DomainError(f"detect_events needs at least 2 steps, got {values.shape[1]}")
    if min_gap < 1:
        raise ConfigError(f"min_gap must be >= 1, got {min_gap}")
    scores = change_scores(values)
    threshold = _percentile(scores[1:], percentile)
    events: list[int] = []
    last = None
    for t in range(1, scores.size):
        if scores[t] > threshold and (last is None or t - last >= min_gap):
            events.append(t)
            last = t
    return EventSet(events=events, threshold=threshold, percentile=percentile,
                    min_gap=min_gap, scores=scores)


# ---------------------------------------------------------------------------
# post-event error accumulation


@dataclass
class LagReport:
    tail_auc: float
    excess_auc: float
    baseline: float
    window: int
    event_count: int

    def to_dict(self) -> dict:
        return {
            "tail_auc": self.tail_auc,
            "excess_auc": self.excess_auc,
            "baseline": self.baseline,
            "window": self.window,
            "event_count": self.event_count,
        }


def lag_auc(errors: np.ndarray, events: EventSet | list[int], window: int = 16) -> LagReport:
    """Accumulate absolute errors over the fixed-length window after each event.

    The steady baseline is the mean absolute error over all steps outside
    every event window; the excess accumulates only the part above it.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    abs_err = np.abs(np.asarray(errors, dtype=np.float64))
    n = abs_err.size
    times = events.events if isinstance(events, EventSet) else list(events)

    covered = np.zeros(n, dtype=bool)
    for e in times:
        covered[e : min(e + window, n)] = True
    outside = abs_err[~covered]
    baseline = float(outside.mean()) if outside.size else float(abs_err.mean())

    tail = 0.0
    excess = 0.0
    for e in times:
        seg = abs_err[e : min(e + window, n)]
        tail += float(seg.sum())
        excess += float(np.maximum(seg - baseline, 0.0).sum())
    return LagReport(tail_auc=tail, excess_auc=excess, baseline=baseline,
                     window=window, event_count=len(times))


# ---------------------------------------------------------------------------
# reduced-form proxy regression


@dataclass
class ProxyFit:
    form: str
    c: float
    rho: float
    alpha: float
    beta: float
    r2: float
    rmse: float
    mae: float
    n_train: int
    n_test: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "form": self.form, "c": self.c, "rho": self.rho, "alpha": self.alpha,
            "beta": self.beta, "r2": self.r2, "rmse": self.rmse, "mae": self.mae,
            "n_train": self.n_train, "n_test": self.n_test, "degenerate": self.degenerate,
        }


def _design(form: str, prev: np.ndarray, x_new: np.ndarray, x_old: np.ndarray) -> np.ndarray:
    cols = [np.ones_like(prev)]
    if form in ("inertia_only", "full"):
        cols.append(prev)
    if form in ("update_only", "full"):
        cols.append(x_new)
        cols.append(x_old)
    return np.stack(cols, axis=1)


def _unpack(form: str, coef: np.ndarray) -> tuple[float, float, float, float]:
    c = float(coef[0])
    if form == "inertia_only":
        return c, float(coef[1]), 0.0, 0.0
    if form == "update_only":
        return c, 0.0, float(coef[1]), float(coef[2])
    return c, float(coef[1]), float(coef[2]), float(coef[3])


def fit_proxy(preds: np.ndarray, x_new: np.ndarray, x_old: np.ndarray, form: str,
              events: EventSet | list[int] | None = None, window: int = 16,
              train_frac: float = 0.7) -> ProxyFit:
    """Least-squares fit of a local recursion to successive predictions.

    Forms: inertia_only (c, rho), update_only (c, alpha, beta), and full
    (c, rho, alpha, beta). When events are given, only steps inside the
    post-event windows are used and the train/test split is by whole events;
    otherwise the aligned tuples are split chronologically.
    """
    if form not in PROXY_FORMS:
        raise ConfigError(f"unknown proxy form '{form}', expected one of {PROXY_FORMS}")
    preds = np.asarray(preds, dtype=np.float64)
    x_new = np.asarray(x_new, dtype=np.float64)
    x_old = np.asarray(x_old, dtype=np.float64)
    if not (preds.shape == x_new.shape == x_old.shape) or preds.ndim != 1:
        raise ConfigError("preds, x_new, x_old must be equal-length 1-d arrays")

    # tuples are indexed by the predicted step t >= 1
    t_idx = np.arange(1, preds.size)
    if events is not None:
        times = events.events if isinstance(events, EventSet) else list(events)
        if not times:
            raise FitError("no events to fit on")
        owner = np.full(preds.size, -1)
        for rank, e in enumerate(times):
            seg = slice(e, min(e + window, preds.size))
            owner[seg] = np.where(owner[seg] == -1, rank, owner[seg])
        keep = owner[t_idx] >= 0
        t_idx = t_idx[keep]
        owners = owner[t_idx]
        n_train_events = max(1, int(math.ceil(train_frac * len(times))))
        if n_train_events >= len(times):
            n_train_events = len(times) - 1
        if n_train_events < 1:
            raise FitError("need at least two events for an event-level split")
        train_mask = owners < n_train_events
    else:
        cut = int(train_frac * t_idx.size)
        train_mask = np.arange(t_idx.size) < cut

    if t_idx.size < 10:
        raise FitError(f"need at least 10 aligned tuples, got {t_idx.size}")

    y = preds[t_idx]
    x = _design(form, preds[t_idx - 1], x_new[t_idx], x_old[t_idx])
    x_train, y_train = x[train_mask], y[train_mask]
    x_test, y_test = x[~train_mask], y[~train_mask]
    if x_train.shape[0] < x.shape[1] or x_test.shape[0] == 0:
        raise FitError(f"split leaves too few tuples ({x_train.shape[0]} train, "
                       f"{x_test.shape[0]} test)")
    # a constant target is reported as a degenerate fit (minimum-norm solution,
    # zero residual, undefined R^2), not as a rank error
    target_constant = float(np.var(y)) < 1e-30
    if not target_constant and np.linalg.matrix_rank(x_train) < x.shape[1]:
        cond = np.linalg.cond(x_train)
        raise FitError(f"rank-deficient design matrix (condition number {cond:.3e})")

    coef, *_ = np.linalg.lstsq(x_train, y_train, rcond=None)
    resid = y_test - x_test @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y_test - y_test.mean()) ** 2).sum())
    degenerate = target_constant or ss_tot < 1e-30
    r2 = float("nan") if degenerate else 1.0 - ss_res / ss_tot
    c, rho, alpha, beta = _unpack(form, coef)
    return ProxyFit(form=form, c=c, rho=rho, alpha=alpha, beta=beta, r2=r2,
                    rmse=math.sqrt(ss_res / resid.size), mae=float(np.abs(resid).mean()),
                    n_train=int(x_train.shape[0]), n_test=int(x_test.shape[0]),
                    degenerate=degenerate)


def window_turnover(series: MultiSeries, lookback: int,
                    num_preds: int) -> tuple[np.ndarray, np.ndarray]:
    """Channel-mean values of the step entering and the step leaving the
    lookback window between consecutive rolling forecasts.

    Prediction i (for step lookback + i) uses the window [i, i + lookback);
    the step entering it is i + lookback - 1 and the step that left is i - 1
    (taken as the first step for i = 0, where no step has left yet).
    """
    ch_mean = series.values.mean(axis=0)
    idx = np.arange(num_preds)
    x_new = ch_mean[idx + lookback - 1]
    x_old = ch_mean[np.maximum(idx - 1, 0)]
    return x_new, x_old


# ---------------------------------------------------------------------------
# distance correlation


def dcor(a: np.ndarray, b: np.ndarray) -> float:
    """Classical distance correlation between two samples of n observations.

    Pairwise Euclidean distance matrices are double-centered; the statistic is
    dCov / sqrt(dVar_a * dVar_b), defined as 0 when either variance vanishes.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] != b.shape[0]:
        raise DomainError(f"dcor: sample counts differ, {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 4:
        raise DomainError(f"dcor needs at least 4 observations, got {a.shape[0]}")

    def centered(x):
        d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
        return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()

    A = centered(a)
    B = centered(b)
    dcov2 = float((A * B).mean())
    dvar_a = float((A * A).mean())
    dvar_b = float((B * B).mean())
    if dvar_a <= 0.0 or dvar_b <= 0.0:
        return 0.0
    ratio = max(dcov2, 0.0) / math.sqrt(dvar_a * dvar_b)
    return min(math.sqrt(ratio), 1.0)


def context_dcor(model: ModelParams, series: MultiSeries,
                 stride: int | None = None) -> dict:
    """Distance correlation between the differenced normalized signal and the
    context sequence, over time steps, per evaluation window.

    Returns the mean and standard deviation across non-overlapping windows.
    """
    if model.variant in ("no_lcontext", "rand_context"):
        raise ConfigError(f"variant '{model.variant}' produces no context sequence")
    stride = stride if stride is not None else model.lookback
    lookback = model.lookback
    n = series.length
    if n < lookback:
        raise ConfigError(f"series of {n} steps is shorter than the lookback {lookback}")
    values = []
    for o in range(0, n - lookback + 1, stride):
        out = generate(NumArray(series.values[:, o : o + lookback]), model.ctx,
                       gated=(model.variant != "no_gating"))
        raw_diff = np.zeros_like(out.xprime.values)
        raw_diff[..., 1:] = np.diff(out.xprime.values, axis=-1)
        values.append(dcor(raw_diff.T, out.context.values.T))
    return {
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "windows": len(values),
        "per_window": [float(v) for v in values],
    }


# ---------------------------------------------------------------------------
# tracking-error bound simulation


@dataclass
class BoundCheck:
    rho: float
    eps_bar: float
    horizon: int
    mode: str
    sup_error: float
    sup_after_burnin: float
    burn_in: int
    bound: float

    def to_dict(self) -> dict:
        return {
            "rho": self.rho, "eps_bar": self.eps_bar, "horizon": self.horizon,
            "mode": self.mode, "sup_error": self.sup_error,
            "sup_after_burnin": self.sup_after_burnin, "burn_in": self.burn_in,
            "bound": self.bound,
        }


def bound_sim(rho: float, eps_bar: float = 1.0, steps: int = 10_000,
              mode: str = "adversarial", seed: int = 0,
              rho_max: float | None = None) -> BoundCheck:
    """Iterate e_t = rho * (e_{t-1} + eps_t) from e_0 = 0 and compare the
    supremum against the steady bound |rho| / (1 - |rho|) * eps_bar.

    Modes: "constant" (eps always +eps_bar), "adversarial" (sign chosen to
    push |e| up), "random" (uniform in [-eps_bar, eps_bar]). With rho_max set,
    the retention coefficient itself is redrawn each step from
    [-rho_max, rho_max] and the bound uses rho_max.
    """
    if mode not in ("constant", "adversarial", "random"):
        raise ConfigError(f"unknown mode '{mode}'")
    if abs(rho) >= 1.0:
        raise DomainError(f"|rho| must be below 1, got {rho}")
    if rho_max is not None and not (0.0 <= rho_max < 1.0):
        raise DomainError(f"rho_max must be in [0, 1), got {rho_max}")
    if eps_bar < 0:
        raise DomainError(f"eps_bar must be >= 0, got {eps_bar}")

    rho_eff = rho_max if rho_max is not None else abs(rho)
    bound = rho_eff / (1.0 - rho_eff) * eps_bar if rho_eff > 0 else 0.0
    if 0.0 < rho_eff < 1.0:
        # after burn_in steps the initial-state term rho^burn_in has decayed below 1e-9
        burn_in = min(steps // 2, int(math.ceil(math.log(1e-9) / math.log(rho_eff))))
    else:
        burn_in = 0

    rng = np.random.default_rng(seed)
    e = 0.0
    sup_all = 0.0
    sup_late = 0.0
    for t in range(1, steps + 1):
        if mode == "constant":
            eps = eps_bar
        elif mode == "adversarial":
            eps = eps_bar if e >= 0 else -eps_bar
        else:
            eps = rng.uniform(-eps_bar, eps_bar)
        r = rng.uniform(-rho_max, rho_max) if rho_max is not None else rho
        e = r * (e + eps)
        a = abs(e)
        if a > sup_all:
            sup_all = a
        if t > burn_in and a > sup_late:
            sup_late = a
    return BoundCheck(rho=rho, eps_bar=eps_bar, horizon=steps, mode=mode,
                      sup_error=sup_all, sup_after_burnin=sup_late,
                      burn_in=burn_in, bound=bound)


# ---------------------------------------------------------------------------
# event-conditioned gate statistics


@dataclass
class GateReport:
    mean_gate_event: float
    mean_gate_nonevent: float
    retained_event: float
    retained_nonevent: float
    frac_pairs_event_higher: float
    num_pairs: int
    event_count: int
    window: int

    def to_dict(self) -> dict:
        return {
            "mean_gate_event": self.mean_gate_event,
            "mean_gate_nonevent": self.mean_gate_nonevent,
            "retained_event": self.retained_event,
            "retained_nonevent": self.retained_nonevent,
            "frac_pairs_event_higher": self.frac_pairs_event_higher,
            "num_pairs": self.num_pairs,
            "event_count": self.event_count,
            "window": self.window,
        }


def gate_event_analysis(model: ModelParams, series: MultiSeries,
                        events: EventSet | list[int], window: int = 3,
                        stride: int | None = None) -> GateReport:
    """Compare gate behavior inside short post-event windows against stable regions.

    Runs forward passes over non-overlapping evaluation windows, splits every
    (channel, evaluation-window) slice into event steps (within ``window``
    steps after an event) and non-event steps, and reports conditional mean
    gate values, retained increment ratios |delta * gate| / (|delta| + eps),
    and the fraction of slices whose event mean strictly exceeds the
    non-event mean.
    """
    if model.variant in ("no_lcontext", "rand_context"):
        raise ConfigError(f"variant '{model.variant}' has no increment gate to analyze")
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    times = events.events if isinstance(events, EventSet) else list(events)
    stride = stride if stride is not None else model.lookback
    lookback = model.lookback
    n = series.length
    if n < lookback:
        raise ConfigError(f"series of {n} steps is shorter than the lookback {lookback}")

    is_event = np.zeros(n, dtype=bool)
    for e in times:
        is_event[e : min(e + window, n)] = True

    origins = list(range(0, n - lookback + 1, stride))
    gate_ev, gate_nev, ret_ev, ret_nev = [], [], [], []
    wins = pairs = 0
    for lo in range(0, len(origins), 64):
        chunk = origins[lo : lo + 64]
        x = np.stack([series.values[:, o : o + lookback] for o in chunk])
        out = generate(NumArray(x), model.ctx, gated=(model.variant != "no_gating"))
        gates = out.gates.values
        aligned = out.aligned.values
        delta = np.zeros_like(aligned)
        delta[..., 1:] = np.diff(aligned, axis=-1)
        retained = np.abs(delta * gates) / (np.abs(delta) + 1e-8)
        for bi, o in enumerate(chunk):
            mask = is_event[o : o + lookback]
            for v in range(series.num_channels):
                ev = gates[bi, v, mask]
                nev = gates[bi, v, ~mask]
                gate_ev.append(ev)
                gate_nev.append(nev)
                ret_ev.append(retained[bi, v, mask])
                ret_nev.append(retained[bi, v, ~mask])
                if ev.size and nev.size:
                    pairs += 1
                    if ev.mean() > nev.mean():
                        wins += 1

    def pooled(parts):
        flat = np.concatenate(parts) if parts else np.empty(0)
        return float(flat.mean()) if flat.size else float("nan")

    return GateReport(
        mean_gate_event=pooled(gate_ev),
        mean_gate_nonevent=pooled(gate_nev),
        retained_event=pooled(ret_ev),
        retained_nonevent=pooled(ret_nev),
        frac_pairs_event_higher=(wins / pairs) if pairs else 0.0,
        num_pairs=pairs,
        event_count=len(times),
        window=window,
    )
