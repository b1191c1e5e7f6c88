"""Acceptance suite: one test per criterion, each printing a pass line.

The comparison test trains ten small models (two variants, five seeds) and is
the long pole: expect roughly ten minutes on one desktop core. Everything else
finishes in seconds. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from latentcast.analysis import bound_sim, dcor, detect_events, fit_proxy, gate_event_analysis, lag_auc
from latentcast.autodiff import NumArray
from latentcast.data import load_csv, make_windows, split
from latentcast.predictor import init_model, model_grad_check
from latentcast.preprocess import denormalize, normalize
from latentcast.synth import RegimeConfig, gen_regime_switch
from latentcast.train import AdamState, TrainConfig, evaluate, rolling_forecasts, train, train_step


def report(name, detail):
    print(f"PASS {name}: {detail}")


def test_gradient_correctness():
    t0 = time.perf_counter()
    err = model_grad_check(num_channels=3, lookback=16, horizon=4, patch_len=4,
                           num_bases=2, hidden=8, variant="full", seed=0, step=1e-5)
    elapsed = time.perf_counter() - t0
    assert err < 1e-4
    assert elapsed < 30.0
    report("gradient correctness", f"max rel err {err:.2e} in {elapsed:.1f}s")


def test_normalization_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        v = int(rng.integers(1, 9))
        t = int(rng.integers(2, 129))
        scale = 10.0 ** rng.uniform(-3, 3)
        window = rng.normal(size=(v, t)) * scale + rng.normal() * scale
        xp, stats = normalize(NumArray(window))
        back = denormalize(xp, stats)
        worst = max(worst, float(np.max(np.abs(back.values - window))))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9
    assert elapsed < 1.0
    report("normalization round trip", f"worst abs err {worst:.2e} in {elapsed:.2f}s")


def test_tracking_error_bound():
    t0 = time.perf_counter()
    for rho in (0.1, 0.5, 0.9, 0.99):
        bound = rho / (1 - rho)
        for mode in ("adversarial", "random"):
            check = bound_sim(rho, eps_bar=1.0, steps=10_000, mode=mode, seed=1)
            assert check.sup_error <= bound + 1e-12, (rho, mode)
        attained = bound_sim(rho, eps_bar=1.0, steps=10_000, mode="constant")
        assert abs(attained.sup_after_burnin - bound) < 1e-9, rho
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    report("tracking-error bound", f"four retention levels, two noise regimes, "
                                   f"attained at constant noise, in {elapsed:.1f}s")


def test_proxy_fit_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    n = 2000
    x_new = rng.normal(size=n)
    x_old = rng.normal(size=n)
    y = np.zeros(n)
    for t in range(1, n):
        y[t] = 0.2 + 0.3 * y[t - 1] + 0.7 * x_new[t]
    fit = fit_proxy(y, x_new, x_old, "full")
    assert abs(fit.c - 0.2) < 1e-6
    assert abs(fit.rho - 0.3) < 1e-6
    assert abs(fit.alpha - 0.7) < 1e-6
    assert fit.r2 >= 0.999

    m = 400
    noise = rng.normal(size=m)
    white = fit_proxy(noise, rng.normal(size=m), rng.normal(size=m), "inertia_only")
    assert abs(white.rho) < 3 / np.sqrt(m)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    report("proxy-fit oracle", f"coefficients recovered, R2={fit.r2:.6f}, "
                               f"white-noise rho {white.rho:+.4f}, in {elapsed:.1f}s")


def test_dcor_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    a = rng.normal(size=(128, 3))
    assert abs(dcor(a, a) - 1.0) < 1e-9
    assert abs(dcor(a, 2.5 * a - 7.0) - 1.0) < 1e-9
    hits = 0
    values = []
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        value = dcor(r.normal(size=512), r.normal(size=512))
        values.append(value)
        hits += value < 0.2
    assert hits >= 18
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    report("dcor properties", f"self=1, affine=1, independence {hits}/20 below 0.2 "
                              f"(median {np.median(values):.3f}), in {elapsed:.1f}s")


def _informed_events(truth_values, n_true_events):
    """Detection threshold tuned to the known event rate with 5% slack."""
    n = truth_values.shape[1]
    percentile = 100.0 * (1.0 - 1.05 * max(n_true_events, 1) / n)
    return detect_events(truth_values, percentile=percentile, min_gap=2)


def test_event_detection_oracle():
    t0 = time.perf_counter()
    total_detected = total_spurious = 0
    for seed in range(5):
        labeled = gen_regime_switch(RegimeConfig(seed=seed))  # noise 0.1, offset 3.0
        events = _informed_events(labeled.series.values, len(labeled.switch_times))
        detected = np.array(events.events)
        for s in labeled.switch_times:
            assert np.min(np.abs(detected - s)) <= 1, (seed, s)
        spurious = sum(1 for e in detected
                       if min(abs(e - s) for s in labeled.switch_times) > 1)
        total_detected += len(detected)
        total_spurious += spurious
        assert spurious <= 0.10 * len(detected), (seed, spurious, len(detected))
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    report("event detection oracle",
           f"all switches within one step; {total_spurious}/{total_detected} spurious, "
           f"in {elapsed:.1f}s")


def _train_variant(variant, labeled, seed, horizon=24):
    tr, va, te = split(labeled.series, 0.7, 0.1, min_len=96 + horizon)
    model = init_model(1, 96, horizon, patch_len=16, num_bases=2, hidden=128,
                       variant=variant, seed=seed)
    cfg = TrainConfig(lr=1e-3, batch_size=32, max_epochs=20, patience=3, seed=seed)
    model, _ = train(model, tr, va, cfg)
    preds, offset = rolling_forecasts(model, te)
    truth = te.values[:, offset : offset + preds.shape[1]]
    return model, np.abs(preds - truth).mean(axis=0), truth, te


def test_context_lowers_post_event_error_accumulation():
    """Full model vs the no-context ablation, averaged over five seeds."""
    t0 = time.perf_counter()
    tails = {"full": [], "no_lcontext": []}
    excesses = {"full": [], "no_lcontext": []}
    for seed in range(5):
        labeled = gen_regime_switch(RegimeConfig(seed=seed))
        errs = {}
        truth = None
        for variant in ("full", "no_lcontext"):
            _, err, truth, te = _train_variant(variant, labeled, seed)
            errs[variant] = err
        test_start = labeled.series.length - te.length
        n_test_events = sum(1 for s in labeled.switch_times
                            if 0 <= s - test_start - 96 < truth.shape[1])
        events = _informed_events(truth, n_test_events)
        for variant in ("full", "no_lcontext"):
            rep = lag_auc(errs[variant], events, window=16)
            tails[variant].append(rep.tail_auc)
            excesses[variant].append(rep.excess_auc)
    elapsed = time.perf_counter() - t0
    avg_tail = {v: float(np.mean(tails[v])) for v in tails}
    avg_excess = {v: float(np.mean(excesses[v])) for v in excesses}
    assert avg_tail["full"] < avg_tail["no_lcontext"], (avg_tail, tails)
    assert avg_excess["full"] < avg_excess["no_lcontext"], (avg_excess, excesses)
    assert elapsed < 20 * 60
    report("context lowers post-event error",
           f"tail {avg_tail['full']:.2f} < {avg_tail['no_lcontext']:.2f}, "
           f"excess {avg_excess['full']:.2f} < {avg_excess['no_lcontext']:.2f}, "
           f"in {elapsed/60:.1f} min")


def test_overfit_sanity():
    t0 = time.perf_counter()
    series = gen_regime_switch(RegimeConfig(seed=0)).series
    samples = make_windows(series, 96, 24)[:8]
    model = init_model(1, 96, 24, patch_len=16, num_bases=2, hidden=128, seed=0)
    x = np.stack([s.input for s in samples])
    y = np.stack([s.target for s in samples])
    state = AdamState()
    losses = []
    for _ in range(2000):
        losses.append(train_step(model, x, y, state, 1e-3))
        if losses[-1] < 1e-3:
            break
    elapsed = time.perf_counter() - t0
    assert losses[-1] < 1e-3, losses[-1]
    assert elapsed < 120.0
    # smoothed training loss is monotone non-increasing (50-step block means)
    blocks = [float(np.mean(losses[i : i + 50])) for i in range(0, len(losses) - 49, 50)]
    for earlier, later in zip(blocks, blocks[1:]):
        assert later <= earlier * (1 + 1e-6) + 1e-20
    report("overfit sanity", f"train MSE {losses[-1]:.2e} after {len(losses)} steps "
                             f"in {elapsed:.0f}s")


def test_gate_range_and_event_mechanics():
    t0 = time.perf_counter()
    labeled = gen_regime_switch(RegimeConfig(seed=6, length=2000))
    tr, va, te = split(labeled.series, 0.7, 0.1, min_len=40)
    model = init_model(1, 32, 8, patch_len=8, num_bases=2, hidden=32, seed=6)
    model, _ = train(model, tr, va, TrainConfig(lr=1e-3, batch_size=16, max_epochs=3,
                                                patience=3, seed=6))
    from latentcast.context import generate

    out = generate(NumArray(te.values[:, :32]), model.ctx)
    gates = out.gates.values
    assert np.all(gates > 0.0) and np.all(gates < 1.0)

    test_start = labeled.series.length - te.length
    events = [s - test_start for s in labeled.switch_times if 0 <= s - test_start < te.length]
    rep = gate_event_analysis(model, te, events, window=3)
    assert 0.0 <= rep.retained_event <= 1.0
    assert 0.0 <= rep.retained_nonevent <= 1.0
    assert np.isfinite(rep.mean_gate_event)
    assert np.isfinite(rep.mean_gate_nonevent)
    elapsed = time.perf_counter() - t0
    report("gate range and event mechanics",
           f"E[m|event]={rep.mean_gate_event:.3f}, E[m|non-event]={rep.mean_gate_nonevent:.3f}, "
           f"fraction of slices with higher event gate {rep.frac_pairs_event_higher:.2%} "
           f"(reference from the source experiments: 81.25% on ETTh1), in {elapsed:.0f}s")


ETTH1_CANDIDATES = [
    os.environ.get("LATENTCAST_ETTH1", ""),
    "data/ETTh1.csv",
    "ETTh1.csv",
]


def _find_etth1():
    for cand in ETTH1_CANDIDATES:
        if cand and Path(cand).exists():
            return Path(cand)
    return None


def test_optional_etth1_benchmark():
    """Optional: only runs when an ETTh1 CSV is supplied locally.

    A miss against the reference error level is reported, not asserted."""
    path = _find_etth1()
    if path is None:
        pytest.skip("ETTh1 CSV not supplied; optional criterion skipped")
    series = load_csv(path)
    assert series.num_channels == 7
    assert series.length == 17420
    tr, va, te = split(series, 0.7, 0.1, min_len=192)
    model = init_model(7, 96, 96, patch_len=16, num_bases=2, hidden=128, seed=0)
    model, _ = train(model, tr, va, TrainConfig(lr=1e-3, batch_size=32, max_epochs=10,
                                                patience=3, seed=0))
    metrics = evaluate(model, make_windows(te, 96, 96))
    target = 0.368 * 1.25
    verdict = "within" if metrics["mse"] <= target else "ABOVE (reported, not fatal)"
    report("optional ETTh1 benchmark",
           f"test MSE {metrics['mse']:.3f} vs reference ceiling {target:.3f}: {verdict}")
