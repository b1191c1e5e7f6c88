"""Command-line entry point: data generation, training, evaluation, diagnostics.

Configuration is a flat key=value namespace: built-in defaults, overridden by
an optional config file (UTF-8 key=value lines, # comments), overridden by
command-line flags. The effective configuration is echoed into every output
directory. All reports are JSON; all traces are CSV; errors go to stderr with
a stable "error:" prefix and a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    context_dcor,
    dcor,
    detect_events,
    fit_proxy,
    gate_event_analysis,
    lag_auc,
    window_turnover,
    PROXY_FORMS,
)
from .data import load_csv, make_windows, split
from .errors import ConfigError, DimensionError, LatentcastError
from .predictor import init_model, load_model, model_grad_check, save_model
from .synth import RegimeConfig, gen_regime_switch, load_labels, save_labeled
from .train import TrainConfig, evaluate, rolling_forecasts, train
from . import analysis

DEFAULTS: dict[str, object] = {
    # synthetic generator
    "seed": 0, "length": 8000, "slope": 0.01, "noise_std": 0.1, "offset": 3.0,
    "min_dwell": 100, "max_dwell": 300, "channels": 1,
    # model architecture
    "lookback": 96, "horizon": 96, "patch_len": 16, "pos_bases": 2, "hidden": 128,
    "kernel_size": 3, "variant": "full",
    # training
    "lr": 1e-4, "batch_size": 16, "max_epochs": 50, "patience": 3, "stride": 1,
    "train_frac": 0.7, "val_frac": 0.1,
    # diagnostics
    "percentile": 90.0, "min_gap": 16, "event_window": 16, "gate_window": 3,
    "rho": 0.5, "eps_bar": 1.0, "steps": 100000, "mode": "adversarial",
    "step": 1e-5, "tol": 1e-4,
}

_VARIANT_ALIASES = {
    "full": "full",
    "no-lcontext": "no_lcontext", "no_lcontext": "no_lcontext",
    "no-gating": "no_gating", "no_gating": "no_gating",
    "rand-context": "rand_context", "rand_context": "rand_context",
    "no-relpos": "no_relpos", "no_relpos": "no_relpos",
    "global-pos": "global_pos", "global_pos": "global_pos",
    "abs-pos": "abs_pos_encoding", "abs_pos": "abs_pos_encoding",
    "abs-pos-encoding": "abs_pos_encoding", "abs_pos_encoding": "abs_pos_encoding",
}


def parse_config_file(path) -> dict:
    """Read key=value lines; unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = value
    return values


def _coerce(key: str, value) -> object:
    if isinstance(value, str):
        kind = type(DEFAULTS[key])
        try:
            if kind is int:
                return int(value)
            if kind is float:
                return float(value)
        except ValueError:
            raise ConfigError(f"config key '{key}': cannot parse {value!r}") from None
        return value
    return value


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            cfg[key] = _coerce(key, value)
    for key in DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = _coerce(key, flag_value)
    variant = str(cfg["variant"])
    if variant not in _VARIANT_ALIASES:
        raise ConfigError(f"unknown variant '{variant}'")
    cfg["variant"] = _VARIANT_ALIASES[variant]
    if cfg["variant"] in ("no_relpos", "abs_pos_encoding"):
        cfg["pos_bases"] = 0
    return cfg


def write_config_echo(cfg: dict, path: Path) -> None:
    lines = [f"{key}={cfg[key]}" for key in sorted(cfg)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _print_table(headers: list[str], rows: list[list[str]]) -> None:
    widths = [max(len(str(r[i])) for r in [headers] + rows) for i in range(len(headers))]
    for row in [headers] + rows:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)))


def _load_test_split(dataset, cfg, lookback: int, horizon: int):
    series = load_csv(dataset)
    _, _, test = split(series, cfg["train_frac"], cfg["val_frac"],
                       min_len=lookback + horizon)
    return series, test


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg, out: Path) -> None:
    rc = RegimeConfig(slope=cfg["slope"], noise_std=cfg["noise_std"], offset=cfg["offset"],
                      min_dwell=cfg["min_dwell"], max_dwell=cfg["max_dwell"],
                      length=cfg["length"], seed=cfg["seed"], channels=cfg["channels"])
    labeled = gen_regime_switch(rc)
    csv_path = out / "synthetic.csv"
    labels_path = out / "synthetic_labels.json"
    save_labeled(labeled, csv_path, labels_path)
    print(csv_path)
    print(labels_path)


def cmd_train(args, cfg, out: Path) -> None:
    series = load_csv(args.dataset)
    lookback, horizon = cfg["lookback"], cfg["horizon"]
    tr, va, te = split(series, cfg["train_frac"], cfg["val_frac"],
                       min_len=lookback + horizon)
    model = init_model(series.num_channels, lookback, horizon,
                       patch_len=cfg["patch_len"], num_bases=cfg["pos_bases"],
                       hidden=cfg["hidden"], kernel_size=cfg["kernel_size"],
                       variant=cfg["variant"], seed=cfg["seed"])
    tcfg = TrainConfig(lr=cfg["lr"], batch_size=cfg["batch_size"],
                       max_epochs=cfg["max_epochs"], patience=cfg["patience"],
                       seed=cfg["seed"], stride=cfg["stride"])
    model, history = train(model, tr, va, tcfg)
    save_model(model, out / "checkpoint.npz")
    history.to_csv(out / "history.csv")
    test_metrics = evaluate(model, make_windows(te, lookback, horizon))
    _write_json({"test": test_metrics, "best_epoch": history.best_epoch,
                 "epochs": history.num_epochs(), "variant": model.variant},
                out / "metrics.json")
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    print(f"test mse={test_metrics['mse']:.6f} mae={test_metrics['mae']:.6f} "
          f"mape={test_metrics['mape']:.4f}")


def cmd_eval(args, cfg, out: Path) -> None:
    model = load_model(args.checkpoint)
    series = load_csv(args.dataset)
    if series.num_channels != model.num_channels:
        raise DimensionError(f"dataset has {series.num_channels} channels, "
                             f"checkpoint expects {model.num_channels}")
    _, _, te = split(series, cfg["train_frac"], cfg["val_frac"],
                     min_len=model.lookback + model.horizon)
    windows = make_windows(te, model.lookback, model.horizon)
    if args.horizons:
        horizons = [int(h) for h in str(args.horizons).split(",")]
    else:
        horizons = [model.horizon]
    blocks = {}
    rows = []
    for h in horizons:
        metrics = evaluate(model, windows, horizon=h)
        blocks[str(h)] = metrics
        rows.append([h, f"{metrics['mse']:.6f}", f"{metrics['mae']:.6f}",
                     f"{metrics['mape']:.4f}"])
    _write_json({"horizons": blocks}, out / "metrics_eval.json")
    _print_table(["horizon", "mse", "mae", "mape"], rows)


def cmd_lag(args, cfg, out: Path) -> None:
    checkpoints = args.checkpoint
    models = [load_model(path) for path in checkpoints]
    lb, hz = models[0].lookback, models[0].horizon
    for m in models[1:]:
        if (m.lookback, m.horizon) != (lb, hz):
            raise ConfigError("all checkpoints must share lookback and horizon")
    _, te = _load_test_split(args.dataset, cfg, lb, hz)

    errors = {}
    truth_slice = None
    for path, model in zip(checkpoints, models):
        preds, offset = rolling_forecasts(model, te)
        truth_slice = te.values[:, offset : offset + preds.shape[1]]
        errors[Path(path).stem + f"[{model.variant}]"] = np.abs(preds - truth_slice).mean(axis=0)
    events = detect_events(truth_slice, percentile=cfg["percentile"], min_gap=cfg["min_gap"])

    reports = {name: lag_auc(err, events, window=cfg["event_window"])
               for name, err in errors.items()}
    _write_json({"events": events.to_dict(),
                 "reports": {name: rep.to_dict() for name, rep in reports.items()}},
                out / "lag_report.json")

    with (out / "lag_trace.csv").open("w", encoding="utf-8") as fh:
        names = list(errors)
        fh.write("step,score,is_event," + ",".join(f"abs_err_{n}" for n in names) + "\n")
        in_window = np.zeros(truth_slice.shape[1], dtype=bool)
        for e in events.events:
            in_window[e : e + cfg["event_window"]] = True
        for t in range(truth_slice.shape[1]):
            cells = [str(t), repr(float(events.scores[t])), str(int(in_window[t]))]
            cells += [repr(float(errors[n][t])) for n in names]
            fh.write(",".join(cells) + "\n")

    rows = [[name, f"{rep.tail_auc:.4f}", f"{rep.excess_auc:.4f}", f"{rep.baseline:.6f}",
             rep.event_count] for name, rep in reports.items()]
    _print_table(["checkpoint", "tail_auc", "excess_auc", "baseline", "events"], rows)


def cmd_proxy(args, cfg, out: Path) -> None:
    model = load_model(args.checkpoint)
    _, te = _load_test_split(args.dataset, cfg, model.lookback, model.horizon)
    preds, offset = rolling_forecasts(model, te)
    scalar_preds = preds.mean(axis=0)
    truth_slice = te.values[:, offset : offset + preds.shape[1]]
    events = detect_events(truth_slice, percentile=cfg["percentile"], min_gap=cfg["min_gap"])
    x_new, x_old = window_turnover(te, model.lookback, preds.shape[1])

    forms = [args.form] if args.form else list(PROXY_FORMS)
    fits = {form: fit_proxy(scalar_preds, x_new, x_old, form, events=events,
                            window=cfg["event_window"]) for form in forms}
    _write_json({"events": events.to_dict(),
                 "fits": {form: fit.to_dict() for form, fit in fits.items()}},
                out / "proxy_report.json")
    rows = [[form, f"{f.c:.4f}", f"{f.rho:.4f}", f"{f.alpha:.4f}", f"{f.beta:.4f}",
             "nan" if f.degenerate else f"{f.r2:.4f}", f"{f.rmse:.4f}", f"{f.mae:.4f}"]
            for form, f in fits.items()]
    _print_table(["form", "c", "rho", "alpha", "beta", "r2", "rmse", "mae"], rows)


def cmd_dcor(args, cfg, out: Path) -> None:
    if args.series_a:
        if not args.series_b:
            raise ConfigError("dcor needs both --a and --b, or --checkpoint with a dataset")
        a = load_csv(args.series_a).values.T
        b = load_csv(args.series_b).values.T
        if a.shape[0] != b.shape[0]:
            raise ConfigError(f"series lengths differ: {a.shape[0]} vs {b.shape[0]}")
        value = dcor(a, b)
        _write_json({"dcor": value}, out / "dcor_report.json")
        print(f"dcor={value:.6f}")
    elif args.checkpoint and args.dataset:
        model = load_model(args.checkpoint)
        _, te = _load_test_split(args.dataset, cfg, model.lookback, model.horizon)
        report = context_dcor(model, te)
        _write_json(report, out / "dcor_report.json")
        print(f"dcor mean={report['mean']:.4f} std={report['std']:.4f} "
              f"windows={report['windows']}")
    else:
        raise ConfigError("dcor needs either --a/--b files or --checkpoint and a dataset")


def cmd_bound(args, cfg, out: Path) -> None:
    rho_max = getattr(args, "rho_max", None)
    payload = {}
    rows = []
    for mode in ("constant", "adversarial", "random"):
        check = analysis.bound_sim(cfg["rho"], eps_bar=cfg["eps_bar"], steps=cfg["steps"],
                                   mode=mode, seed=cfg["seed"], rho_max=rho_max)
        payload[mode] = check.to_dict()
        rows.append([mode, f"{check.sup_error:.10f}", f"{check.sup_after_burnin:.10f}",
                     f"{check.bound:.10f}"])
    _write_json(payload, out / "bound_report.json")
    _print_table(["mode", "sup_error", "sup_after_burnin", "bound"], rows)


def cmd_gate(args, cfg, out: Path) -> None:
    model = load_model(args.checkpoint)
    series = load_csv(args.dataset)
    n = series.length
    test_start = int(n * cfg["train_frac"]) + int(n * cfg["val_frac"])
    te = series.section(test_start, n)
    if args.events:
        switch_times = load_labels(args.events)["switch_times"]
        events = [t - test_start for t in switch_times if 0 <= t - test_start < te.length]
    else:
        events = detect_events(te, percentile=cfg["percentile"], min_gap=cfg["min_gap"]).events
    report = gate_event_analysis(model, te, events, window=cfg["gate_window"])
    _write_json(report.to_dict(), out / "gate_report.json")
    print(f"E[gate|event]={report.mean_gate_event:.4f} "
          f"E[gate|non-event]={report.mean_gate_nonevent:.4f} "
          f"frac_pairs_event_higher={report.frac_pairs_event_higher:.4f} "
          f"(pairs={report.num_pairs}, events={report.event_count})")


def cmd_gradcheck(args, cfg, out: Path) -> None:
    err = model_grad_check(num_channels=cfg["channels"], lookback=cfg["lookback"],
                           horizon=cfg["horizon"], patch_len=cfg["patch_len"],
                           num_bases=cfg["pos_bases"], hidden=cfg["hidden"],
                           variant=cfg["variant"], seed=cfg["seed"], step=cfg["step"])
    ok = err < cfg["tol"]
    _write_json({"max_rel_error": err, "tolerance": cfg["tol"], "passed": ok},
                out / "gradcheck_report.json")
    print(f"max relative gradient error {err:.3e} (tolerance {cfg['tol']:.1e})")
    if not ok:
        raise LatentcastError(f"gradient check failed: {err:.3e} >= {cfg['tol']:.1e}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub, *keys, positional=()):
    for name in positional:
        sub.add_argument(name)
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--outdir", help="output directory (default runs/<command>)")
    flags = {
        "seed": int, "length": int, "slope": float, "noise_std": float, "offset": float,
        "min_dwell": int, "max_dwell": int, "channels": int,
        "lookback": int, "horizon": int, "patch_len": int, "pos_bases": int,
        "hidden": int, "kernel_size": int, "variant": str,
        "lr": float, "batch_size": int, "max_epochs": int, "patience": int, "stride": int,
        "train_frac": float, "val_frac": float,
        "percentile": float, "min_gap": int, "event_window": int, "gate_window": int,
        "rho": float, "eps_bar": float, "steps": int, "mode": str,
        "step": float, "tol": float,
    }
    for key in keys:
        sub.add_argument("--" + key.replace("_", "-"), dest=key, type=flags[key])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentcast",
                                     description="change-aware time-series forecasting toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth", help="generate a regime-switching series")
    _add_common(s, "seed", "length", "slope", "noise_std", "offset",
                "min_dwell", "max_dwell", "channels")
    s.set_defaults(func=cmd_synth)

    s = subs.add_parser("train", help="train a model on a CSV dataset")
    _add_common(s, "seed", "lookback", "horizon", "patch_len", "pos_bases", "hidden",
                "kernel_size", "variant", "lr", "batch_size", "max_epochs", "patience",
                "stride", "train_frac", "val_frac", positional=("dataset",))
    s.set_defaults(func=cmd_train)

    s = subs.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(s, "train_frac", "val_frac", positional=("checkpoint", "dataset"))
    s.add_argument("--horizons", help="comma-separated horizons, each within the trained one")
    s.set_defaults(func=cmd_eval)

    s = subs.add_parser("lag", help="post-event error accumulation for checkpoints")
    _add_common(s, "percentile", "min_gap", "event_window", "train_frac", "val_frac",
                positional=("dataset",))
    s.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint path (repeat to compare)")
    s.set_defaults(func=cmd_lag)

    s = subs.add_parser("proxy", help="reduced-form proxy regression near events")
    _add_common(s, "percentile", "min_gap", "event_window", "train_frac", "val_frac",
                positional=("checkpoint", "dataset"))
    s.add_argument("--form", choices=PROXY_FORMS)
    s.set_defaults(func=cmd_proxy)

    s = subs.add_parser("dcor", help="distance correlation between series or context")
    _add_common(s, "train_frac", "val_frac")
    s.add_argument("--a", dest="series_a", help="first CSV series")
    s.add_argument("--b", dest="series_b", help="second CSV series")
    s.add_argument("--checkpoint", help="checkpoint for the context protocol")
    s.add_argument("--data", dest="dataset", help="dataset for the context protocol")
    s.set_defaults(func=cmd_dcor)

    s = subs.add_parser("bound", help="tracking-error bound simulation")
    _add_common(s, "rho", "eps_bar", "steps", "seed")
    s.add_argument("--rho-max", dest="rho_max", type=float,
                   help="time-varying retention bound")
    s.set_defaults(func=cmd_bound)

    s = subs.add_parser("gate", help="event-conditioned gate statistics")
    _add_common(s, "percentile", "min_gap", "gate_window", "train_frac", "val_frac",
                positional=("checkpoint", "dataset"))
    s.add_argument("--events", help="labels JSON with ground-truth switch times")
    s.set_defaults(func=cmd_gate)

    s = subs.add_parser("gradcheck", help="finite-difference check of the full model")
    _add_common(s, "seed", "variant", "step", "tol")
    for key, default in (("channels", 3), ("lookback", 16), ("horizon", 4),
                         ("patch_len", 4), ("pos_bases", 2), ("hidden", 8)):
        s.add_argument("--" + key.replace("_", "-"), dest=key, type=int, default=default)
    s.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.outdir) if args.outdir else Path("runs") / args.command
        out.mkdir(parents=True, exist_ok=True)
        write_config_echo(cfg, out / "config.txt")
        args.func(args, cfg, out)
        return 0
    except (LatentcastError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
