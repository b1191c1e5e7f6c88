"""Change-aware multivariate time-series forecasting toolkit.

A latent-context generator (residual alignment, gated increments, GRU
integration) conditions a channel-independent patch predictor with learnable
relative positional bases. Training runs on a self-contained reverse-mode
gradient engine, and the diagnostics cover change-event detection, post-event
error accumulation, reduced-form proxy fits, distance correlation, and
tracking-error bound simulation.
"""

from .autodiff import NumArray, OpTape, Tape, backward, grad_check
from .context import ContextParams, generate, init_context_params
from .data import MultiSeries, WindowSample, load_csv, make_windows, save_csv, split
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DomainError,
    FitError,
    LatentcastError,
    NumericError,
)
from .predictor import (
    ModelParams,
    VARIANTS,
    forecast,
    init_model,
    load_model,
    model_grad_check,
    save_model,
)
from .preprocess import NormStats, denormalize, difference, normalize
from .synth import LabeledSeries, RegimeConfig, gen_regime_switch
from .train import AdamState, TrainConfig, TrainHistory, evaluate, optimizer_step, train
from .analysis import (
    BoundCheck,
    EventSet,
    GateReport,
    LagReport,
    ProxyFit,
    bound_sim,
    dcor,
    detect_events,
    fit_proxy,
    gate_event_analysis,
    lag_auc,
)

__version__ = "0.1.0"

__all__ = [
    "NumArray", "OpTape", "Tape", "backward", "grad_check",
    "ContextParams", "generate", "init_context_params",
    "MultiSeries", "WindowSample", "load_csv", "make_windows", "save_csv", "split",
    "ConfigError", "ContractError", "DataError", "DimensionError", "DomainError",
    "FitError", "LatentcastError", "NumericError",
    "ModelParams", "VARIANTS", "forecast", "init_model", "load_model",
    "model_grad_check", "save_model",
    "NormStats", "denormalize", "difference", "normalize",
    "LabeledSeries", "RegimeConfig", "gen_regime_switch",
    "AdamState", "TrainConfig", "TrainHistory", "evaluate", "optimizer_step", "train",
    "BoundCheck", "EventSet", "GateReport", "LagReport", "ProxyFit",
    "bound_sim", "dcor", "detect_events", "fit_proxy", "gate_event_analysis", "lag_auc",
    "__version__",
]
