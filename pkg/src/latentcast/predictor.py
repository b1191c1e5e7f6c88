"""Structure-aided patch predictor and the assembled forecasting model.

The normalized window and its latent context are fused into two slabs, cut
into non-overlapping patches, joined with learnable patch-shared positional
basis rows, mapped row-wise through a shared single-hidden-layer MLP, and
flattened into a shared affine head whose output is denormalized back to the
original scale.

Ablation variants keep the same pipeline and swap one ingredient:

* ``no_lcontext``   - context slab replaced by zeros
* ``no_gating``     - increment gate bypassed (gate values one)
* ``rand_context``  - context replaced by a free learnable (V, T) array
* ``no_relpos``     - no positional basis rows
* ``global_pos``    - one learnable basis row per absolute patch index, added
                      to the data rows instead of appended
* ``abs_pos_encoding`` - fixed sinusoidal values added to the data rows
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumArray
from .errors import ConfigError, DimensionError
from .context import ContextOutput, ContextParams, _uniform, generate, init_context_params
from .preprocess import NormStats, denormalize, normalize

VARIANTS = (
    "full",
    "no_lcontext",
    "no_gating",
    "rand_context",
    "no_relpos",
    "global_pos",
    "abs_pos_encoding",
)

# variants whose positional rows are appended to the patch stack
_APPEND_POS = ("full", "no_lcontext", "no_gating", "rand_context", "no_relpos")


@dataclass
class PredictorParams:
    """Positional bases plus the shared patch MLP and head.

    pos is (V, K, P) for appended bases and (V, 2*ceil(T/P), P) for the
    additive global variant. mlp_w (Q, P) / mlp_b (Q,) and head_w (H, in) /
    head_b (H,) are shared across variables.
    """

    pos: NumArray
    mlp_w: NumArray
    mlp_b: NumArray
    head_w: NumArray
    head_b: NumArray

    def named_arrays(self):
        yield "pred.pos", self.pos
        yield "pred.mlp_w", self.mlp_w
        yield "pred.mlp_b", self.mlp_b
        yield "pred.head_w", self.head_w
        yield "pred.head_b", self.head_b


@dataclass
class ModelParams:
    """All learnable arrays plus the architecture hyperparameters."""

    num_channels: int
    lookback: int
    horizon: int
    patch_len: int
    num_bases: int
    hidden: int
    kernel_size: int
    variant: str
    seed: int
    ctx: ContextParams
    pred: PredictorParams
    rand_context: NumArray | None = None

    @property
    def data_rows(self) -> int:
        return 2 * _num_patches(self.lookback, self.patch_len)

    @property
    def appended_rows(self) -> int:
        return self.pred.pos.shape[1] if self.variant in _APPEND_POS else 0

    @property
    def head_rows(self) -> int:
        return self.data_rows + self.appended_rows

    def named_arrays(self):
        yield from self.ctx.named_arrays()
        yield from self.pred.named_arrays()
        if self.rand_context is not None:
            yield "rand_context", self.rand_context

    def arrays(self):
        for _, arr in self.named_arrays():
            yield arr

    def zero_grad(self) -> None:
        for arr in self.arrays():
            arr.zero_grad()


def _num_patches(t: int, p: int) -> int:
    return -(-t // p)


def init_model(num_channels: int, lookback: int, horizon: int, patch_len: int = 16,
               num_bases: int = 2, hidden: int = 128, kernel_size: int = 3,
               variant: str = "full", seed: int = 0) -> ModelParams:
    """Build a model with fan-in-scaled uniform weights in a fixed draw order."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}', expected one of {VARIANTS}")
    if patch_len < 1:
        raise ConfigError(f"patch length must be >= 1, got {patch_len}")
    if patch_len > lookback:
        raise ConfigError(f"patch length {patch_len} exceeds lookback {lookback}")
    if num_bases < 0:
        raise ConfigError(f"number of positional bases must be >= 0, got {num_bases}")
    if lookback < 2:
        raise ConfigError(f"lookback must be >= 2, got {lookback}")

    rng = np.random.default_rng(seed)
    v, p, q, h = num_channels, patch_len, hidden, horizon
    ctx = init_context_params(v, kernel_size=kernel_size, rng=rng)

    n_rows = 2 * _num_patches(lookback, patch_len)
    if variant == "no_relpos" or variant == "abs_pos_encoding":
        k_pos = 0
    elif variant == "global_pos":
        k_pos = n_rows
    else:
        k_pos = num_bases
    pos = _uniform(rng, (v, k_pos, p), p)
    mlp_w = _uniform(rng, (q, p), p)
    mlp_b = _uniform(rng, (q,), p)
    appended = k_pos if variant in _APPEND_POS else 0
    head_in = (n_rows + appended) * q
    head_w = _uniform(rng, (h, head_in), head_in)
    head_b = _uniform(rng, (h,), head_in)
    pred = PredictorParams(pos, mlp_w, mlp_b, head_w, head_b)

    rand_ctx = None
    if variant == "rand_context":
        rand_ctx = _uniform(rng, (v, lookback), lookback)
    return ModelParams(num_channels=num_channels, lookback=lookback, horizon=horizon,
                       patch_len=patch_len, num_bases=num_bases, hidden=hidden,
                       kernel_size=kernel_size, variant=variant, seed=seed,
                       ctx=ctx, pred=pred, rand_context=rand_ctx)


# ---------------------------------------------------------------------------
# pipeline stages


def fuse(xprime: NumArray, context: NumArray) -> NumArray:
    """Stack the normalized branch and the context into (..., V, 2, T)."""
    xprime, context = ad._lift(xprime), ad._lift(context)
    if xprime.values.shape != context.values.shape:
        raise DimensionError(
            f"fuse: branch {xprime.values.shape} vs context {context.values.shape}"
        )
    return ad.stack([xprime, context], axis=-2)


def unfuse(fused: NumArray) -> tuple[NumArray, NumArray]:
    """Inverse of fuse (values only, for round-trip checks)."""
    return NumArray(fused.values[..., 0, :].copy()), NumArray(fused.values[..., 1, :].copy())


def patchify(fused: NumArray, patch_len: int) -> NumArray:
    """Cut each slab of (..., V, 2, T) into ceil(T/P) patches of length P.

    The final patch is right-padded with zeros when P does not divide T.
    Rows of slab 0 precede rows of slab 1: output is (..., V, 2*ceil(T/P), P).
    """
    fused = ad._lift(fused)
    t = fused.values.shape[-1]
    if patch_len < 1:
        raise ConfigError(f"patch length must be >= 1, got {patch_len}")
    if patch_len > t:
        raise ConfigError(f"patch length {patch_len} exceeds window length {t}")
    n_p = _num_patches(t, patch_len)
    padded = ad.pad_last(fused, 0, n_p * patch_len - t)
    lead = fused.values.shape[:-2]
    return ad.reshape(padded, lead + (2 * n_p, patch_len))


def attach_pos(patches: NumArray, pos: NumArray) -> NumArray:
    """Append the K positional basis rows of each variable below its data rows."""
    patches, pos = ad._lift(patches), ad._lift(pos)
    if pos.values.shape[-1] != patches.values.shape[-1]:
        raise DimensionError(
            f"attach_pos: basis length {pos.values.shape[-1]} vs patch length "
            f"{patches.values.shape[-1]}"
        )
    if pos.values.shape[1] == 0:
        return patches
    if patches.values.ndim == pos.values.ndim + 1:
        pos = ad.broadcast_to(pos, patches.values.shape[:1] + pos.values.shape)
    return ad.concat([patches, pos], axis=-2)


def patch_map(rows: NumArray, params: PredictorParams) -> NumArray:
    """Map every length-P row to Q hidden values with the shared affine + tanh."""
    rows = ad._lift(rows)
    y = ad.matmul(rows, ad.swap_last(params.mlp_w)) + params.mlp_b
    return ad.tanh(y)


def head(hidden_rows: NumArray, params: PredictorParams, stats: NormStats) -> NumArray:
    """Flatten each variable's (rows, Q) block, apply the shared head, denormalize."""
    hidden_rows = ad._lift(hidden_rows)
    lead = hidden_rows.values.shape[:-2]
    r, q = hidden_rows.values.shape[-2:]
    flat = ad.reshape(hidden_rows, lead + (r * q,))
    expected = params.head_w.shape[1]
    if r * q != expected:
        raise DimensionError(f"head: flattened input {r * q} vs weight input {expected}")
    y = ad.matmul(flat, ad.swap_last(params.head_w)) + params.head_b
    return denormalize(y, stats)


def _sinusoid_table(n_rows: int, width: int) -> np.ndarray:
    pe = np.zeros((n_rows, width))
    position = np.arange(n_rows)[:, None]
    idx = np.arange(0, width, 2)
    rates = np.power(10000.0, idx / width)
    pe[:, 0::2] = np.sin(position / rates)
    pe[:, 1::2] = np.cos(position / rates[: pe[:, 1::2].shape[1]])
    return pe


def forward_batch(windows: NumArray, model: ModelParams) -> tuple[NumArray, ContextOutput | None]:
    """Run the variant-resolved pipeline on a (B, V, T) batch.

    Returns the (B, V, H) forecast and, for variants that run the generator,
    its full output (for gate diagnostics).
    """
    windows = ad._lift(windows)
    b, v, t = windows.values.shape
    if v != model.num_channels:
        raise DimensionError(f"forecast: window has {v} channels, model has {model.num_channels}")
    if t != model.lookback:
        raise ConfigError(f"forecast: window length {t} != model lookback {model.lookback}")

    variant = model.variant
    ctx_out = None
    if variant == "no_lcontext":
        xprime, stats = normalize(windows)
        context = NumArray(np.zeros_like(xprime.values))
    elif variant == "rand_context":
        xprime, stats = normalize(windows)
        context = ad.broadcast_to(model.rand_context, (b,) + model.rand_context.values.shape)
    else:
        ctx_out = generate(windows, model.ctx, gated=(variant != "no_gating"))
        xprime, context, stats = ctx_out.xprime, ctx_out.context, ctx_out.stats

    fused = fuse(xprime, context)
    patches = patchify(fused, model.patch_len)
    if variant in _APPEND_POS:
        rows = attach_pos(patches, model.pred.pos)
    elif variant == "global_pos":
        rows = patches + ad.broadcast_to(model.pred.pos, (b,) + model.pred.pos.values.shape)
    else:  # abs_pos_encoding
        rows = patches + NumArray(_sinusoid_table(model.data_rows, model.patch_len))
    hidden_rows = patch_map(rows, model.pred)
    return head(hidden_rows, model.pred, stats), ctx_out


def forecast(window: NumArray, model: ModelParams) -> NumArray:
    """Forecast a single (V, T) window to (V, H); also accepts a (B, V, T) batch."""
    window = ad._lift(window)
    if window.values.ndim == 2:
        batched = ad.reshape(window, (1,) + window.values.shape)
        out, _ = forward_batch(batched, model)
        return ad.reshape(out, out.values.shape[1:])
    if window.values.ndim == 3:
        out, _ = forward_batch(window, model)
        return out
    raise DimensionError(f"forecast expects (V, T) or (B, V, T), got {window.values.shape}")


def model_grad_check(num_channels: int = 3, lookback: int = 16, horizon: int = 4,
                     patch_len: int = 4, num_bases: int = 2, hidden: int = 8,
                     variant: str = "full", seed: int = 0, step: float = 1e-5) -> float:
    """Finite-difference check of the full forward pass over every parameter.

    Builds a model and a random window/target pair, scores the forecast with a
    squared-error loss, and returns the maximum relative disagreement between
    analytic and central-difference gradients.
    """
    model = init_model(num_channels, lookback, horizon, patch_len=patch_len,
                       num_bases=num_bases, hidden=hidden, variant=variant, seed=seed)
    rng = np.random.default_rng(seed + 1)
    window = NumArray(rng.normal(size=(num_channels, lookback)))
    target = NumArray(rng.normal(size=(num_channels, horizon)))

    def loss():
        err = forecast(window, model) - target
        return (err * err).mean()

    return ad.grad_check(loss, model.arrays(), step=step)


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_model(model: ModelParams, path) -> None:
    """Write one .npz artifact: a JSON header plus named arrays in declaration order."""
    header = {
        "num_channels": model.num_channels,
        "lookback": model.lookback,
        "horizon": model.horizon,
        "patch_len": model.patch_len,
        "num_bases": model.num_bases,
        "hidden": model.hidden,
        "kernel_size": model.kernel_size,
        "variant": model.variant,
        "seed": model.seed,
    }
    arrays = {name: arr.values for name, arr in model.named_arrays()}
    np.savez(path, __header__=np.array(json.dumps(header)), **arrays)


def load_model(path) -> ModelParams:
    """Rebuild a model from save_model output, bit-exact."""
    with np.load(path) as bundle:
        header = json.loads(str(bundle["__header__"]))
        stored = {name: bundle[name] for name in bundle.files if name != "__header__"}
    model = init_model(
        num_channels=header["num_channels"], lookback=header["lookback"],
        horizon=header["horizon"], patch_len=header["patch_len"],
        num_bases=header["num_bases"], hidden=header["hidden"],
        kernel_size=header["kernel_size"], variant=header["variant"], seed=header["seed"],
    )
    for name, arr in model.named_arrays():
        if name not in stored:
            raise ConfigError(f"checkpoint is missing array '{name}'")
        if stored[name].shape != arr.values.shape:
            raise ConfigError(
                f"checkpoint array '{name}' has shape {stored[name].shape}, "
                f"expected {arr.values.shape}"
            )
        arr.values = stored[name].astype(np.float64)
    return model
