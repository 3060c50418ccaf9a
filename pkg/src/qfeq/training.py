"""Supervised training: full-precision baseline and training-aware quantization.

Training minimizes the mean squared error between the equalizer's four real
outputs and the transmitted symbol pair, with an adaptive-moment (Adam)
optimizer, mini-batches, and early stopping on validation loss.  Everything
is seeded and deterministic.

Training-aware quantization (TAQ) runs the forward pass through quantized
weights and activations while keeping full-precision latent weights.  The
backward pass treats the weight quantizer as identity (straight-through
estimator) or zeroes gradients of weights clipped outside the codebook
range (``clipped-ste``).  Additive-PoT scale and shift (gamma, beta) are
differentiable and receive true analytic gradients.  Uniform codebook
ranges are recalibrated from the latent weights every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, LengthError, ModeError, StateError, TrainingError
from .model import CONV_TAPS, ModelParams, center_symbol_offset, init_params
from .quantize import (
    ACTIVATION_POINTS,
    Codebook,
    ModelQuantization,
    QuantScheme,
    _build_book_for,
    _calibration_intermediates,
    _activation_book,
)
from .signal import ComplexField, SymbolFrame


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    loss: str = "mse"
    optimizer: str = "adam"
    taq_grad: str = "ste"  # "ste" | "clipped-ste"
    patience: int = 20

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.loss != "mse":
            raise ConfigurationError("only mse loss is supported")
        if self.taq_grad not in ("ste", "clipped-ste"):
            raise ConfigurationError("taq_grad must be 'ste' or 'clipped-ste'")


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Supervised (window, target) pairs over a synchronized received field.

    Windows are materialized lazily from the 2-samples-per-symbol field;
    window ``k`` covers samples ``[2k, 2k + window_len)`` and its target is
    the transmitted symbol at the window's center.  Split index ranges are
    contiguous and separated by guard gaps so no window's sample footprint
    crosses a split boundary.
    """

    field: ComplexField
    targets: np.ndarray  # (n_windows, 4) reals
    window_len: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    launch_power_dbm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self._u = np.stack(
            [self.field.x.real, self.field.x.imag, self.field.y.real, self.field.y.imag]
        )

    @property
    def n_windows(self) -> int:
        return self.targets.shape[0]

    def windows(self, idx: np.ndarray) -> np.ndarray:
        """Materialize windows (B, 4, window_len) for the given indices."""
        sv = np.lib.stride_tricks.sliding_window_view(self._u, self.window_len, axis=1)
        return np.ascontiguousarray(sv[:, 2 * np.asarray(idx), :].transpose(1, 0, 2))

    def split_sizes(self) -> tuple[int, int, int]:
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)


def build_dataset(
    tx: SymbolFrame,
    rx_field: ComplexField,
    window_len: int = 81,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
    launch_power_dbm: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Pair equalizer input windows with transmitted target symbols.

    ``rx_field`` must already be synchronized and gain-corrected against
    ``tx`` (symbol instants on even sample indices, unit constellation
    scale); a correlation check guards against unsynchronized input.
    """
    n_sym = min(len(tx), len(rx_field) // 2)
    if n_sym < window_len:
        raise LengthError("not enough symbols for a single window")
    probe = min(n_sym, 4096)
    rx_sym = rx_field.x[: 2 * probe : 2]
    rho = np.abs(np.vdot(tx.x[:probe], rx_sym)) / (
        np.linalg.norm(tx.x[:probe]) * np.linalg.norm(rx_sym) + 1e-30
    )
    if rho < 0.5:
        raise StateError(
            f"rx field does not look synchronized to tx (correlation {rho:.3f});"
            " run dsp.synchronize_scale first"
        )

    center = center_symbol_offset(window_len)
    n_win = min((2 * n_sym - window_len) // 2 + 1, n_sym - center)
    ks = np.arange(n_win)
    targets = np.stack(
        [
            tx.x[ks + center].real,
            tx.x[ks + center].imag,
            tx.y[ks + center].real,
            tx.y[ks + center].imag,
        ],
        axis=1,
    )

    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
        raise ConfigurationError("split must be three nonnegative fractions summing to 1")
    gap = (window_len + 1) // 2  # windows this far apart share no samples
    bounds = np.cumsum(np.array(split) * n_win).astype(int)
    tr = np.arange(0, bounds[0])
    va = np.arange(min(bounds[0] + gap, bounds[1]), bounds[1])
    te = np.arange(min(bounds[1] + gap, bounds[2]), bounds[2])
    f = ComplexField(rx_field.x[: 2 * n_sym], rx_field.y[: 2 * n_sym], rx_field.sample_rate)
    return Dataset(f, targets, window_len, tr, va, te, launch_power_dbm, seed)


# ---------------------------------------------------------------------------
# Forward/backward with optional quantization-in-the-loop
# ---------------------------------------------------------------------------

_TENSOR_NAMES = ("conv_x", "conv_y", "dense_w", "dense_b", "head_w", "head_b")


@dataclass
class TaqState:
    """Mutable quantizers used during training-aware quantization."""

    scheme: QuantScheme
    weight_books: dict = field(default_factory=dict)
    act_books: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)  # per layer, apot only
    beta: dict = field(default_factory=dict)

    def quantize_weights(self, params: ModelParams) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in params.layer_arrays().items():
            book = self.weight_books.get(name)
            out[name] = arr if book is None else book.quantize_array(arr)
        if params.share_filters:
            out["conv_y"] = out["conv_x"]
        return out


def _windows_views(wins: np.ndarray):
    j = wins.shape[-1] - CONV_TAPS + 1
    sv = np.lib.stride_tricks.sliding_window_view(wins, CONV_TAPS, axis=-1)[
        :, :, :j, :
    ]
    return sv  # (B, 4, J, T) with sv[b,ch,j,t] = wins[b,ch,j+t]


def _conv_forward(sv, filt):
    fl = filt[:, ::-1]
    rr = sv[:, 0] @ fl[0]
    ii = sv[:, 1] @ fl[1]
    ri = sv[:, 1] @ fl[0]
    ir = sv[:, 0] @ fl[1]
    return rr - ii, ri + ir


def _conv_tap_grads(d_re, d_im, sv_pair):
    """Gradients for one polarization's (re, im) filter pair."""
    g_re = np.einsum("bj,bjt->t", d_re, sv_pair[:, 0]) + np.einsum(
        "bj,bjt->t", d_im, sv_pair[:, 1]
    )
    g_im = -np.einsum("bj,bjt->t", d_re, sv_pair[:, 1]) + np.einsum(
        "bj,bjt->t", d_im, sv_pair[:, 0]
    )
    return np.stack([g_re[::-1], g_im[::-1]])


def mse_loss_and_grads(
    params: ModelParams,
    windows: np.ndarray,
    targets: np.ndarray,
    taq: Optional[TaqState] = None,
    grad_mode: str = "ste",
):
    """Loss, parameter gradients, and (for TAQ) scale/shift gradients.

    With ``taq`` given, the forward pass uses quantized weights and
    activations; weight gradients pass through the quantizer unchanged
    (``ste``) or are zeroed where the latent weight lies outside the
    codebook range (``clipped-ste``).  Returns ``(loss, grads, aux)`` where
    ``aux`` holds ``gamma``/``beta`` gradients per additive-PoT layer.
    """
    wq = taq.quantize_weights(params) if taq else {
        n: a for n, a in params.layer_arrays().items()
    }
    if params.share_filters and "conv_y" not in wq:
        wq["conv_y"] = wq["conv_x"]

    def act_q(point, v):
        if taq is None:
            return v
        book = taq.act_books.get(point)
        return v if book is None else book.quantize_array(v)

    w_in = act_q("input", windows)
    sv = _windows_views(w_in)
    cx_re, cx_im = _conv_forward(sv[:, 0:2], wq["conv_x"])
    cy_re, cy_im = _conv_forward(sv[:, 2:4], wq["conv_y"])
    z = np.concatenate([cx_re, cx_im, cy_re, cy_im], axis=1)
    z_q = act_q("conv_out", z)
    d_pre = z_q @ wq["dense_w"].T + wq["dense_b"]
    a = np.tanh(d_pre)
    a_q = act_q("tanh_out", a)
    y = a_q @ wq["head_w"].T + wq["head_b"]

    err = y - targets
    loss = float(np.mean(err**2))
    b = windows.shape[0]

    dy = 2.0 * err / (b * 4)
    g_head_w = dy.T @ a_q
    g_head_b = dy.sum(axis=0)
    da = dy @ wq["head_w"]  # straight through the activation quantizer
    dd = da * (1.0 - a**2)
    g_dense_w = dd.T @ z_q
    g_dense_b = dd.sum(axis=0)
    dz = dd @ wq["dense_w"]  # straight through conv_out quantizer
    j = z.shape[1] // 4
    g_conv_x = _conv_tap_grads(dz[:, :j], dz[:, j : 2 * j], sv[:, 0:2])
    g_conv_y = _conv_tap_grads(dz[:, 2 * j : 3 * j], dz[:, 3 * j :], sv[:, 2:4])
    if params.share_filters:
        g_conv_x = g_conv_x + g_conv_y
        g_conv_y = g_conv_x

    grads = {
        "conv_x": g_conv_x,
        "conv_y": g_conv_y,
        "dense_w": g_dense_w,
        "dense_b": g_dense_b,
        "head_w": g_head_w,
        "head_b": g_head_b,
    }

    aux = {"gamma": {}, "beta": {}}
    if taq is not None:
        for name, book in taq.weight_books.items():
            if book is None:
                continue
            if grad_mode == "clipped-ste":
                latent = dict(params.layer_arrays())[name]
                mask = (latent >= book.a) & (latent <= book.c)
                grads[name] = grads[name] * mask
            if book.scheme == "apot":
                g = grads[name]  # dL/d(quantized weight)
                aux["gamma"][name] = float(np.sum(g * (wq[name] - book.beta) / book.gamma))
                aux["beta"][name] = float(np.sum(g))
    return loss, grads, aux


def _forward_loss(params, windows, targets, taq=None) -> float:
    loss, _, _ = mse_loss_and_grads(params, windows, targets, taq=taq)
    return loss


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, shapes: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, values: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            values[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def _check_finite(loss: float, epoch: int, ctx: str):
    if not np.isfinite(loss):
        raise TrainingError(f"{ctx} diverged at epoch {epoch}: loss={loss}")


def train_fp32(dataset: Dataset, cfg: TrainConfig, init: Optional[ModelParams] = None):
    """Full-precision training; returns (params_at_best_val, history).

    ``history`` rows are (epoch, train_mse, val_mse).
    """
    if dataset.n_windows == 0 or len(dataset.train_idx) == 0:
        raise LengthError("dataset has no training windows")
    params = (init.copy(drop_quant=True) if init else init_params(
        dataset.window_len, seed=cfg.seed
    ))
    rng = np.random.default_rng(cfg.seed)
    values = params.layer_arrays()
    opt = Adam({k: v.shape for k, v in values.items()}, cfg.learning_rate)

    val_w = dataset.windows(dataset.val_idx) if len(dataset.val_idx) else None
    val_t = dataset.targets[dataset.val_idx] if len(dataset.val_idx) else None

    best = params.copy()
    best_val = _forward_loss(params, val_w, val_t) if val_w is not None else np.inf
    history = []
    stall = 0
    for epoch in range(1, cfg.epochs + 1):
        run_loss, run_n = 0.0, 0
        for idx in _epoch_batches(len(dataset.train_idx), cfg.batch_size, rng):
            bi = dataset.train_idx[idx]
            loss, grads, _ = mse_loss_and_grads(
                params, dataset.windows(bi), dataset.targets[bi]
            )
            _check_finite(loss, epoch, "train_fp32")
            if params.share_filters:
                grads.pop("conv_y", None)
            opt.step(values, {k: grads[k] for k in values})
            run_loss += loss * len(bi)
            run_n += len(bi)
        train_mse = run_loss / run_n
        val_mse = (
            _forward_loss(params, val_w, val_t) if val_w is not None else train_mse
        )
        _check_finite(val_mse, epoch, "train_fp32")
        history.append((epoch, train_mse, val_mse))
        if val_mse < best_val - 1e-12:
            best_val = val_mse
            best = params.copy()
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    return best, history


def _init_taq_state(scheme: QuantScheme, params: ModelParams, calib: np.ndarray) -> TaqState:
    state = TaqState(scheme)
    _recalibrate_weight_books(state, params, first=True)
    _recalibrate_act_books(state, params, calib)
    return state


def _recalibrate_weight_books(state: TaqState, params: ModelParams, first=False):
    scheme = state.scheme
    for name, arr in params.layer_arrays().items():
        if name.endswith("_b") and not scheme.quantize_biases:
            state.weight_books[name] = None
            continue
        bits = scheme.b1 if name.startswith("conv") else scheme.b2
        if scheme.scheme == "apot" and not first:
            # gamma/beta are trainable: keep them, do not re-derive from range
            from .quantize import build_apot_codebook

            state.weight_books[name] = build_apot_codebook(
                state.gamma[name], state.beta[name], bits, scheme.b0
            )
        else:
            book = _build_book_for(scheme, arr, bits)
            state.weight_books[name] = book
            if book.scheme == "apot":
                state.gamma[name] = book.gamma
                state.beta[name] = book.beta


def _recalibrate_act_books(state: TaqState, params: ModelParams, calib: np.ndarray):
    scheme = state.scheme
    if scheme.activation_bits is None:
        state.act_books = {p: None for p in ACTIVATION_POINTS}
        return
    bits = scheme.activation_bits
    snapped = params.copy(drop_quant=True)
    for name, arr in snapped.layer_arrays().items():
        book = state.weight_books.get(name)
        if book is not None:
            arr[...] = book.quantize_array(arr)
    state.act_books["input"] = _activation_book(calib, bits)
    win_q = state.act_books["input"].quantize_array(calib)
    z, act = _calibration_intermediates(win_q, snapped)
    state.act_books["conv_out"] = _activation_book(z, bits)
    state.act_books["tanh_out"] = _activation_book(act, bits)


def _snap_to_quantized(params: ModelParams, state: TaqState) -> ModelParams:
    out = params.copy(drop_quant=True)
    weight_books = {}
    for name, arr in out.layer_arrays().items():
        book = state.weight_books.get(name)
        if book is None:
            continue
        arr[...] = book.quantize_array(arr)
        weight_books[name] = book
    out.quant = ModelQuantization(state.scheme, weight_books, dict(state.act_books))
    return out


def train_taq(
    dataset: Dataset,
    scheme: QuantScheme,
    cfg: TrainConfig,
    init: Optional[ModelParams] = None,
):
    """Training-aware quantization; returns (quantized_params, history).

    The forward pass runs on quantized weights/activations while Adam
    updates full-precision latent weights through the straight-through
    estimator (or its clipped variant).  Additive-PoT scale/shift train
    with analytic gradients.  The returned model's weights are codebook
    members, with codebooks attached.
    """
    if scheme.mode != "taq":
        raise ModeError(f"scheme {scheme.label!r} is {scheme.mode}, expected taq")
    if dataset.n_windows == 0 or len(dataset.train_idx) == 0:
        raise LengthError("dataset has no training windows")
    latent = (init.copy(drop_quant=True) if init else init_params(
        dataset.window_len, seed=cfg.seed
    ))
    rng = np.random.default_rng(cfg.seed)
    calib = dataset.windows(dataset.train_idx[: min(512, len(dataset.train_idx))])
    state = _init_taq_state(scheme, latent, calib)

    values = latent.layer_arrays()
    shapes = {k: v.shape for k, v in values.items()}
    scalar_keys = []
    if scheme.scheme == "apot":
        for name in state.gamma:
            shapes[f"gamma:{name}"] = ()
            shapes[f"beta:{name}"] = ()
            scalar_keys.append(name)
    opt = Adam(shapes, cfg.learning_rate)

    val_w = dataset.windows(dataset.val_idx) if len(dataset.val_idx) else None
    val_t = dataset.targets[dataset.val_idx] if len(dataset.val_idx) else None

    best = _snap_to_quantized(latent, state)
    best_val = (
        _forward_loss(latent, val_w, val_t, taq=state) if val_w is not None else np.inf
    )
    history = []
    stall = 0
    for epoch in range(1, cfg.epochs + 1):
        run_loss, run_n = 0.0, 0
        for idx in _epoch_batches(len(dataset.train_idx), cfg.batch_size, rng):
            bi = dataset.train_idx[idx]
            loss, grads, aux = mse_loss_and_grads(
                latent,
                dataset.windows(bi),
                dataset.targets[bi],
                taq=state,
                grad_mode=cfg.taq_grad,
            )
            _check_finite(loss, epoch, "train_taq")
            if latent.share_filters:
                grads.pop("conv_y", None)
            step_vals = {k: values[k] for k in values}
            step_grads = {k: grads[k] for k in values}
            if scheme.scheme == "apot":
                for name in scalar_keys:
                    step_vals[f"gamma:{name}"] = np.asarray(state.gamma[name])
                    step_vals[f"beta:{name}"] = np.asarray(state.beta[name])
                    step_grads[f"gamma:{name}"] = np.asarray(aux["gamma"].get(name, 0.0))
                    step_grads[f"beta:{name}"] = np.asarray(aux["beta"].get(name, 0.0))
            opt.step(step_vals, step_grads)
            if scheme.scheme == "apot":
                for name in scalar_keys:
                    g = float(step_vals[f"gamma:{name}"])
                    state.gamma[name] = max(g, 1e-6)
                    state.beta[name] = float(step_vals[f"beta:{name}"])
                _recalibrate_weight_books(state, latent)
            run_loss += loss * len(bi)
            run_n += len(bi)
        train_mse = run_loss / run_n
        val_mse = (
            _forward_loss(latent, val_w, val_t, taq=state)
            if val_w is not None
            else train_mse
        )
        _check_finite(val_mse, epoch, "train_taq")
        history.append((epoch, train_mse, val_mse))
        if val_mse < best_val - 1e-12:
            best_val = val_mse
            best = _snap_to_quantized(latent, state)
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
        _recalibrate_weight_books(state, latent, first=(scheme.scheme != "apot"))
        _recalibrate_act_books(state, latent, calib)
    return best, history


def training_log_lines(history) -> list[str]:
    """CSV lines (epoch, train MSE, validation MSE) for the per-epoch log."""
    lines = ["epoch,train_mse,val_mse"]
    for epoch, tr, va in history:
        lines.append(f"{epoch},{tr:.10e},{va:.10e}")
    return lines
