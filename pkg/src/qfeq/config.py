"""Experiment configuration: flat INI-style file, parsed and hashed.

Sections mirror the subsystems (``[experiment]``, ``[signal]``, ``[fiber]``,
``[link]``, ``[dsp]``, ``[model]``, ``[train]``).  Every parsed value feeds
the canonical ``section.key=value`` dump whose SHA-256 is the configuration
hash embedded in all artifacts; ``output_dir`` is excluded so moving the
output tree does not invalidate it.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fiber import FiberParams, LinkConfig
from .pipeline import ChannelSpec
from .quantize import QuantScheme, scheme_from_label
from .training import TrainConfig

DEFAULT_CONFIG = """\
[experiment]
output_dir = out
powers_dbm = -4, -3, -2, -1, 0, 1, 2, 3, 4
seeds = 101, 202, 303
train_seed = 7001
schemes = DSP, UQ, PTQ-U4, PTQ-U5, PTQ-U6, PTQ-U7, PTQ-U8, TAQ-6, PTQ-8, APoT-8

[signal]
baud_ghz = 34.4
rolloff = 0.1
rrc_span = 65
train_symbols = 65536
eval_symbols = 65536

[fiber]
loss_db_km = 0.23
dispersion_ps_nm_km = 2.8
gamma_nl = 2.5
span_km = 50
wavelength_um = 1.55

[link]
spans = 9
edfa_nf_db = 5
edfa_gain_db = auto
step_km = 0.1
oversampling = 8
linewidth_khz = 100

[dsp]
cpe_block_len = 128
cpe_test_phases = 64
guard_symbols = 128

[model]
window_len = 81
dense_neurons = 100
share_filters = false

[train]
epochs = 200
batch_size = 256
learning_rate = 0.001
patience = 20
taq_grad = ste
split = 0.8, 0.1, 0.1
"""


@dataclass
class ExperimentConfig:
    channel: ChannelSpec
    powers_dbm: list[float]
    seeds: list[int]
    train_seed: int
    scheme_labels: list[str]
    train_symbols: int
    eval_symbols: int
    window_len: int
    dense_neurons: int
    share_filters: bool
    train: TrainConfig
    split: tuple[float, float, float]
    output_dir: Path
    canonical: str = ""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()[:16]

    def schemes(self) -> list[QuantScheme]:
        return [
            scheme_from_label(lbl)
            for lbl in self.scheme_labels
            if lbl not in ("UQ", "DSP")
        ]


def _get(cp, section, key, cast, fallback=None):
    try:
        raw = cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        if fallback is not None:
            return fallback
        raise ConfigurationError(f"[{section}] {key}: missing required setting")
    try:
        return cast(raw.strip())
    except (ValueError, ConfigurationError) as e:
        raise ConfigurationError(f"[{section}] {key}: {e}") from e


def _floats(raw: str) -> list[float]:
    return [float(t) for t in raw.replace(",", " ").split()]


def _ints(raw: str) -> list[int]:
    return [int(t) for t in raw.replace(",", " ").split()]


def _strs(raw: str) -> list[str]:
    return [t.strip() for t in raw.split(",") if t.strip()]


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_config_text(text: str, output_override: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"config parse error: {e}") from e

    fiber = FiberParams(
        loss_db_km=_get(cp, "fiber", "loss_db_km", float, 0.23),
        dispersion_ps_nm_km=_get(cp, "fiber", "dispersion_ps_nm_km", float, 2.8),
        gamma_nl=_get(cp, "fiber", "gamma_nl", float, 2.5),
        length_km=_get(cp, "fiber", "span_km", float, 50.0),
        center_wavelength_um=_get(cp, "fiber", "wavelength_um", float, 1.55),
    )
    gain_raw = _get(cp, "link", "edfa_gain_db", str, "auto")
    gain = None if gain_raw == "auto" else float(gain_raw)
    link = LinkConfig(
        spans=_get(cp, "link", "spans", int, 9),
        fiber=fiber,
        edfa_gain_db=gain,
        edfa_nf_db=_get(cp, "link", "edfa_nf_db", float, 5.0),
        step_km=_get(cp, "link", "step_km", float, 0.1),
        oversampling=_get(cp, "link", "oversampling", int, 8),
    )
    channel = ChannelSpec(
        link=link,
        baud_hz=_get(cp, "signal", "baud_ghz", float, 34.4) * 1e9,
        rolloff=_get(cp, "signal", "rolloff", float, 0.1),
        rrc_span=_get(cp, "signal", "rrc_span", int, 65),
        linewidth_hz=_get(cp, "link", "linewidth_khz", float, 100.0) * 1e3,
        cpe_block_len=_get(cp, "dsp", "cpe_block_len", int, 128),
        cpe_test_phases=_get(cp, "dsp", "cpe_test_phases", int, 64),
        guard_symbols=_get(cp, "dsp", "guard_symbols", int, 128),
    )
    train = TrainConfig(
        epochs=_get(cp, "train", "epochs", int, 200),
        batch_size=_get(cp, "train", "batch_size", int, 256),
        learning_rate=_get(cp, "train", "learning_rate", float, 1e-3),
        patience=_get(cp, "train", "patience", int, 20),
        taq_grad=_get(cp, "train", "taq_grad", str, "ste"),
        seed=0,
    )
    split_list = _get(cp, "train", "split", _floats, [0.8, 0.1, 0.1])
    if len(split_list) != 3:
        raise ConfigurationError("[train] split: need exactly three fractions")

    labels = _get(cp, "experiment", "schemes", _strs, ["DSP", "UQ"])
    for lbl in labels:
        if lbl not in ("UQ", "DSP"):
            scheme_from_label(lbl)  # validate early, with a clear message

    cfg = ExperimentConfig(
        channel=channel,
        powers_dbm=_get(cp, "experiment", "powers_dbm", _floats, [-2.0, 2.0]),
        seeds=_get(cp, "experiment", "seeds", _ints, [101, 202, 303]),
        train_seed=_get(cp, "experiment", "train_seed", int, 7001),
        scheme_labels=labels,
        train_symbols=_get(cp, "signal", "train_symbols", int, 65536),
        eval_symbols=_get(cp, "signal", "eval_symbols", int, 65536),
        window_len=_get(cp, "model", "window_len", int, 81),
        dense_neurons=_get(cp, "model", "dense_neurons", int, 100),
        share_filters=_get(cp, "model", "share_filters", _bool, False),
        train=train,
        split=tuple(split_list),
        output_dir=Path(output_override or _get(cp, "experiment", "output_dir", str, "out")),
    )
    if not cfg.seeds:
        raise ConfigurationError("[experiment] seeds: need at least one seed")
    cfg.canonical = _canonical_dump(cfg)
    return cfg


def load_config(path, output_override: str | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), output_override)


def _canonical_dump(cfg: ExperimentConfig) -> str:
    ch, lk, fb = cfg.channel, cfg.channel.link, cfg.channel.link.fiber
    items = {
        "experiment.powers_dbm": ",".join(f"{p:+.3f}" for p in cfg.powers_dbm),
        "experiment.seeds": ",".join(str(s) for s in cfg.seeds),
        "experiment.train_seed": cfg.train_seed,
        "experiment.schemes": ",".join(cfg.scheme_labels),
        "signal.baud_hz": repr(ch.baud_hz),
        "signal.rolloff": repr(ch.rolloff),
        "signal.rrc_span": ch.rrc_span,
        "signal.train_symbols": cfg.train_symbols,
        "signal.eval_symbols": cfg.eval_symbols,
        "fiber.loss_db_km": repr(fb.loss_db_km),
        "fiber.dispersion_ps_nm_km": repr(fb.dispersion_ps_nm_km),
        "fiber.gamma_nl": repr(fb.gamma_nl),
        "fiber.span_km": repr(fb.length_km),
        "fiber.wavelength_um": repr(fb.center_wavelength_um),
        "link.spans": lk.spans,
        "link.edfa_gain_db": "auto" if lk.edfa_gain_db is None else repr(lk.edfa_gain_db),
        "link.edfa_nf_db": repr(lk.edfa_nf_db),
        "link.step_km": repr(lk.step_km),
        "link.oversampling": lk.oversampling,
        "link.linewidth_hz": repr(ch.linewidth_hz),
        "dsp.cpe_block_len": ch.cpe_block_len,
        "dsp.cpe_test_phases": ch.cpe_test_phases,
        "dsp.guard_symbols": ch.guard_symbols,
        "model.window_len": cfg.window_len,
        "model.dense_neurons": cfg.dense_neurons,
        "model.share_filters": cfg.share_filters,
        "train.epochs": cfg.train.epochs,
        "train.batch_size": cfg.train.batch_size,
        "train.learning_rate": repr(cfg.train.learning_rate),
        "train.patience": cfg.train.patience,
        "train.taq_grad": cfg.train.taq_grad,
        "train.split": ",".join(repr(s) for s in cfg.split),
    }
    return "\n".join(f"{k}={items[k]}" for k in sorted(items))


def train_channel_seed(cfg: ExperimentConfig, power_dbm: float) -> int:
    """Deterministic per-power seed for the training channel realization."""
    key = int(round(power_dbm * 1000)) + 10_000_000
    ss = np.random.SeedSequence(cfg.train_seed, spawn_key=(key,))
    return int(ss.generate_state(1)[0])
