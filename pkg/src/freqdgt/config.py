"""Run and synthetic-cohort configuration, loaded from YAML with strict validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_origin, get_type_hints

import yaml

BANDS = ("delta", "theta", "alpha", "beta", "gamma")
DEFAULT_BAND_EDGES = ((1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 50.0))


class ConfigError(ValueError):
    pass


@dataclass
class FeatureConfig:
    window_s: float = 1.0
    stride_s: float = 1.0
    f_min: float = 1.0
    f_max: float = 50.0
    band_edges_hz: list = field(default_factory=lambda: [list(e) for e in DEFAULT_BAND_EDGES])

    def validate(self):
        if self.window_s <= 0 or self.stride_s <= 0:
            raise ConfigError("window_s and stride_s must be positive")
        if not 0 <= self.f_min < self.f_max:
            raise ConfigError("need 0 <= f_min < f_max")
        if len(self.band_edges_hz) != 5:
            raise ConfigError("band_edges_hz needs five (lo, hi) pairs")


@dataclass
class RunConfig:
    n_classes: int = 2
    scales: list = field(default_factory=lambda: [1, 2, 4, 8])
    cheb_order: int = 4
    gcn_mode: str = "cheb"
    d_g: int = 16
    d_h: int = 32
    d_r: int = 8
    d_e: int = 16
    d_s: int = 8
    n_heads: int = 4
    fap_hidden: int = 16
    disc_hidden: int = 32
    n_blocks: int = 1
    lambda_adv: float = 0.1
    lambda_disc: float = 1.0
    subject_probe: bool = True
    lr: float = 5e-4
    # a near-optimal adversary: several full-batch discriminator updates per main update
    disc_lr: float = 5e-3
    disc_steps: int = 50
    # post-hoc leakage probe: a fresh discriminator fit on frozen z_emo
    probe_steps: int = 2000
    probe_lr: float = 5e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 150
    patience: int = 150
    val_fraction: float = 0.2
    seed: int = 0
    dtype: str = "float32"
    lmax_method: str = "eigh"
    input_scale: str = "bins"
    # component toggles, used by the ablation runner
    fap_attention: bool = True
    fap_softmax: bool = True
    fap_importance: bool = True
    adjacency: str = "dynamic"
    mask_mode: str = "additive"

    def validate(self):
        ints = ("n_classes", "cheb_order", "d_g", "d_h", "d_r", "d_e", "d_s", "n_heads",
                "fap_hidden", "disc_hidden", "n_blocks", "batch_size", "epochs")
        for name in ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if not self.scales or any(s < 1 for s in self.scales):
            raise ConfigError("scales must be a non-empty list of positive ints")
        if self.n_heads % len(self.scales):
            raise ConfigError(f"n_heads={self.n_heads} not divisible by {len(self.scales)} scales")
        if self.d_h % self.n_heads:
            raise ConfigError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.gcn_mode not in ("cheb", "simple"):
            raise ConfigError(f"gcn_mode must be 'cheb' or 'simple', got {self.gcn_mode!r}")
        if self.adjacency not in ("dynamic", "raw", "fixed"):
            raise ConfigError(f"adjacency must be dynamic/raw/fixed, got {self.adjacency!r}")
        if self.mask_mode not in ("additive", "multiplicative"):
            raise ConfigError(f"mask_mode must be additive/multiplicative, got {self.mask_mode!r}")
        if self.lmax_method not in ("eigh", "power"):
            raise ConfigError("lmax_method must be eigh or power")
        if self.input_scale not in ("bins", "none"):
            raise ConfigError("input_scale must be bins or none")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.lambda_adv < 0 or self.lambda_disc < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.disc_steps < 1:
            raise ConfigError("disc_steps must be >= 1")
        if self.probe_steps < 0 or self.probe_lr < 0:
            raise ConfigError("probe_steps and probe_lr must be non-negative")
        if self.lr < 0 or self.disc_lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr, disc_lr and weight_decay must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass
class SynthConfig:
    n_subjects: int = 8
    trials_per_subject_per_class: int = 20
    n_classes: int = 2
    n_channels: int = 16
    sample_rate_hz: float = 250.0
    duration_s: float = 8.0
    # rows: classes, columns: delta..gamma
    emotion_band_gain: list = field(
        default_factory=lambda: [[1.0, 2.0, 0.5, 1.0, 1.0], [1.0, 1.0, 1.0, 2.0, 0.5]]
    )
    base_amplitude: float = 1.0
    amplitude_jitter: float = 0.05
    topography_spread: float = 1.5
    emotion_source_fraction: float = 1.0
    subject_mixing_strength: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self):
        if self.n_subjects < 3:
            raise ConfigError("LOSO needs n_subjects >= 3")
        if self.n_classes < 2 or self.trials_per_subject_per_class < 1:
            raise ConfigError("need n_classes >= 2 and at least one trial per class")
        if self.n_channels < 2:
            raise ConfigError("need at least two channels")
        gains = self.emotion_band_gain
        if len(gains) != self.n_classes or any(len(g) != 5 for g in gains):
            raise ConfigError("emotion_band_gain must be n_classes rows of five band gains")
        if any(g <= 0 for row in gains for g in row):
            raise ConfigError("band gains must be positive")
        if not 0 <= self.subject_mixing_strength <= 1:
            raise ConfigError("subject_mixing_strength must lie in [0, 1]")
        if not 0 < self.emotion_source_fraction <= 1:
            raise ConfigError("emotion_source_fraction must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


def _check_type(name: str, value: Any, hint) -> Any:
    origin = get_origin(hint)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected bool, got {value!r}")
    elif hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected int, got {value!r}")
    elif hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected number, got {value!r}")
        value = float(value)
    elif hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected string, got {value!r}")
    elif hint is list or origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected list, got {value!r}")
        value = list(value)
    return value


def from_dict(cls, doc: dict | None):
    """Build a config dataclass, rejecting unknown keys and wrong types."""
    doc = dict(doc or {})
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = {k: _check_type(k, v, hints[k]) for k, v in doc.items()}
    cfg = cls(**kwargs)
    cfg.validate()
    return cfg


def load_config(path, cls=RunConfig):
    doc = yaml.safe_load(Path(path).read_text())
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(cls, doc)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))


def replace(cfg, **changes):
    new = dataclasses.replace(cfg, **changes)
    new.validate()
    return new
