"""Synthetic multi-subject EEG cohorts with known emotion and subject structure.

Each trial is a sum of one oscillation per band in every source channel. The
class sets the per-band gains, a fixed source topography sets per-channel band
amplitudes, and each subject sees the sources through its own spatial mixing
matrix. Trial phases depend only on (seed, class, trial index), like a shared
stimulus, so with no mixing and no noise every subject records the same signal.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np

from .config import DEFAULT_BAND_EDGES, SynthConfig, dump_config
from .data import Manifest, ManifestRow
from .features import RawRecording

BAND_CENTERS_HZ = tuple(0.5 * (lo + hi) for lo, hi in DEFAULT_BAND_EDGES)

_TOPO, _MIX, _TRIAL, _NOISE = 1, 2, 3, 4


def _rng(cfg: SynthConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *key])


def source_topography(cfg: SynthConfig) -> np.ndarray:
    """Per-channel, per-band amplitude profile ``(C, 5)`` shared by all subjects."""
    return _rng(cfg, _TOPO).lognormal(0.0, cfg.topography_spread, size=(cfg.n_channels, 5))


def mixing_matrix(cfg: SynthConfig, subject_id: int) -> np.ndarray:
    C = cfg.n_channels
    R = _rng(cfg, _MIX, subject_id).normal(size=(C, C)) / np.sqrt(C)
    m = cfg.subject_mixing_strength
    return (1.0 - m) * np.eye(C) + m * R


def trial_sources(cfg: SynthConfig, emotion_label: int, trial_index: int) -> np.ndarray:
    """Unmixed source signals ``(C, T)`` for one class/trial slot."""
    rng = _rng(cfg, _TRIAL, emotion_label, trial_index)
    C = cfg.n_channels
    T = int(round(cfg.duration_s * cfg.sample_rate_hz))
    t = np.arange(T) / cfg.sample_rate_hz
    gains = np.ones((C, 5))
    n_emo = max(1, int(round(cfg.emotion_source_fraction * C)))
    gains[:n_emo] = cfg.emotion_band_gain[emotion_label]
    jitter = rng.lognormal(0.0, cfg.amplitude_jitter, size=5)
    phase = rng.uniform(0.0, 2 * np.pi, size=(C, 5))
    amp = cfg.base_amplitude * source_topography(cfg) * gains * jitter
    waves = np.sin(2 * np.pi * np.asarray(BAND_CENTERS_HZ)[None, :, None] * t + phase[..., None])
    return np.einsum("cb,cbt->ct", amp, waves)


def generate_subject(cfg: SynthConfig, subject_id: int) -> list[RawRecording]:
    """All trials of one subject, ordered by class then trial index."""
    mix = mixing_matrix(cfg, subject_id)
    out = []
    for label in range(cfg.n_classes):
        for k in range(cfg.trials_per_subject_per_class):
            x = mix @ trial_sources(cfg, label, k)
            if cfg.noise_sigma > 0:
                x = x + _rng(cfg, _NOISE, subject_id, label, k).normal(0.0, cfg.noise_sigma, x.shape)
            out.append(RawRecording(x, cfg.sample_rate_hz, subject_id, label))
    return out


def trial_name(subject_id: int, label: int, k: int) -> str:
    return f"s{subject_id:03d}_c{label}_t{k:03d}"


def generate_cohort(cfg: SynthConfig, out_dir, force: bool = False) -> Manifest:
    cfg.validate()
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"{out_dir} is not empty (use force to overwrite)")
        shutil.rmtree(out_dir)
    (out_dir / "raw").mkdir(parents=True)
    rows = []
    for sid in range(cfg.n_subjects):
        recs = generate_subject(cfg, sid)
        per_class = cfg.trials_per_subject_per_class
        for i, rec in enumerate(recs):
            name = trial_name(sid, rec.emotion_label, i % per_class)
            rel = f"raw/{name}.npy"
            rec.save(out_dir / rel)
            rows.append(ManifestRow(rel, rec.emotion_label, sid, name))
    dump_config(cfg, out_dir / "synth_config.yaml")
    meta = {"generator": "synth", "sample_rate_hz": cfg.sample_rate_hz}
    manifest = Manifest(rows, cfg.n_classes, "raw", out_dir, meta)
    manifest.save()
    return manifest
