"""Relative PSD feature extraction and frequency band masks."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import DEFAULT_BAND_EDGES, FeatureConfig
from .data import FeatureTensor, Manifest, ManifestRow, save_tensor


class ZeroPowerWarning(UserWarning):
    """A channel had no power in the retained range; its row fell back to uniform."""


@dataclass
class RawRecording:
    samples: np.ndarray  # (C, T)
    sample_rate_hz: float
    subject_id: int = 0
    emotion_label: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be (C, T), got {self.samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate_hz

    def save(self, path):
        """Samples only, as ``.npy``; rate and labels live in the dataset manifest."""
        np.save(path, self.samples.astype("<f8"), allow_pickle=False)

    @classmethod
    def load(cls, path, sample_rate_hz: float, subject_id: int = 0,
             emotion_label: int = 0) -> "RawRecording":
        return cls(np.load(path, allow_pickle=False), sample_rate_hz, subject_id, emotion_label)


@dataclass
class BandMaskSet:
    masks: np.ndarray  # (5, F) of 0/1
    band_edges_hz: tuple

    def __len__(self):
        return len(self.masks)


def sliding_windows(rec: RawRecording, window_s: float, stride_s: float) -> list[np.ndarray]:
    if stride_s <= 0:
        raise ValueError("stride must be positive")
    W = int(round(window_s * rec.sample_rate_hz))
    step = int(round(stride_s * rec.sample_rate_hz))
    T = rec.samples.shape[1]
    if W < 1 or W > T:
        raise ValueError(f"window of {W} samples does not fit a recording of {T} samples")
    if step < 1:
        raise ValueError("stride shorter than one sample")
    n = (T - W) // step + 1
    return [rec.samples[:, i * step : i * step + W] for i in range(n)]


def retained_bins(n_samples: int, sample_rate_hz: float, f_min: float, f_max: float):
    """Indices and center frequencies of the rFFT bins inside [f_min, f_max)."""
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate_hz)
    keep = np.flatnonzero((freqs >= f_min) & (freqs < f_max))
    return keep, freqs[keep]


def rpsd(segment: np.ndarray, sample_rate_hz: float, f_min: float = 1.0, f_max: float = 50.0):
    """Hann-tapered periodogram per channel, normalized to unit sum over retained bins.

    Returns ``(rel, freqs, zero_channels)``. Channels with no retained power get a
    uniform row and are listed in ``zero_channels``.
    """
    segment = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    W = segment.shape[-1]
    if W < 2:
        raise ValueError("segment needs at least two samples")
    keep, freqs = retained_bins(W, sample_rate_hz, f_min, f_max)
    if keep.size == 0:
        raise ValueError(f"no frequency bins in [{f_min}, {f_max}) for W={W}")
    spec = np.fft.rfft(segment * np.hanning(W), axis=-1)
    power = np.abs(spec[:, keep]) ** 2
    total = power.sum(axis=-1, keepdims=True)
    zero = np.flatnonzero(total[:, 0] <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = power / total
    rel[zero] = 1.0 / keep.size
    return rel, freqs, zero.tolist()


def band_masks(freq_bin_hz, band_edges_hz=DEFAULT_BAND_EDGES) -> BandMaskSet:
    freq = np.asarray(freq_bin_hz, dtype=np.float64)
    edges = tuple((float(lo), float(hi)) for lo, hi in band_edges_hz)
    for lo, hi in edges:
        if not lo < hi:
            raise ValueError(f"band edge ({lo}, {hi}) is empty")
    for (_, hi), (lo, _) in zip(edges, edges[1:]):
        if lo < hi:
            raise ValueError(f"band edges overlap or are out of order: {edges}")
    masks = np.stack([(freq >= lo) & (freq < hi) for lo, hi in edges]).astype(np.float64)
    return BandMaskSet(masks, edges)


def extract_features(rec: RawRecording, cfg: FeatureConfig | None = None,
                     warnings_out: list | None = None) -> FeatureTensor:
    cfg = cfg or FeatureConfig()
    rows, flagged = [], []
    freqs = None
    for i, seg in enumerate(sliding_windows(rec, cfg.window_s, cfg.stride_s)):
        rel, freqs, zero = rpsd(seg, rec.sample_rate_hz, cfg.f_min, cfg.f_max)
        rows.append(rel)
        flagged += [(i, c) for c in zero]
    if flagged:
        msg = f"{len(flagged)} zero-power (window, channel) rows replaced by uniform"
        warnings.warn(msg, ZeroPowerWarning, stacklevel=2)
        if warnings_out is not None:
            warnings_out.extend(flagged)
    return FeatureTensor(np.stack(rows), cfg.window_s, freqs)


def featurize_dataset(raw: Manifest, out_dir, cfg: FeatureConfig | None = None) -> Manifest:
    """Extract features for every recording of a raw manifest into ``out_dir``."""
    cfg = cfg or FeatureConfig()
    if raw.kind != "raw":
        raise ValueError(f"expected a raw-recording manifest, got kind {raw.kind!r}")
    rate = raw.meta["sample_rate_hz"]
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rows, flagged = [], {}
    for r in raw.rows:
        rec = RawRecording.load(raw.resolve(r), rate, r.subject_id, r.emotion_label)
        zero = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroPowerWarning)
            t = extract_features(rec, cfg, zero)
        if zero:
            flagged[r.trial_id] = len(zero)
        rel = f"features/{r.trial_id}.fdt"
        save_tensor(t, out_dir / rel)
        rows.append(ManifestRow(rel, r.emotion_label, r.subject_id, r.trial_id))
    meta = {"feature_config": asdict(cfg), "zero_power_rows": flagged, "source": str(raw.root)}
    manifest = Manifest(rows, raw.n_classes, "features", out_dir, meta)
    manifest.save()
    return manifest
