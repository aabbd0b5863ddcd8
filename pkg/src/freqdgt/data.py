"""Feature tensors, trial records, the on-disk tensor container and dataset manifests.

Container layout (all little-endian)::

    offset  size      field
    0       4         magic  b"FDGT"
    4       1         format version (1)
    5       1         endianness flag (0 = little)
    6       1         element width in bytes (4)
    7       1         reserved (0)
    8       12        S, C, F as uint32
    20      8         window_seconds as float64
    28      8*F       bin-center frequencies as float64
    28+8F   4         CRC32 of bytes [0, 28+8F)
    32+8F   4*S*C*F   payload, row-major float32

The header CRC makes every single-byte corruption of the header detectable.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FDGT"
FORMAT_VERSION = 1
ELEMENT_WIDTH = 4
_FIXED = struct.Struct("<4sBBBBIIId")
MANIFEST_VERSION = 1


class TensorFormatError(ValueError):
    """Base class for malformed tensor container files."""


class BadMagicError(TensorFormatError):
    pass


class HeaderCorruptError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class DimensionMismatchError(TensorFormatError):
    pass


@dataclass
class FeatureTensor:
    """rPSD features of one trial, shape (windows, channels, frequency bins)."""

    data: np.ndarray
    window_seconds: float
    freq_bin_hz: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.freq_bin_hz = np.asarray(self.freq_bin_hz, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3-d array (S, C, F), got shape {self.data.shape}")
        S, C, F = self.data.shape
        if S < 1 or C < 2 or F < 5:
            raise ValueError(f"need S >= 1, C >= 2, F >= 5, got {self.data.shape}")
        if self.freq_bin_hz.shape != (F,):
            raise ValueError(f"freq_bin_hz has {self.freq_bin_hz.size} entries for F={F}")
        if np.any(np.diff(self.freq_bin_hz) <= 0):
            raise ValueError("freq_bin_hz must be strictly increasing")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature tensor contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class TrialRecord:
    features: FeatureTensor
    emotion_label: int
    subject_id: int
    trial_id: str


def header_size(n_bins: int) -> int:
    return _FIXED.size + 8 * n_bins + 4


def save_tensor(t: FeatureTensor, path) -> None:
    path = Path(path)
    S, C, F = t.shape
    head = _FIXED.pack(MAGIC, FORMAT_VERSION, 0, ELEMENT_WIDTH, 0, S, C, F, float(t.window_seconds))
    head += t.freq_bin_hz.astype("<f8").tobytes()
    head += struct.pack("<I", zlib.crc32(head))
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"could not write tensor to {path}: {exc}") from exc


def load_tensor(path) -> FeatureTensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"could not read tensor from {path}: {exc}") from exc

    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _FIXED.size:
        raise HeaderCorruptError(f"{path}: file shorter than fixed header")
    _, version, endian, width, _, S, C, F, window_seconds = _FIXED.unpack_from(raw)
    hsize = _FIXED.size + 8 * F + 4
    if len(raw) < hsize:
        raise HeaderCorruptError(f"{path}: header truncated (F={F})")
    (crc,) = struct.unpack_from("<I", raw, hsize - 4)
    if crc != zlib.crc32(raw[: hsize - 4]):
        raise HeaderCorruptError(f"{path}: header checksum mismatch")
    if version != FORMAT_VERSION or endian != 0 or width != ELEMENT_WIDTH:
        raise HeaderCorruptError(
            f"{path}: unsupported version/endianness/width ({version}, {endian}, {width})"
        )

    expected = S * C * F * ELEMENT_WIDTH
    n_payload = len(raw) - hsize
    if n_payload < expected:
        raise TruncatedPayloadError(
            f"{path}: header declares {S}x{C}x{F} but payload holds {n_payload // ELEMENT_WIDTH} elements"
        )
    if n_payload > expected:
        raise DimensionMismatchError(
            f"{path}: {n_payload - expected} trailing bytes after {S}x{C}x{F} payload"
        )
    bins = np.frombuffer(raw, dtype="<f8", count=F, offset=_FIXED.size)
    data = np.frombuffer(raw, dtype="<f4", count=S * C * F, offset=hsize).reshape(S, C, F)
    try:
        return FeatureTensor(data.astype(np.float64), window_seconds, bins.copy())
    except ValueError as exc:
        raise HeaderCorruptError(f"{path}: {exc}") from exc


@dataclass
class ManifestRow:
    path: str
    emotion_label: int
    subject_id: int
    trial_id: str


@dataclass
class Manifest:
    """A dataset directory index. Paths are relative to ``root``."""

    rows: list[ManifestRow]
    n_classes: int
    kind: str = "features"
    root: Path = field(default_factory=Path)
    meta: dict = field(default_factory=dict)

    @property
    def subjects(self) -> list[int]:
        return sorted({r.subject_id for r in self.rows})

    def resolve(self, row: ManifestRow) -> Path:
        return self.root / row.path

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.json"
        doc = {
            "version": MANIFEST_VERSION,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "meta": self.meta,
            "trials": [vars(r) for r in self.rows],
        }
        path.write_text(json.dumps(doc, indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        doc = json.loads(path.read_text())
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {doc.get('version')!r}")
        rows = [ManifestRow(**r) for r in doc["trials"]]
        for r in rows:
            if not 0 <= r.emotion_label < doc["n_classes"]:
                raise ValueError(f"{path}: label {r.emotion_label} outside [0, {doc['n_classes']})")
        return cls(rows, doc["n_classes"], doc["kind"], path.parent, doc.get("meta", {}))


def load_trials(manifest: Manifest) -> list[TrialRecord]:
    if manifest.kind != "features":
        raise ValueError(f"manifest kind is {manifest.kind!r}; run feature extraction first")
    return [
        TrialRecord(load_tensor(manifest.resolve(r)), r.emotion_label, r.subject_id, r.trial_id)
        for r in manifest.rows
    ]
