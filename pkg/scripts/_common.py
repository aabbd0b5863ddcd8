"""Shared helpers for the experiment scripts: key=value overrides and cohort setup."""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import yaml

from freqdgt.config import FeatureConfig, SynthConfig, from_dict, to_dict
from freqdgt.data import Manifest
from freqdgt.features import featurize_dataset
from freqdgt.harness import TrialSet
from freqdgt.synth import generate_cohort


def parse_overrides(cfg, argv=None):
    """Apply ``key=value`` arguments (values parsed as YAML) to a dataclass instance.

    Nested fields use dots: ``run.lambda_adv=0.3``.
    """
    argv = sys.argv[1:] if argv is None else argv
    for arg in argv:
        key, _, raw = arg.partition("=")
        if not _:
            raise SystemExit(f"expected key=value, got {arg!r}")
        target, *path = key.split(".")
        value = yaml.safe_load(raw)
        if path:
            sub = getattr(cfg, target)
            doc = to_dict(sub)
            doc[path[0]] = value
            setattr(cfg, target, from_dict(type(sub), doc))
        else:
            if target not in {f.name for f in dataclasses.fields(cfg)}:
                raise SystemExit(f"unknown option {target!r}")
            setattr(cfg, target, value)
    return cfg


def cohort(synth: SynthConfig, root: Path, features: FeatureConfig | None = None) -> TrialSet:
    """Generate (or reuse) a cohort under ``root`` and return its features."""
    root = Path(root)
    feat = root / "features"
    if (feat / "manifest.json").exists() and (root / "raw" / "synth_config.yaml").exists():
        echoed = yaml.safe_load((root / "raw" / "synth_config.yaml").read_text())
        if echoed == to_dict(synth):
            return TrialSet.from_manifest(Manifest.load(feat))
    raw = generate_cohort(synth, root / "raw", force=True)
    return TrialSet.from_manifest(featurize_dataset(raw, feat, features))
