"""Write the golden regression values under tests/golden/.

Run once after changing a default that moves the numbers, and commit the diff:

    python scripts/pin_golden.py            # both files
    python scripts/pin_golden.py only=synth # covariance probe only
"""

from __future__ import annotations

import json
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from freqdgt.config import RunConfig, SynthConfig, replace
from freqdgt.harness import run_loso

from _common import cohort, parse_overrides

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
sys.path.insert(0, str(ROOT / "tests"))


@dataclass
class Pin:
    only: str = "all"  # all | synth | loso


def pin_synth():
    from test_synth import _covariance_probe_accuracy
    from freqdgt.synth import generate_subject

    cfg = replace(SynthConfig(), n_subjects=4)
    recs = {s: generate_subject(cfg, s) for s in range(cfg.n_subjects)}
    doc = {"covariance_probe_accuracy": _covariance_probe_accuracy(recs)}
    (GOLDEN / "synth_probe.json").write_text(json.dumps(doc, indent=1) + "\n")
    print("synth_probe", doc)


def pin_loso():
    keys = ("accuracy", "f1", "disc_acc", "probe_acc", "disc_chance")
    with tempfile.TemporaryDirectory() as tmp:
        data = cohort(SynthConfig(), Path(tmp))
        doc = {}
        for name, cfg in (("full", RunConfig()), ("lambda_adv=0", replace(RunConfig(), lambda_adv=0.0))):
            s = run_loso(data, cfg)["summary"]
            doc[name] = {k: s[k]["mean"] for k in keys}
            print(name, doc[name], flush=True)
    (GOLDEN / "loso_default.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def main():
    pin = parse_overrides(Pin())
    GOLDEN.mkdir(parents=True, exist_ok=True)
    if pin.only in ("all", "synth"):
        pin_synth()
    if pin.only in ("all", "loso"):
        pin_loso()


if __name__ == "__main__":
    main()
