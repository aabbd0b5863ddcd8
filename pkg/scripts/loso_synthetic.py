"""LOSO on a synthetic cohort with and without the adversary.

    python scripts/loso_synthetic.py out=runs/loso run.lambda_adv=0.1 synth.n_subjects=8
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from freqdgt.config import RunConfig, SynthConfig, replace
from freqdgt.harness import format_table, run_loso

from _common import cohort, parse_overrides


@dataclass
class Experiment:
    out: str = "runs/loso_synthetic"
    synth: SynthConfig = field(default_factory=SynthConfig)
    run: RunConfig = field(default_factory=RunConfig)
    with_baseline: bool = True  # also run lambda_adv = 0


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    exp = parse_overrides(Experiment())
    out = Path(exp.out)
    data = cohort(exp.synth, out / "cohort")
    variants = {"adversarial": exp.run}
    if exp.with_baseline:
        variants["lambda_adv_0"] = replace(exp.run, lambda_adv=0.0)
    for name, cfg in variants.items():
        result = run_loso(data, cfg, out / name)
        print(f"== {name} (lambda_adv={cfg.lambda_adv})")
        print(format_table(result), end="")


if __name__ == "__main__":
    main()
