"""Component ablation table on a synthetic cohort.

    python scripts/ablation_synthetic.py out=runs/ablation run.seed=1
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from freqdgt.config import RunConfig, SynthConfig
from freqdgt.harness import ablate, format_ablation

from _common import cohort, parse_overrides


@dataclass
class Experiment:
    out: str = "runs/ablation"
    synth: SynthConfig = field(default_factory=SynthConfig)
    run: RunConfig = field(default_factory=RunConfig)


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    exp = parse_overrides(Experiment())
    data = cohort(exp.synth, Path(exp.out) / "cohort")
    print(format_ablation(ablate(data, exp.run, Path(exp.out))), end="")


if __name__ == "__main__":
    main()
