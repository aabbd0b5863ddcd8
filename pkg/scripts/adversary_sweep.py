"""Subject leakage of z_emo against adversary weight and discriminator strength.

For every (lambda_adv, disc_steps) pair this reports LOSO accuracy, the
model's own discriminator accuracy on held-out trials of training subjects,
and a freshly trained probe of the same architecture.

    python scripts/adversary_sweep.py lambdas=[0,0.1,0.3] disc_steps=[1,50] folds=4
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from freqdgt.config import RunConfig, SynthConfig, replace
from freqdgt.harness import (
    discriminator_accuracy,
    evaluate,
    fold_seed,
    leakage_probe,
    loso_folds,
    summarize,
    train_fold,
)

from _common import cohort, parse_overrides


@dataclass
class Sweep:
    out: str = "runs/adversary_sweep"
    lambdas: list = field(default_factory=lambda: [0.0, 0.1, 0.3, 1.0])
    disc_steps: list = field(default_factory=lambda: [1, 10, 50])
    folds: int = 8  # first n LOSO folds
    synth: SynthConfig = field(default_factory=SynthConfig)
    run: RunConfig = field(default_factory=RunConfig)


def main():
    sweep = parse_overrides(Sweep())
    out = Path(sweep.out)
    data = cohort(sweep.synth, out / "cohort")
    folds = loso_folds(data.subjects, data.labels, sweep.run.val_fraction,
                       sweep.run.seed)[:sweep.folds]
    rows = []
    print(f"{'lambda':>7} {'steps':>6} {'ACC':>6} {'disc':>6} {'probe':>6} {'time':>6}")
    for lam, steps in itertools.product(sweep.lambdas, sweep.disc_steps):
        cfg = replace(sweep.run, lambda_adv=float(lam), disc_steps=int(steps))
        t0 = time.perf_counter()
        s = fold_summary(data, cfg, folds)
        row = {"lambda_adv": lam, "disc_steps": steps, "accuracy": s["accuracy"]["mean"],
               "disc_acc": s["disc_acc"]["mean"], "probe_acc": s["probe_acc"]["mean"],
               "chance": s["disc_chance"]["mean"], "seconds": time.perf_counter() - t0}
        rows.append(row)
        print(f"{lam:7.2f} {steps:6d} {row['accuracy']:6.3f} {row['disc_acc']:6.3f} "
              f"{row['probe_acc']:6.3f} {row['seconds']:6.0f}", flush=True)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(rows, indent=1))


def fold_summary(data, cfg, folds):
    """Mean/std of accuracy, discriminator and probe accuracy over ``folds``."""
    recs = []
    for f in folds:
        model, _ = train_fold(f, data, cfg)
        m = evaluate(model, data.X[f.test_idx], data.labels[f.test_idx], data.n_classes)
        probe = leakage_probe(model, data, f, cfg.probe_steps, cfg.probe_lr,
                              fold_seed(cfg.seed, f.held_out_subject))
        recs.append({"accuracy": m.accuracy,
                     "disc_acc": discriminator_accuracy(model, data.X[f.val_idx],
                                                        data.subjects[f.val_idx]),
                     "probe_acc": probe["val"], "disc_chance": 1 / len(f.train_subjects)})
    return {k: summarize([r[k] for r in recs]) for k in recs[0]}


if __name__ == "__main__":
    main()
