"""Command-line entry point: ``freqdgt <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as C
from .config import FeatureConfig, RunConfig, SynthConfig

# RunConfig fields that get a dedicated flag; the rest are reachable through --config YAML
RUN_FLAGS = (
    "gcn_mode", "cheb_order", "scales", "lambda_adv", "lambda_disc", "subject_probe",
    "lr", "disc_lr", "disc_steps", "weight_decay", "batch_size", "epochs", "patience",
    "val_fraction", "dtype", "mask_mode", "adjacency", "d_g", "d_h", "n_heads", "n_blocks",
    "probe_steps", "probe_lr",
)


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of ints, got {text!r}") from None


def _band_edges(text: str) -> list:
    # "1-4,4-8,8-13,13-30,30-50"
    try:
        return [[float(a), float(b)] for a, b in (p.split("-") for p in text.split(","))]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad band edges {text!r}; use lo-hi,lo-hi,...") from None


def _add_run_flags(p: argparse.ArgumentParser, seed_required: bool = False):
    p.add_argument("--config", type=Path, help="RunConfig YAML; flags override it")
    p.add_argument("--seed", type=int, required=seed_required, default=None)
    hints = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    for name in RUN_FLAGS:
        flag = "--" + name.replace("_", "-")
        kind = hints[name]
        if kind == "bool":
            p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        elif kind == "list":
            p.add_argument(flag, dest=name, type=_int_list, default=None, metavar="A,B,...")
        else:
            p.add_argument(flag, dest=name, type={"int": int, "float": float}.get(kind, str),
                           default=None)


def run_config_from_args(args) -> RunConfig:
    doc = C.to_dict(C.load_config(args.config)) if args.config else {}
    for name in RUN_FLAGS + ("seed",):
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    return C.from_dict(RunConfig, doc)


def _load_data(path):
    from .data import Manifest
    from .harness import TrialSet
    return TrialSet.from_manifest(Manifest.load(path))


def cmd_synth(args):
    from .synth import generate_cohort
    doc = C.to_dict(C.load_config(args.config, SynthConfig)) if args.config else {}
    for name in ("n_subjects", "trials_per_subject_per_class", "n_channels", "duration_s",
                 "seed", "noise_sigma", "subject_mixing_strength"):
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    cfg = C.from_dict(SynthConfig, doc)
    m = generate_cohort(cfg, args.out, force=args.force)
    print(f"wrote {len(m.rows)} recordings from {len(m.subjects)} subjects to {args.out}")


def cmd_features(args):
    from .data import Manifest
    from .features import featurize_dataset
    doc = C.to_dict(C.load_config(args.config, FeatureConfig)) if args.config else {}
    for name in ("window_s", "stride_s", "f_min", "f_max", "band_edges_hz"):
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    cfg = C.from_dict(FeatureConfig, doc)
    m = featurize_dataset(Manifest.load(args.manifest), args.out, cfg)
    flagged = m.meta["zero_power_rows"]
    print(f"wrote {len(m.rows)} feature tensors to {args.out}"
          + (f" ({len(flagged)} trials with zero-power rows)" if flagged else ""))


def _fold_for(data, cfg, subject):
    from .harness import loso_folds
    for f in loso_folds(data.subjects, data.labels, cfg.val_fraction, cfg.seed):
        if f.held_out_subject == subject:
            return f
    raise SystemExit(f"subject {subject} is not in the dataset")


def cmd_train(args):
    from .harness import train_fold
    cfg = run_config_from_args(args)
    data = _load_data(args.data)
    fold = _fold_for(data, cfg, args.held_out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "steps.jsonl", "w") as steps:
        model, history = train_fold(fold, data, cfg, steps)
    torch.save(model.state_dict(), out / "model.pt")
    C.dump_config(cfg, out / "run_config.yaml")
    (out / "fold.json").write_text(json.dumps({
        "held_out_subject": int(fold.held_out_subject),
        "train_subjects": [int(s) for s in fold.train_subjects],
        "data": str(Path(args.data).resolve()),
    }, indent=1))
    (out / "history.json").write_text(json.dumps(history, indent=1))
    best = max(h["val_acc"] for h in history)
    print(f"trained fold {fold.held_out_subject}: {len(history)} epochs, best val acc {best:.3f}")


def cmd_eval(args):
    from .harness import build_model, evaluate
    run = Path(args.run)
    cfg = C.load_config(run / "run_config.yaml")
    fold = json.loads((run / "fold.json").read_text())
    data = _load_data(args.data or fold["data"])
    model = build_model(cfg, data, fold["train_subjects"])
    model.load_state_dict(torch.load(run / "model.pt"))
    sel = data.subjects == fold["held_out_subject"]
    m = evaluate(model, data.X[sel], data.labels[sel], data.n_classes)
    doc = dataclasses.asdict(m)
    (run / "eval.json").write_text(json.dumps(doc, indent=1))
    print(f"subject {fold['held_out_subject']}: acc {m.accuracy:.3f} f1 {m.f1:.3f}")
    for w in m.warnings:
        print(f"warning: {w}", file=sys.stderr)


def _dump_hook(data, out: Path, adjacency: bool, attention: bool):
    if not (adjacency or attention):
        return None

    def hook(fold, model):
        X = torch.as_tensor(data.X[fold.test_idx], dtype=next(model.parameters()).dtype)
        info = model.inspect(X)
        d = out / f"fold_{fold.held_out_subject:03d}"
        d.mkdir(parents=True, exist_ok=True)
        if adjacency:
            np.save(d / "adj_shallow.npy", info["adj_shallow"].numpy())
            np.save(d / "adj_deep.npy", info["adj_deep"].numpy())
        if attention:
            for s, A in zip(model.mstt.blocks[-1].groups, info["scale_attention"]):
                # mean over trials and heads: (S, S)
                np.save(d / f"attention_scale{s.scale}.npy", A.mean(dim=(0, 1)).numpy())
    return hook


def cmd_loso(args):
    from .harness import file_checksum, format_table, run_loso
    cfg = run_config_from_args(args)
    data = _load_data(args.data)
    out = Path(args.out)
    hook = _dump_hook(data, out, args.dump_adjacency, args.dump_attention)
    result = run_loso(data, cfg, out, fold_hook=hook)
    print(format_table(result), end="")
    print(f"results.json sha256 {file_checksum(out / 'results.json')}")


def cmd_ablate(args):
    from .harness import ablate, format_ablation
    cfg = run_config_from_args(args)
    data = _load_data(args.data)
    print(format_ablation(ablate(data, cfg, args.out)), end="")


def cmd_gradcheck(args):
    from .gradcheck import format_report, grad_check, micro_config
    cfg = micro_config(lambda_adv=args.lambda_adv, lambda_disc=args.lambda_disc)
    report = grad_check(cfg, eps=args.eps, tol=args.tol, seed=args.seed)
    text = format_report(report)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    failed = [r.name for r in report if not r.passed]
    if failed:
        print(f"{len(failed)} tensors failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(args):
    from .report import make_report
    written = make_report(args.run, args.out)
    for p in written:
        print(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqdgt")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-subject cohort")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="SynthConfig YAML")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-subjects", type=int, dest="n_subjects")
    p.add_argument("--trials", type=int, dest="trials_per_subject_per_class")
    p.add_argument("--n-channels", type=int, dest="n_channels")
    p.add_argument("--duration", type=float, dest="duration_s")
    p.add_argument("--noise", type=float, dest="noise_sigma")
    p.add_argument("--mixing", type=float, dest="subject_mixing_strength")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="rPSD feature extraction")
    p.add_argument("--manifest", required=True, type=Path, help="raw manifest or its directory")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="FeatureConfig YAML")
    p.add_argument("--window", type=float, dest="window_s")
    p.add_argument("--stride", type=float, dest="stride_s")
    p.add_argument("--f-min", type=float, dest="f_min")
    p.add_argument("--f-max", type=float, dest="f_max")
    p.add_argument("--bands", type=_band_edges, dest="band_edges_hz", metavar="LO-HI,...")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one LOSO fold")
    p.add_argument("--data", required=True, type=Path, help="feature manifest or its directory")
    p.add_argument("--held-out", required=True, type=int, dest="held_out")
    p.add_argument("--out", required=True, type=Path)
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained fold on its held-out subject")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--data", type=Path, help="defaults to the manifest used for training")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loso", help="full leave-one-subject-out run")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dump-adjacency", action="store_true",
                   help="save per-sample learned adjacencies of each test subject")
    p.add_argument("--dump-attention", action="store_true",
                   help="save mean attention map per scale of each test subject")
    _add_run_flags(p, seed_required=True)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("ablate", help="LOSO for the full model and each ablation")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_run_flags(p, seed_required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every tensor")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-adv", type=float, default=0.1)
    p.add_argument("--lambda-disc", type=float, default=1.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="plots from a loso or ablate output directory")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--out", type=Path, help="defaults to <run>/plots")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (C.ConfigError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
