"""LOSO training and evaluation, metrics, and the ablation runner."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, replace, to_dict
from .data import Manifest, TrialRecord, load_trials
from .disentangle import LossBreakdown, adversarial_step
from .features import band_masks
from .model import FreqDGT

log = logging.getLogger(__name__)

RESULTS_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrialSet:
    """All trials of a dataset stacked into arrays."""

    X: np.ndarray  # (N, S, C, F)
    labels: np.ndarray
    subjects: np.ndarray
    trial_ids: list
    freq_bin_hz: np.ndarray
    n_classes: int

    @classmethod
    def from_trials(cls, trials: list[TrialRecord], n_classes: int) -> "TrialSet":
        if not trials:
            raise ValueError("no trials")
        shapes = {t.features.shape for t in trials}
        if len(shapes) != 1:
            raise ValueError(f"trials have differing feature shapes: {sorted(shapes)}")
        return cls(
            np.stack([t.features.data for t in trials]),
            np.array([t.emotion_label for t in trials]),
            np.array([t.subject_id for t in trials]),
            [t.trial_id for t in trials],
            trials[0].features.freq_bin_hz,
            n_classes,
        )

    @classmethod
    def from_manifest(cls, manifest: Manifest) -> "TrialSet":
        return cls.from_trials(load_trials(manifest), manifest.n_classes)

    def __len__(self):
        return len(self.labels)

    @property
    def n_windows(self) -> int:
        return self.X.shape[1]


@dataclass
class FoldSpec:
    held_out_subject: int
    train_subjects: list
    val_fraction: float = 0.2
    train_idx: np.ndarray = field(default=None, repr=False)
    val_idx: np.ndarray = field(default=None, repr=False)
    test_idx: np.ndarray = field(default=None, repr=False)


def fold_seed(seed: int, held_out: int) -> int:
    return int(np.random.SeedSequence([seed, held_out]).generate_state(1)[0])


def loso_folds(subjects, labels, val_fraction: float = 0.2, seed: int = 0) -> list[FoldSpec]:
    """One fold per subject; the rest is split train/val stratified by (subject, class)."""
    subjects = np.asarray(subjects)
    labels = np.asarray(labels)
    uniq = sorted(set(subjects.tolist()))
    if len(uniq) < 3:
        raise ValueError(f"LOSO needs at least 3 subjects, got {len(uniq)}")
    folds = []
    for held in uniq:
        rng = np.random.default_rng(fold_seed(seed, held))
        train, val = [], []
        for s in uniq:
            if s == held:
                continue
            for c in np.unique(labels[subjects == s]):
                idx = np.flatnonzero((subjects == s) & (labels == c))
                idx = rng.permutation(idx)
                n_val = int(round(val_fraction * len(idx)))
                if len(idx) > 1:
                    n_val = min(max(n_val, 1), len(idx) - 1)
                else:
                    n_val = 0
                val += idx[:n_val].tolist()
                train += idx[n_val:].tolist()
        folds.append(FoldSpec(
            held, [s for s in uniq if s != held], val_fraction,
            np.sort(train), np.sort(val), np.flatnonzero(subjects == held),
        ))
    return folds


@dataclass
class Metrics:
    accuracy: float
    f1: float
    per_class_precision: list
    per_class_recall: list
    confusion: list
    warnings: list = field(default_factory=list)


def compute_metrics(preds, labels, n_classes: int) -> Metrics:
    """Accuracy plus positive-class F1 (binary) or macro F1 (multiclass).

    Classes with no support and no predictions get precision/recall/F1 of 0.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ValueError("cannot evaluate an empty trial set")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(0)
    true_pos = cm.sum(1)
    notes = []
    prec = np.divide(tp, pred_pos, out=np.zeros(n_classes), where=pred_pos > 0)
    rec = np.divide(tp, true_pos, out=np.zeros(n_classes), where=true_pos > 0)
    denom = prec + rec
    f1s = np.divide(2 * prec * rec, denom, out=np.zeros(n_classes), where=denom > 0)
    absent = np.flatnonzero(true_pos == 0).tolist()
    if absent:
        notes.append(f"classes {absent} absent from labels; their F1 counts as 0")
    f1 = f1s[1] if n_classes == 2 else f1s.mean()
    return Metrics(float(tp.sum() / cm.sum()), float(f1), prec.tolist(), rec.tolist(),
                   cm.tolist(), notes)


def _dtype(cfg: RunConfig):
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def build_model(cfg: RunConfig, data: TrialSet, subject_ids, band_edges=None) -> FreqDGT:
    kwargs = {} if band_edges is None else {"band_edges_hz": band_edges}
    masks = band_masks(data.freq_bin_hz, **kwargs).masks
    return FreqDGT(cfg, masks, data.X.shape[2], subject_ids).to(_dtype(cfg))


@torch.no_grad()
def predict(model: FreqDGT, X, batch_size: int = 256) -> np.ndarray:
    model.eval()
    dtype = next(model.parameters()).dtype
    X = torch.as_tensor(np.asarray(X), dtype=dtype)
    out = [model(X[i:i + batch_size]).argmax(-1) for i in range(0, len(X), batch_size)]
    return torch.cat(out).numpy()


def evaluate(model: FreqDGT, X, labels, n_classes: int) -> Metrics:
    """Metrics from the emotion path only; never consults subject labels or the subject bank."""
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty trial set")
    return compute_metrics(predict(model, X), labels, n_classes)


@torch.no_grad()
def discriminator_accuracy(model: FreqDGT, X, subjects) -> float:
    """How well the subject discriminator identifies known subjects from ``z_emo``."""
    model.eval()
    head = model.head
    dtype = next(model.parameters()).dtype
    z = head.emotion_encode(model.embed(torch.as_tensor(np.asarray(X), dtype=dtype)))
    pred = head.discriminator(z).argmax(-1)
    return float((pred == head.subject_indices(subjects)).double().mean())


def _encode(model: FreqDGT, X) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    return model.head.emotion_encode(model.embed(torch.as_tensor(np.asarray(X), dtype=dtype)))


def leakage_probe(model: FreqDGT, data: TrialSet, fold: FoldSpec, steps: int = 2000,
                  lr: float = 5e-3, seed: int = 0) -> dict:
    """Subject leakage of ``z_emo`` measured by a freshly initialised discriminator.

    The probe copies the discriminator architecture, is fit full-batch on frozen,
    standardized training-split embeddings, and is scored on the validation
    split, whose subjects it has seen but whose trials it has not.
    """
    model.eval()
    with torch.no_grad():
        z_tr = _encode(model, data.X[fold.train_idx])
        z_va = _encode(model, data.X[fold.val_idx])
        # standardize with training statistics so the probe sees information, not scale
        mu, sd = z_tr.mean(0), z_tr.std(0).clamp_min(1e-12)
        z_tr, z_va = (z_tr - mu) / sd, (z_va - mu) / sd
    head = model.head
    y_tr = head.subject_indices(data.subjects[fold.train_idx])
    y_va = head.subject_indices(data.subjects[fold.val_idx])
    torch.manual_seed(seed)
    probe = copy.deepcopy(head.discriminator)
    for layer in probe.modules():
        if isinstance(layer, torch.nn.Linear):
            layer.reset_parameters()
    for p in probe.parameters():
        p.requires_grad_(True)
    opt = torch.optim.AdamW(probe.parameters(), lr=lr)
    with torch.enable_grad():
        for _ in range(steps):
            opt.zero_grad()
            torch.nn.functional.cross_entropy(probe(z_tr), y_tr).backward()
            opt.step()
    with torch.no_grad():
        train_acc = float((probe(z_tr).argmax(-1) == y_tr).double().mean())
        val_acc = float((probe(z_va).argmax(-1) == y_va).double().mean()) if len(y_va) else 0.0
    return {"train": train_acc, "val": val_acc}


@torch.no_grad()
def mean_band_weights(model: FreqDGT, X) -> list:
    """Attention times importance per band, averaged over trials and windows."""
    model.eval()
    dtype = next(model.parameters()).dtype
    X = torch.as_tensor(np.asarray(X), dtype=dtype)
    _, A, W = model.fap(X * model.input_scale, return_weights=True)
    return (A * W).flatten(0, -2).mean(0).tolist()


@torch.no_grad()
def _validate(model: FreqDGT, X, labels, n_classes: int):
    if len(labels) == 0:
        return 0.0, 0.0
    model.eval()
    dtype = next(model.parameters()).dtype
    logits = model(torch.as_tensor(np.asarray(X), dtype=dtype))
    y = torch.as_tensor(np.asarray(labels))
    acc = compute_metrics(logits.argmax(-1).numpy(), labels, n_classes).accuracy
    return acc, float(torch.nn.functional.cross_entropy(logits, y))


def train_fold(fold: FoldSpec, data: TrialSet, cfg: RunConfig, step_log=None):
    """Train on ``fold.train_idx``, keep the best-validation-accuracy weights.

    Returns ``(model, history)``; ``history`` has one dict per epoch.
    """
    seed = fold_seed(cfg.seed, fold.held_out_subject)
    torch.manual_seed(seed)
    model = build_model(cfg, data, fold.train_subjects)
    dtype = _dtype(cfg)
    opt_main = torch.optim.AdamW(model.main_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt_disc = torch.optim.AdamW(model.head.disc_parameters(), lr=cfg.disc_lr,
                                 weight_decay=cfg.weight_decay)

    Xtr = torch.as_tensor(data.X[fold.train_idx], dtype=dtype)
    ytr = torch.as_tensor(data.labels[fold.train_idx])
    str_ = torch.as_tensor(data.subjects[fold.train_idx])
    Xval, yval = data.X[fold.val_idx], data.labels[fold.val_idx]
    batch = min(cfg.batch_size, len(Xtr))
    gen = torch.Generator().manual_seed(seed)

    history = []
    best, best_state, since_best = (-1.0, math.inf), None, 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.randperm(len(Xtr), generator=gen)
        parts = []
        for i in range(0, len(order), batch):
            b = order[i:i + batch]
            try:
                br = adversarial_step((Xtr[b], ytr[b], str_[b]), model, opt_main, opt_disc,
                                      cfg.lambda_adv, cfg.lambda_disc, cfg.disc_steps)
            except torch.linalg.LinAlgError as exc:
                # non-finite activations reach the eigensolver before the loss
                raise TrainingDiverged(
                    f"fold {fold.held_out_subject}, epoch {epoch}: non-finite graph ({exc})"
                ) from exc
            if not math.isfinite(br.total):
                raise TrainingDiverged(
                    f"fold {fold.held_out_subject}, epoch {epoch}: non-finite loss {br}"
                )
            parts.append((len(b), br))
            if step_log is not None:
                step_log.write(json.dumps({"fold": fold.held_out_subject, "epoch": epoch,
                                           **asdict(br)}) + "\n")
        n = sum(k for k, _ in parts)
        rec = {k: sum(w * getattr(br, k) for w, br in parts) / n
               for k in ("l_cls", "l_adv", "l_disc", "total")}
        try:
            val_acc, val_loss = _validate(model, Xval, yval, data.n_classes)
        except torch.linalg.LinAlgError as exc:
            raise TrainingDiverged(
                f"fold {fold.held_out_subject}, epoch {epoch}: non-finite graph in validation ({exc})"
            ) from exc
        if not math.isfinite(val_loss):
            raise TrainingDiverged(
                f"fold {fold.held_out_subject}, epoch {epoch}: non-finite validation loss"
            )
        rec.update(epoch=epoch, val_acc=val_acc, val_loss=val_loss,
                   band_weights=mean_band_weights(model, Xval if len(Xval) else data.X[fold.train_idx]))
        history.append(rec)
        # ties on accuracy are broken by validation loss
        if val_acc > best[0] or (val_acc == best[0] and val_loss < best[1] - 1e-4):
            best, best_state, since_best = (val_acc, val_loss), copy.deepcopy(model.state_dict()), 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return model, history


def _best_epoch(history) -> int:
    best, epoch = (-1.0, math.inf), 0
    for r in history:
        if r["val_acc"] > best[0] or (r["val_acc"] == best[0] and r["val_loss"] < best[1] - 1e-4):
            best, epoch = (r["val_acc"], r["val_loss"]), r["epoch"]
    return int(epoch)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std())}


def run_loso(data: TrialSet, cfg: RunConfig, out_dir=None, folds=None, fold_hook=None) -> dict:
    """Full leave-one-subject-out run. Writes ``results.json`` and ``results.txt``
    into ``out_dir`` when given. Std across folds is the population std.

    ``fold_hook(fold, model)`` is called after each fold, e.g. to dump adjacencies."""
    cfg.validate()
    folds = folds or loso_folds(data.subjects, data.labels, cfg.val_fraction, cfg.seed)
    tested = np.sort(np.concatenate([f.test_idx for f in folds]))
    if not np.array_equal(tested, np.arange(len(data))):
        raise AssertionError("LOSO test sets do not partition the dataset")

    step_log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        step_log = open(out_dir / "steps.jsonl", "w")
    records = []
    try:
        for fold in folds:
            model, history = train_fold(fold, data, cfg, step_log)
            m = evaluate(model, data.X[fold.test_idx], data.labels[fold.test_idx], data.n_classes)
            for w in m.warnings:
                warnings.warn(f"fold {fold.held_out_subject}: {w}", stacklevel=2)
            disc = discriminator_accuracy(model, data.X[fold.val_idx], data.subjects[fold.val_idx])
            probe = leakage_probe(model, data, fold, cfg.probe_steps, cfg.probe_lr,
                                  fold_seed(cfg.seed, fold.held_out_subject))
            records.append({
                "held_out_subject": int(fold.held_out_subject),
                "n_train": int(len(fold.train_idx)), "n_val": int(len(fold.val_idx)),
                "n_test": int(len(fold.test_idx)),
                "accuracy": m.accuracy, "f1": m.f1, "confusion": m.confusion,
                "disc_acc": disc, "probe_acc": probe["val"], "probe_train_acc": probe["train"],
                "disc_chance": 1.0 / len(fold.train_subjects),
                "best_epoch": _best_epoch(history),
                "epochs_run": len(history), "history": history, "warnings": m.warnings,
            })
            log.info("fold %d: acc=%.3f f1=%.3f disc=%.3f probe=%.3f", fold.held_out_subject,
                     m.accuracy, m.f1, disc, probe["val"])
            if fold_hook is not None:
                fold_hook(fold, model)
    finally:
        if step_log is not None:
            step_log.close()

    result = {
        "version": RESULTS_VERSION,
        "config": to_dict(cfg),
        "folds": records,
        "summary": {
            "accuracy": summarize([r["accuracy"] for r in records]),
            "f1": summarize([r["f1"] for r in records]),
            "disc_acc": summarize([r["disc_acc"] for r in records]),
            "probe_acc": summarize([r["probe_acc"] for r in records]),
            "disc_chance": summarize([r["disc_chance"] for r in records]),
        },
    }
    if out_dir is not None:
        write_results(result, out_dir)
    return result


def format_table(result: dict) -> str:
    cols = ("accuracy", "f1", "disc_acc", "probe_acc")
    lines = [f"{'subject':>8} {'ACC':>7} {'F1':>7} {'disc':>7} {'probe':>7}"]
    for r in result["folds"]:
        lines.append(f"{r['held_out_subject']:>8} " + " ".join(f"{r[c]:7.3f}" for c in cols))
    s = result["summary"]
    for stat in ("mean", "std"):
        lines.append(f"{stat:>8} " + " ".join(f"{s[c][stat]:7.3f}" for c in cols))
    lines.append(f"chance {s['disc_chance']['mean']:.3f}")
    return "\n".join(lines) + "\n"


def write_results(result: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / "results.json"
    path.write_text(json.dumps(result, indent=1, sort_keys=True))
    (out_dir / "results.txt").write_text(format_table(result))
    return path


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


ABLATION_ROWS = (
    ("w/o Cross-band Attention", {"fap_attention": False}),
    ("w/o Importance Weighting", {"fap_importance": False}),
    ("Fixed Adjacency", {"adjacency": "fixed"}),
    ("w/o Dynamic Learning", {"adjacency": "raw"}),
    ("w/o Multi-scale Transformer", {"scales": None}),
    ("w/o Adversarial Training", {"lambda_adv": 0.0, "lambda_disc": 0.0}),
)
FULL_ROW = "FreqDGT (Full)"


def ablation_configs(cfg: RunConfig, n_windows: int) -> dict:
    """Config per ablation row; each differs from ``cfg`` only by its toggle."""
    out = {}
    for name, change in ABLATION_ROWS:
        change = dict(change)
        if "scales" in change:
            # one group with a band as wide as the sequence is plain full attention
            change["scales"] = [n_windows]
        out[name] = replace(cfg, **change)
    out[FULL_ROW] = cfg
    return out


def ablate(data: TrialSet, cfg: RunConfig, out_dir=None, runs: dict | None = None) -> dict:
    """LOSO for the full model and every single-component ablation.

    ``runs`` may carry already-computed results keyed by row name.
    """
    runs = dict(runs or {})
    rows = {}
    for name, c in ablation_configs(cfg, data.n_windows).items():
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / name.replace("/", "").replace(" ", "_").lower()
        if name not in runs:
            runs[name] = run_loso(data, c, sub)
        s = runs[name]["summary"]
        rows[name] = {"accuracy": s["accuracy"], "f1": s["f1"]}
    table = {"rows": rows, "order": [n for n, _ in ABLATION_ROWS] + [FULL_ROW]}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.json").write_text(json.dumps(table, indent=1, sort_keys=True))
        (Path(out_dir) / "ablation.txt").write_text(format_ablation(table))
    return table


def format_ablation(table: dict) -> str:
    lines = [f"{'setting':<30} {'ACC (std)':>16} {'F1 (std)':>16}"]
    for name in table["order"]:
        r = table["rows"][name]
        lines.append(f"{name:<30} {r['accuracy']['mean']:.3f} ({r['accuracy']['std']:.3f})"
                     f"   {r['f1']['mean']:.3f} ({r['f1']['std']:.3f})")
    return "\n".join(lines) + "\n"
