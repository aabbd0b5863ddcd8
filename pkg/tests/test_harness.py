import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from freqdgt.config import RunConfig, replace, to_dict
from freqdgt.disentangle import DisentangleHead
from freqdgt.gradcheck import MICRO_BINS, micro_config
from freqdgt.harness import (
    ABLATION_ROWS,
    FULL_ROW,
    TrainingDiverged,
    TrialSet,
    ablate,
    ablation_configs,
    compute_metrics,
    evaluate,
    file_checksum,
    leakage_probe,
    loso_folds,
    run_loso,
    summarize,
    train_fold,
)


def _tiny(n_subjects=3, per_class=4, seed=0):
    rng = np.random.default_rng(seed)
    X, y, s = [], [], []
    for sid in range(n_subjects):
        for lab in (0, 1):
            for _ in range(per_class):
                peak = np.ones(10) + 8 * np.eye(10)[2 + 5 * lab]
                X.append(rng.dirichlet(peak, size=(3, 3)))
                y.append(lab)
                s.append(sid)
    n = len(y)
    return TrialSet(np.array(X), np.array(y), np.array(s), [f"t{i}" for i in range(n)],
                    MICRO_BINS, 2)


def _cfg(**kw):
    base = dict(epochs=3, patience=10, dtype="float32")
    base.update(kw)
    return micro_config(**base)


def test_fifteen_subjects_fifteen_folds():
    subjects = np.repeat(np.arange(15), 4)
    labels = np.tile([0, 1], 30)
    folds = loso_folds(subjects, labels)
    assert len(folds) == 15
    assert all(len(f.train_subjects) == 14 for f in folds)


def test_too_few_subjects():
    with pytest.raises(ValueError):
        loso_folds([0, 0, 1, 1], [0, 1, 0, 1])


@settings(max_examples=120, deadline=None)
@given(st.integers(3, 8), st.integers(1, 6), st.integers(2, 3), st.integers(0, 2**31),
       st.floats(0.0, 0.5))
@pytest.mark.oracle
def test_loso_partition_property(n_subjects, per_class, n_classes, seed, val_fraction):
    rng = np.random.default_rng(seed)
    ids = rng.choice(100, size=n_subjects, replace=False)
    subjects = np.repeat(ids, per_class * n_classes)
    labels = np.tile(np.repeat(np.arange(n_classes), per_class), n_subjects)
    order = rng.permutation(len(subjects))
    subjects, labels = subjects[order], labels[order]
    folds = loso_folds(subjects, labels, val_fraction, seed)
    assert len(folds) == n_subjects
    # set oracle: the union of test sets is the whole manifest, without overlap
    tested = [i for f in folds for i in f.test_idx.tolist()]
    assert sorted(tested) == list(range(len(subjects)))
    for f in folds:
        tr, va, te = set(f.train_idx.tolist()), set(f.val_idx.tolist()), set(f.test_idx.tolist())
        assert not (tr & va) and not (tr & te) and not (va & te)
        assert tr | va | te == set(range(len(subjects)))
        assert f.held_out_subject not in f.train_subjects
        assert set(subjects[list(te)]) == {f.held_out_subject}
        assert f.held_out_subject not in set(subjects[list(tr | va)])
        # every training subject keeps every class in the training split when it can
        if per_class > 1:
            for s in f.train_subjects:
                for c in range(n_classes):
                    assert any(subjects[i] == s and labels[i] == c for i in tr)


def test_fold_split_is_seeded():
    subjects = np.repeat(np.arange(4), 10)
    labels = np.tile([0, 1], 20)
    a = loso_folds(subjects, labels, seed=1)
    b = loso_folds(subjects, labels, seed=1)
    c = loso_folds(subjects, labels, seed=2)
    assert all(np.array_equal(x.val_idx, y.val_idx) for x, y in zip(a, b))
    assert any(not np.array_equal(x.val_idx, y.val_idx) for x, y in zip(a, c))


def test_binary_hand_count():
    m = compute_metrics([1, 1, 0, 0], [1, 0, 0, 0], 2)
    assert m.accuracy == 0.75
    assert m.f1 == pytest.approx(2 / 3, abs=1e-12)
    assert m.per_class_precision[1] == 0.5 and m.per_class_recall[1] == 1.0


def test_all_correct():
    m = compute_metrics([0, 2, 1, 2], [0, 2, 1, 2], 3)
    assert m.accuracy == 1.0 and m.f1 == 1.0


@pytest.mark.oracle
@pytest.mark.parametrize("seed", range(5))
def test_macro_f1_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, 40)
    preds = rng.integers(0, 3, 40)
    m = compute_metrics(preds, labels, 3)
    f1s = []
    for c in range(3):
        tp = sum(1 for p, t in zip(preds, labels) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, labels) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, labels) if p != c and t == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    assert abs(m.f1 - sum(f1s) / 3) < 1e-9
    cm = np.array(m.confusion)
    assert m.accuracy == np.trace(cm) / cm.sum()


def test_summary_uses_population_std():
    assert summarize([1.0, 0.5]) == {"mean": 0.75, "std": 0.25}


def test_single_class_fold():
    m = compute_metrics([0, 0, 1], [0, 0, 0], 2)
    assert m.accuracy == pytest.approx(2 / 3)
    assert m.f1 == 0.0
    assert m.warnings and "absent" in m.warnings[0]


def test_empty_evaluation_raises():
    with pytest.raises(ValueError):
        compute_metrics([], [], 2)


class _TrackingHead(DisentangleHead):
    touched: set

    def __getattr__(self, name):
        if name in {"subject_bank", "subject_probe", "discriminator"}:
            self.__dict__.setdefault("touched", set()).add(name)
        return super().__getattr__(name)

    def subject_encode(self, *a, **k):
        self.__dict__.setdefault("touched", set()).add("subject_encode")
        return super().subject_encode(*a, **k)


def test_evaluation_never_touches_subject_path():
    data = _tiny()
    fold = loso_folds(data.subjects, data.labels)[0]
    model, _ = train_fold(fold, data, _cfg(epochs=1))
    head = model.head
    head.__class__ = _TrackingHead
    head.__dict__["touched"] = set()
    evaluate(model, data.X[fold.test_idx], data.labels[fold.test_idx], 2)
    assert head.__dict__["touched"] == set()
    # the tracker itself works
    head.subject_encode(torch.zeros(1, head.subject_bank.shape[-1]), [fold.train_subjects[0]])
    assert "subject_encode" in head.__dict__["touched"]


def test_zero_learning_rate_freezes_validation():
    data = _tiny()
    fold = loso_folds(data.subjects, data.labels)[0]
    _, hist = train_fold(fold, data, _cfg(epochs=4, lr=0.0, disc_lr=0.0))
    assert len({(h["val_acc"], h["val_loss"]) for h in hist}) == 1


def test_history_logs_every_loss_field():
    data = _tiny()
    fold = loso_folds(data.subjects, data.labels)[0]
    _, hist = train_fold(fold, data, _cfg(epochs=2))
    for h in hist:
        assert {"l_cls", "l_adv", "l_disc", "total", "val_acc", "val_loss", "epoch"} <= set(h)
        assert abs(h["total"] - (h["l_cls"] + 0.1 * h["l_adv"] + 1.0 * h["l_disc"])) < 1e-9


def test_divergence_aborts_fold():
    data = _tiny()
    data.X[0, 0, 0, 0] = np.nan
    fold = loso_folds(data.subjects, data.labels)[1]
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train_fold(fold, data, _cfg(epochs=1))


def test_same_seed_same_results_file(tmp_path):
    data = _tiny()
    cfg = _cfg(epochs=2)
    run_loso(data, cfg, tmp_path / "a")
    run_loso(data, cfg, tmp_path / "b")
    assert file_checksum(tmp_path / "a" / "results.json") == file_checksum(tmp_path / "b" / "results.json")
    doc = json.loads((tmp_path / "a" / "results.json").read_text())
    assert doc["version"] == 1 and len(doc["folds"]) == 3
    lines = (tmp_path / "a" / "steps.jsonl").read_text().splitlines()
    assert {"fold", "epoch", "l_cls", "l_adv", "l_disc", "total"} <= set(json.loads(lines[0]))
    assert "mean" in (tmp_path / "a" / "results.txt").read_text()


def test_partition_violation_is_caught():
    data = _tiny()
    folds = loso_folds(data.subjects, data.labels)[:2]
    with pytest.raises(AssertionError, match="partition"):
        run_loso(data, _cfg(epochs=1), folds=folds)


def test_ablation_rows_differ_by_one_toggle():
    cfg = RunConfig()
    configs = ablation_configs(cfg, n_windows=8)
    assert FULL_ROW in configs and configs[FULL_ROW] == cfg
    base = to_dict(cfg)
    for name, change in ABLATION_ROWS:
        diff = {k for k, v in to_dict(configs[name]).items() if base[k] != v}
        assert diff == set(change), name
    assert configs["w/o Multi-scale Transformer"].scales == [8]


@pytest.mark.oracle
def test_adversarial_ablation_equals_plain_zero_lambda_run():
    data = _tiny()
    cfg = _cfg(epochs=2)
    ablated = run_loso(data, ablation_configs(cfg, data.n_windows)["w/o Adversarial Training"])
    plain = run_loso(data, replace(cfg, lambda_adv=0.0, lambda_disc=0.0))
    assert ablated == plain


def test_ablate_writes_table(tmp_path):
    data = _tiny()
    cfg = _cfg(epochs=1)
    table = ablate(data, cfg, tmp_path)
    assert table["order"][-1] == FULL_ROW and len(table["rows"]) == len(ABLATION_ROWS) + 1
    text = (tmp_path / "ablation.txt").read_text()
    assert "w/o Adversarial Training" in text and FULL_ROW in text


@pytest.mark.oracle
def test_training_loss_falls_on_default_cohort(default_cohort):
    fold = loso_folds(default_cohort.subjects, default_cohort.labels)[0]
    cfg = replace(RunConfig(), epochs=20, patience=20)
    _, hist = train_fold(fold, default_cohort, cfg)
    assert len(hist) == 20
    assert hist[19]["l_cls"] < hist[0]["l_cls"]


def test_leakage_probe_is_seeded_and_detects_planted_identity():
    data = _tiny(n_subjects=4, per_class=6)
    # plant subject identity in a high-energy bin of every window
    for i, sid in enumerate(data.subjects):
        data.X[i, :, :, 3 + sid] += 5.0
    data.X /= data.X.sum(-1, keepdims=True)
    fold = loso_folds(data.subjects, data.labels)[0]
    model, _ = train_fold(fold, data, _cfg(epochs=2, lambda_adv=0.0))
    a = leakage_probe(model, data, fold, steps=300, lr=1e-2, seed=5)
    b = leakage_probe(model, data, fold, steps=300, lr=1e-2, seed=5)
    assert a == b
    assert a["train"] > 0.9 and a["val"] > 1 / 3 + 0.25
