import json

import numpy as np
import pytest
import yaml

from freqdgt.cli import build_parser, main, run_config_from_args
from freqdgt.config import RunConfig, to_dict
from freqdgt.harness import file_checksum

TINY = ["--epochs", "1", "--probe-steps", "20", "--scales", "1,2", "--d-g", "4", "--d-h", "8",
        "--n-heads", "2"]


@pytest.fixture(scope="module")
def feature_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "raw"), "--n-subjects", "3", "--trials", "3",
                 "--n-channels", "4", "--duration", "4", "--seed", "3"]) == 0
    assert main(["features", "--manifest", str(root / "raw"), "--out", str(root / "feat"),
                 "--window", "1", "--stride", "1"]) == 0
    return root


def test_flags_override_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"cheb_order": 3, "lambda_adv": 0.5, "epochs": 9}))
    args = build_parser().parse_args(
        ["loso", "--data", "d", "--out", "o", "--seed", "4", "--config", str(path),
         "--cheb-order", "2", "--scales", "1,2", "--no-subject-probe", "--gcn-mode", "simple"])
    cfg = run_config_from_args(args)
    assert (cfg.cheb_order, cfg.lambda_adv, cfg.epochs, cfg.seed) == (2, 0.5, 9, 4)
    assert cfg.scales == [1, 2] and cfg.subject_probe is False and cfg.gcn_mode == "simple"


def test_no_flags_gives_defaults():
    args = build_parser().parse_args(["train", "--data", "d", "--held-out", "0", "--out", "o"])
    assert to_dict(run_config_from_args(args)) == to_dict(RunConfig())


@pytest.mark.parametrize("cmd", ["loso", "ablate"])
def test_seed_is_mandatory(cmd):
    with pytest.raises(SystemExit):
        build_parser().parse_args([cmd, "--data", "d", "--out", "o"])


def test_bad_config_value_is_reported(tmp_path, capsys):
    path = tmp_path / "run.yaml"
    path.write_text("gcn_mode: spectral\n")
    rc = main(["train", "--data", str(tmp_path), "--held-out", "0", "--out", str(tmp_path / "o"),
               "--config", str(path)])
    assert rc == 2 and "gcn_mode" in capsys.readouterr().err


def test_synth_refuses_non_empty_directory(feature_dir, capsys):
    assert main(["synth", "--out", str(feature_dir / "raw"), "--n-subjects", "3"]) == 2
    assert "not empty" in capsys.readouterr().err


def test_features_writes_manifest(feature_dir):
    doc = json.loads((feature_dir / "feat" / "manifest.json").read_text())
    assert doc["kind"] == "features" and len(doc["trials"]) == 18
    assert doc["meta"]["feature_config"]["window_s"] == 1.0


def test_loso_is_deterministic_and_dumps(feature_dir, capsys):
    runs = []
    for name in ("a", "b"):
        out = feature_dir / name
        assert main(["loso", "--data", str(feature_dir / "feat"), "--out", str(out),
                     "--seed", "0", "--dump-adjacency", "--dump-attention", *TINY]) == 0
        runs.append(out)
    assert file_checksum(runs[0] / "results.json") == file_checksum(runs[1] / "results.json")
    assert "sha256" in capsys.readouterr().out
    fold = runs[0] / "fold_000"
    A = np.load(fold / "adj_shallow.npy")
    assert A.shape == (6, 4, 4) and np.allclose(A, A.transpose(0, 2, 1), atol=1e-6)
    assert np.load(fold / "attention_scale1.npy").shape == (4, 4)


def test_train_then_eval(feature_dir):
    out = feature_dir / "one"
    assert main(["train", "--data", str(feature_dir / "feat"), "--held-out", "2", "--out",
                 str(out), "--seed", "1", *TINY]) == 0
    assert main(["eval", "--run", str(out)]) == 0
    m = json.loads((out / "eval.json").read_text())
    assert sum(map(sum, m["confusion"])) == 6
    assert (out / "steps.jsonl").read_text().count("\n") >= 1


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path / "g.txt")]) == 0
    assert "FAIL" not in (tmp_path / "g.txt").read_text()


def test_report_writes_plots(feature_dir):
    pytest.importorskip("matplotlib")
    assert main(["report", "--run", str(feature_dir / "a")]) == 0
    names = {p.name for p in (feature_dir / "a" / "plots").iterdir()}
    assert {"loss_curves.png", "band_weights.png", "adjacency_fold_000.png"} <= names


def test_ablate_and_report(feature_dir):
    pytest.importorskip("matplotlib")
    out = feature_dir / "abl"
    assert main(["ablate", "--data", str(feature_dir / "feat"), "--out", str(out),
                 "--seed", "0", *TINY]) == 0
    table = json.loads((out / "ablation.json").read_text())
    assert len(table["rows"]) == 7
    assert main(["report", "--run", str(out)]) == 0
    assert (out / "plots" / "ablation.png").exists()
