import json

import numpy as np
import pytest

from ealstm import cli
from ealstm.analysis import compare_models
from ealstm.cells import load_checkpoint
from ealstm.exceptions import NumericError
from ealstm.metrics import read_report_csv
from ealstm.storage import read_container


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--n", "4", "--out", str(root / "data")]) == 0
    cfg = json.loads((root / "data" / "config.json").read_text())
    cfg.update(hidden_size=8, epochs=1, batch_size=128, sequence_length=15)
    (root / "small.json").write_text(json.dumps(cfg))
    return root


@pytest.fixture(scope="module")
def trained(synth_root):
    run = synth_root / "run"
    assert cli.main(["train", "--config", str(synth_root / "small.json"), "--out", str(run), "--seeds", "1,2"]) == 0
    return run


def test_synth_outputs(synth_root):
    data = synth_root / "data"
    assert (data / "attributes.csv").exists() and len(list((data / "forcings").iterdir())) == 4
    truth = read_report_csv((data / "truth.csv").read_text())
    assert [r["regime"] for r in truth] == [0, 1, 0, 1]


def test_train_zero_epochs_one_seed(synth_root, tmp_path):
    assert cli.main(["train", "--config", str(synth_root / "small.json"), "--out", str(tmp_path),
                     "--seed", "7"]) == 0
    cfg = json.loads((synth_root / "small.json").read_text())
    cfg["epochs"] = 0
    (tmp_path / "zero.json").write_text(json.dumps(cfg))
    out = tmp_path / "zero"
    assert cli.main(["train", "--config", str(tmp_path / "zero.json"), "--out", str(out), "--seed", "7"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert list(manifest["checkpoints"]) == ["7"]
    from ealstm.cells import init_parameters
    params, meta = load_checkpoint(out / manifest["checkpoints"]["7"])
    ref = init_parameters("ealstm", 8, 5, 7, seed=7)
    assert all(params[k].tobytes() == ref[k].tobytes() for k in ref.arrays)


def test_manifest_contents(trained):
    manifest = json.loads((trained / "manifest.json").read_text())
    for key in ("config", "code_version", "checkpoints", "wall_clock_seconds", "stats", "kernel_backend"):
        assert key in manifest
    assert sorted(manifest["checkpoints"]) == ["1", "2"]
    lines = (trained / "train_log_seed_1.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["epoch"] == 1 and "lr" in json.loads(lines[0])


def test_rerun_from_manifest_bit_identical(trained, tmp_path):
    assert cli.main(["train", "--manifest", str(trained / "manifest.json"), "--out", str(tmp_path)]) == 0
    for seed in ("1", "2"):
        a = (trained / "checkpoints" / f"seed_{seed}.ckpt").read_bytes()
        b = (tmp_path / "checkpoints" / f"seed_{seed}.ckpt").read_bytes()
        assert a == b


def test_evaluate_reports(trained):
    assert cli.main(["evaluate", "--manifest", str(trained / "manifest.json")]) == 0
    for name in ("seed_1", "seed_2", "ensemble"):
        text = (trained / f"metrics_validation_{name}.csv").read_text()
        assert text.startswith("# format-version: 1")
        assert len(read_report_csv(text)) == 4
    summary = json.loads((trained / "summary_validation.json").read_text())["summary"]
    assert {"nse_mean", "nse_median", "n_nse_le_0", "fhv_median"} <= set(summary["ensemble"])
    manifest = json.loads((trained / "manifest.json").read_text())
    assert "validation/ensemble" in manifest["reports"]


def test_ensemble_of_identical_checkpoints_equals_single(trained, tmp_path):
    manifest = json.loads((trained / "manifest.json").read_text())
    manifest["checkpoints"] = {"1": str(trained / "checkpoints" / "seed_1.ckpt"),
                               "9": str(trained / "checkpoints" / "seed_1.ckpt")}
    manifest["stats"] = str(trained / "stats.json")
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    assert cli.main(["evaluate", "--manifest", str(path)]) == 0
    single = (tmp_path / "metrics_validation_seed_1.csv").read_text()
    ens = (tmp_path / "metrics_validation_ensemble.csv").read_text()
    assert single == ens


def test_analyze_commands(trained, capsys):
    m = str(trained / "manifest.json")
    assert cli.main(["analyze", "sensitivity", "--manifest", m]) == 0
    rows = read_report_csv((trained / "sensitivity_seed_1.csv").read_text())
    assert sorted(int(r["rank"]) for r in rows) == list(range(1, 8))
    assert cli.main(["analyze", "embed", "--manifest", m, "--seed", "2"]) == 0
    arrays, _ = read_container(trained / "embedding_seed_2.ckpt")
    assert next(iter(arrays.values())).shape == (4, 8)
    assert (trained / "embedding_seed_2.basins.txt").read_text().split() == [f"synth{b:02d}" for b in range(4)]
    assert cli.main(["analyze", "cluster", "--manifest", m, "--k-min", "2", "--k-max", "3", "--restarts", "2"]) == 0
    rows = read_report_csv((trained / "cluster_embedding_seed_1.csv").read_text())
    assert [r["k"] for r in rows] == [2, 3]
    assert cli.main(["analyze", "robustness", "--manifest", m, "--sigmas", "0,0.5", "--draws", "2"]) == 0
    a, b = str(trained / "metrics_validation_seed_1.csv"), str(trained / "metrics_validation_seed_2.csv")
    capsys.readouterr()
    assert cli.main(["analyze", "compare", "--a", a, "--b", b]) == 0
    out = read_report_csv(capsys.readouterr().out)[0]
    nse_a = [r["nse"] for r in read_report_csv(open(a).read())]
    nse_b = [r["nse"] for r in read_report_csv(open(b).read())]
    assert out["p_value"] == pytest.approx(compare_models(nse_a, nse_b).p_value)


def test_embed_on_plain_lstm_is_variant_error(synth_root, tmp_path):
    cfg = json.loads((synth_root / "small.json").read_text())
    cfg.update(variant="lstm", epochs=0)
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path), "--seed", "1"]) == 0
    assert cli.main(["analyze", "embed", "--manifest", str(tmp_path / "manifest.json")]) == 2


def test_gridsearch_singleton(synth_root, tmp_path):
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"hidden_size": [6]}))
    assert cli.main(["gridsearch", "--config", str(synth_root / "small.json"), "--space", str(space),
                     "--out", str(tmp_path), "--folds", "2", "--seed", "1"]) == 0
    best = json.loads((tmp_path / "best_config.json").read_text())
    assert best["hidden_size"] == 6
    assert len(read_report_csv((tmp_path / "gridsearch.csv").read_text())) == 1


def test_exit_codes(synth_root, tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "hidden_size": 4,\n  "epochs": oops\n}\n')
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert "bad.json:3" in capsys.readouterr().err

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"hidden_sise": 4}))
    assert cli.main(["train", "--config", str(unknown)]) == 2
    assert "hidden_sise" in capsys.readouterr().err

    negative = tmp_path / "neg.json"
    negative.write_text(json.dumps({"dropout": 1.5}))
    assert cli.main(["train", "--config", str(negative)]) == 2
    assert "dropout" in capsys.readouterr().err

    assert cli.main(["train", "--config", str(synth_root / "small.json"), "--data-root", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["evaluate", "--manifest", str(tmp_path / "missing.json")]) == 5

    def boom(*a, **k):
        raise NumericError("non-finite gradient at step 3")
    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--config", str(synth_root / "small.json"), "--out", str(tmp_path / "o")]) == 4

    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_checkpoint_named(trained, tmp_path):
    manifest = json.loads((trained / "manifest.json").read_text())
    manifest["checkpoints"] = {"1": str(tmp_path / "gone.ckpt")}
    manifest["stats"] = str(trained / "stats.json")
    path = tmp_path / "m.json"
    path.write_text(json.dumps(manifest))
    assert cli.main(["evaluate", "--manifest", str(path)]) == 5


def test_malformed_space_reports_line(synth_root, tmp_path, capsys):
    space = tmp_path / "space.json"
    space.write_text('{\n  "hidden_size": [4, 8],\n  "dropout": [0.1,, 0.2]\n}\n')
    assert cli.main(["gridsearch", "--config", str(synth_root / "small.json"), "--space", str(space),
                     "--out", str(tmp_path)]) == 2
    assert "space.json:3" in capsys.readouterr().err
