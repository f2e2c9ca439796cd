import csv
import json
import os

import pytest

from varigrad.cli import main
from varigrad.geometry import load_dataset


def run(*args):
    return main([str(a) for a in args])


def metrics(path, drop=("seconds_per_batch",)):
    with open(path) as f:
        return [{k: v for k, v in row.items() if k not in drop} for row in csv.DictReader(f)]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("gen", "--classes", 3, "--per-class", 8, "--vmin", 20, "--vmax", 28, "--test-fraction", 0.25, "--seed", 3, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def autoencoders(data, tmp_path_factory):
    root = tmp_path_factory.mktemp("ae")
    for enc in ("varigrad", "pointnet"):
        assert run("train", "--task", "autoencoder", "--encoder", enc, "--train", data / "train.jsonl", "--epochs", 2, "--out", root / enc) == 0
    return root


def test_gen_outputs(data):
    assert len(load_dataset(data / "train.jsonl")) == 18
    assert len(load_dataset(data / "test.jsonl")) == 6
    man = json.loads((data / "manifest.json").read_text())
    assert man["command"] == "gen" and man["rng_seed"] == 3 and man["finished_at"]
    assert set(man["outputs"]) == {"train.jsonl", "test.jsonl"}
    assert man["config"]["classes"] == 3 and "code_version" in man


def test_gen_default_sizes(tmp_path):
    assert run("gen", "--vmin", 8, "--vmax", 10, "--seed", 7, "--out", tmp_path) == 0
    assert len(load_dataset(tmp_path / "train.jsonl")) == 360
    assert len(load_dataset(tmp_path / "test.jsonl")) == 40


def test_gen_byte_identical(tmp_path, data):
    assert run("gen", "--classes", 3, "--per-class", 8, "--vmin", 20, "--vmax", 28, "--test-fraction", 0.25, "--seed", 3, "--out", tmp_path) == 0
    for name in ("train.jsonl", "test.jsonl"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()


def test_gen_single_class(tmp_path, capsys):
    assert run("gen", "--classes", 1, "--out", tmp_path) == 1
    assert "2 classes" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as e:
        run("gen", "--classes", "many", "--out", tmp_path)
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run("frobnicate")
    assert e.value.code == 1


def test_gradcheck_defaults_pass(tmp_path):
    assert run("gradcheck", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["n"] == 100 and rep["passed"] and rep["max_rel_err"] <= 1e-4


def test_gradcheck_tiny_tol_fails():
    assert run("gradcheck", "--n", 3, "--tol", 1e-12) == 2


def test_gradcheck_n0():
    assert run("gradcheck", "--n", 0) == 1


def test_train_eval(tmp_path, data):
    model = tmp_path / "m"
    assert run("train", "--train", data / "train.jsonl", "--test", data / "test.jsonl", "--epochs", 3, "--seed", 1, "--out", model) == 0
    for name in ("model.json", "model.bin", "template.json", "template.json.meta.json", "metrics.csv", "manifest.json"):
        assert (model / name).exists()
    rows = metrics(model / "metrics.csv", drop=())
    assert list(rows[0]) == ["epoch", "split", "loss", "accuracy_or_error", "seconds_per_batch"]
    final = [r for r in rows if r["epoch"] == "3" and r["split"] == "test"][0]
    assert run("eval", "--model", model, "--data", data / "test.jsonl", "--out", tmp_path / "ev") == 0
    rep = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert abs(rep["accuracy"] - float(final["accuracy_or_error"])) <= 1e-9
    assert abs(rep["loss"] - float(final["loss"])) <= 1e-9
    assert run("eval", "--model", model, "--data", data / "test.jsonl", "--reparam", 2, "--out", tmp_path / "ev2") == 0
    assert json.loads((tmp_path / "ev2" / "eval.json").read_text())["n"] == 12


def test_train_missing_template(tmp_path, data, capsys):
    assert run("train", "--train", data / "train.jsonl", "--template", tmp_path / "nope.json", "--out", tmp_path / "m") == 1
    assert "template" in capsys.readouterr().err
    assert run("train", "--train", data / "train.jsonl", "--template-index", 999, "--out", tmp_path / "m") == 1


def test_train_with_template_file(tmp_path, data):
    tpl = tmp_path / "tpl.json"
    from varigrad.geometry import write_shape

    tpl.write_bytes(write_shape(load_dataset(data / "test.jsonl")[0]))
    assert run("train", "--encoder", "pointnet", "--train", data / "train.jsonl", "--template", tpl, "--epochs", 1, "--out", tmp_path / "m") == 0


def test_eval_missing_model(tmp_path, data):
    assert run("eval", "--model", tmp_path / "none", "--data", data / "test.jsonl", "--out", tmp_path / "e") == 1


def test_train_reproducible(tmp_path, data):
    args = ["train", "--train", data / "train.jsonl", "--test", data / "test.jsonl", "--epochs", 2, "--seed", 5]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert metrics(tmp_path / "a" / "metrics.csv") == metrics(tmp_path / "b" / "metrics.csv")
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()


def test_threads_env_fallback(tmp_path, data, monkeypatch):
    args = ["train", "--train", data / "train.jsonl", "--test", data / "test.jsonl", "--epochs", 2, "--seed", 5]
    assert run(*args, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("VARIGRAD_THREADS", "3")
    assert run(*args, "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["threads"] is None
    for r, s in zip(metrics(tmp_path / "a" / "metrics.csv"), metrics(tmp_path / "b" / "metrics.csv")):
        assert abs(float(r["loss"]) - float(s["loss"])) <= 1e-6
    monkeypatch.setenv("VARIGRAD_THREADS", "lots")
    assert run(*args, "--out", tmp_path / "c") == 1


def test_invariance(tmp_path, data, autoencoders):
    out = tmp_path / "inv"
    models = [autoencoders / "varigrad", autoencoders / "pointnet"]
    assert run("invariance", "--models", *models, "--source", data / "test.jsonl", "--n", 6, "--out", out) == 0
    rep = json.loads((out / "invariance.json").read_text())
    assert [m["encoder"] for m in rep["models"]] == ["varigrad", "pointnet"]
    assert "spread_ratio_varigrad_over_pointnet" in rep
    assert len(load_dataset(out / "reconstructions_0_varigrad.jsonl", check=False)) == 6
    assert len(load_dataset(out / "variants.jsonl")) == 6


def test_invariance_permute_only_exact(tmp_path, data, autoencoders):
    out = tmp_path / "inv"
    assert run("invariance", "--models", autoencoders / "varigrad", "--source", data / "test.jsonl", "--n", 5, "--permute-only", "--out", out) == 0
    rep = json.loads((out / "invariance.json").read_text())["models"][0]
    assert rep["max_vertex_deviation"] <= 1e-9


def test_invariance_single_variant(tmp_path, data, autoencoders):
    out = tmp_path / "inv"
    models = [autoencoders / "varigrad", autoencoders / "pointnet"]
    assert run("invariance", "--models", *models, "--source", data / "test.jsonl", "--n", 1, "--out", out) == 0
    for m in json.loads((out / "invariance.json").read_text())["models"]:
        assert m["mean_pairwise_dist_sq"] == 0.0 and m["per_vertex_std_mean"] == 0.0


def test_invariance_rejects_classifier(tmp_path, data):
    assert run("train", "--train", data / "train.jsonl", "--epochs", 1, "--out", tmp_path / "c") == 0
    assert run("invariance", "--models", tmp_path / "c", "--source", data / "test.jsonl", "--out", tmp_path / "i") == 1


def test_writes_only_inside_out(tmp_path, data, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    assert run("gen", "--classes", 2, "--per-class", 3, "--vmin", 8, "--vmax", 9, "--out", tmp_path / "o") == 0
    assert run("train", "--train", tmp_path / "o" / "train.jsonl", "--epochs", 1, "--out", tmp_path / "m") == 0
    assert os.listdir(work) == []
    assert sorted(os.listdir(tmp_path)) == ["cwd", "m", "o"]
    assert not any(p.name.endswith(".tmp") for p in (tmp_path / "m").iterdir())
