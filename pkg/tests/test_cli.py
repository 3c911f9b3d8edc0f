import csv
import json

import numpy as np
import pytest

from fmda import load_csv, save_csv
from fmda.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "data.csv"
    assert main(["generate", "--out", str(path), "--seed", "4"]) == 0
    return path


def test_generate_default(tmp_path, capsys):
    out = tmp_path / "d.csv"
    truth = tmp_path / "truth.csv"
    assert main(["generate", "--out", str(out), "--truth-out", str(truth)]) == 0
    ds = load_csv(out)
    assert ds.n == 200 and ds.m == 200 and np.bincount(ds.labels).tolist() == [0, 100, 100]
    rows = _rows(truth)
    assert rows[0] == ["index", "label", "subclass"] and len(rows) == 201
    assert "sub-class counts" in capsys.readouterr().out


def test_generate_bad_spec(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["generate", "--spec", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    weights = {"classes": [[{"weight": 0.4, "boundaries": [0.5], "levels": [0, 1], "noise_std": 1}]]}
    bad.write_text(json.dumps(weights))
    assert main(["generate", "--spec", str(bad), "--out", str(tmp_path / "x.csv")]) == 2


def test_generate_unwritable(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "missing" / "dir" / "x.csv")]) == 1


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["fit", "nope.csv"]) == 2  # --out missing
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m.json")]) == 1


def test_fit_single_iteration_for_flda(small_csv, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["fit", str(small_csv), "--method", "FLDA-poly", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("1 EM iterations") == 2
    model = json.loads(out.read_text())
    assert model["version"] == "fmda-clf-v1"
    assert all(c["diagnostics"]["iterations"] == 1 for c in model["classes"])


def test_fit_requires_labels(small_csv, tmp_path):
    unlabeled = tmp_path / "u.csv"
    ds = load_csv(small_csv)
    save_csv(ds.__class__(ds.grid, ds.values), unlabeled)
    assert main(["fit", str(unlabeled), "--out", str(tmp_path / "m.json")]) == 2


def test_fit_is_reproducible(small_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["--method", "FLDA-RHLP", "--restarts", "2", "--seed", "9"]
    assert main(["fit", str(small_csv), "--out", str(a)] + args) == 0
    assert main(["fit", str(small_csv), "--out", str(b)] + args) == 0
    assert a.read_bytes() == b.read_bytes()


def test_fit_invalid_method_options(small_csv, tmp_path):
    out = str(tmp_path / "m.json")
    assert main(["fit", str(small_csv), "--out", out, "--method", "FLDA-poly", "--K", "2"]) == 2
    # an infeasible basis is a training failure for class 1
    assert main(["fit", str(small_csv), "--out", out, "--method", "FLDA-poly", "--degree", "500"]) == 1


@pytest.fixture(scope="module")
def fitted(small_csv, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "m.json"
    assert main(["fit", str(small_csv), "--out", str(path), "--restarts", "2"]) == 0
    return path


def test_predict_training_data(fitted, small_csv, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["predict", str(fitted), str(small_csv), "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["index", "predicted", "p_1", "p_2"]
    body = rows[1:]
    assert [int(r[0]) for r in body] == list(range(1, 201))
    probs = np.array([[float(x) for x in r[2:]] for r in body])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    truth = load_csv(small_csv).labels
    assert np.array_equal([int(r[1]) for r in body], truth)


def test_predict_empty_file(fitted, small_csv, tmp_path):
    ds = load_csv(small_csv)
    empty = tmp_path / "empty.csv"
    save_csv(ds.subset(np.array([], dtype=int)), empty)
    out = tmp_path / "p.csv"
    assert main(["predict", str(fitted), str(empty), "--out", str(out)]) == 0
    assert _rows(out) == [["index", "predicted", "p_1", "p_2"]]


def test_predict_grid_mismatch(fitted, tmp_path):
    other = tmp_path / "o.csv"
    assert main(["generate", "--out", str(other)]) == 0
    ds = load_csv(other)
    save_csv(ds.__class__(ds.grid.__class__(ds.grid.times[:50]), ds.values[:, :50], ds.labels), other)
    assert main(["predict", str(fitted), str(other), "--out", str(tmp_path / "p.csv")]) == 2


def test_predict_malformed_model(small_csv, tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("[1, 2")
    assert main(["predict", str(bad), str(small_csv), "--out", str(tmp_path / "p.csv")]) == 2


def test_benchmark_one_method(small_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--methods", "FLDA-poly", "--folds", "3"]
    assert main(["benchmark", str(small_csv), "--out-dir", str(a)] + args) == 0
    assert main(["benchmark", str(small_csv), "--out-dir", str(b)] + args) == 0
    rows = _rows(a / "results.csv")
    assert rows[0] == ["method", "fold", "error"] and len(rows) == 4
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["results"][0]["method"] == "FLDA-poly"


def test_benchmark_unknown_method(small_csv, tmp_path):
    assert main(["benchmark", str(small_csv), "--out-dir", str(tmp_path), "--methods", "FLDA-poly,SVM"]) == 2


def test_evaluate(small_csv, tmp_path):
    assert main(["evaluate", str(small_csv), "--out-dir", str(tmp_path), "--method", "FMDA-splinemix", "--restarts", "1"]) == 0
    assert len(_rows(tmp_path / "results.csv")) == 6


def test_export_plots(fitted, small_csv, tmp_path):
    assert main(["export-plots", str(fitted), str(small_csv), "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "class2_assignments.csv")
    assert rows[0] == ["index", "subclass", "gamma_1"]
    assert all(r[1] == "1" for r in rows[1:]) and len(rows) == 101
    c1 = _rows(tmp_path / "class1_assignments.csv")
    gam = np.array([[float(x) for x in r[2:]] for r in c1[1:]])
    np.testing.assert_allclose(gam.sum(axis=1), 1.0, atol=1e-12)
    for k in (1, 2, 3):
        pi = np.array([[float(x) for x in r[1:]] for r in _rows(tmp_path / f"class1_subclass{k}_proportions.csv")[1:]])
        assert pi.shape == (200, 3)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)
    means = _rows(tmp_path / "class1_means.csv")
    assert means[0] == ["t", "subclass_1", "subclass_2", "subclass_3"] and len(means) == 201
