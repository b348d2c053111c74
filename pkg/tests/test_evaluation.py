import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modechoice import evaluation as E
from modechoice.models import ModelSpec
from modechoice.synth import generate, mnl_config

from conftest import make_dataset


# --- accuracy ------------------------------------------------------------------


def test_accuracy_all_correct():
    a = E.accuracy([0, 1, 2, 1], [0, 1, 2, 1])
    assert a["overall"] == 1.0 and a["per_class"].tolist() == [1.0, 1.0, 1.0]


def test_accuracy_counting():
    assert E.accuracy([1, 0, 0, 1], [0, 0, 1, 1])["overall"] == 0.5


def test_accuracy_empty_class_is_undefined():
    a = E.accuracy([0, 0], [0, 0], n_classes=3)
    assert a["per_class"][0] == 1.0 and math.isnan(a["per_class"][1]) and math.isnan(a["per_class"][2])


def test_accuracy_rejects_bad_shapes():
    with pytest.raises(ValueError):
        E.accuracy([0, 1], [0])
    with pytest.raises(ValueError):
        E.accuracy([], [])


@given(st.integers(0, 10**6), st.integers(1, 200), st.integers(2, 5))
def test_per_class_recomposes_overall(seed, n, k):
    rng = np.random.default_rng(seed)
    true, pred = rng.integers(0, k, n), rng.integers(0, k, n)
    a = E.accuracy(pred, true, k)
    freq = np.bincount(true, minlength=k) / n
    recomposed = sum(f * r for f, r in zip(freq, a["per_class"]) if f > 0)
    assert abs(recomposed - a["overall"]) < 1e-12


# --- L1 ------------------------------------------------------------------------


def test_l1_examples():
    assert E.l1_share_error([0.25] * 4, [0.25] * 4) == 0.0
    assert E.l1_share_error([1, 0, 0, 0], [0, 1, 0, 0]) == 2.0
    assert abs(E.l1_share_error([0.3, 0.3, 0.2, 0.2], [0.25, 0.35, 0.2, 0.2]) - 0.10) < 1e-12


@pytest.mark.parametrize("bad", [[0.5, 0.6], [1.2, -0.2], [np.nan, 1.0]])
def test_l1_rejects_non_simplex(bad):
    with pytest.raises(ValueError, match="simplex"):
        E.l1_share_error(bad, [0.5, 0.5])


simplex = st.integers(0, 10**6).map(lambda s: np.random.default_rng(s).dirichlet(np.ones(4)))


@given(simplex, simplex)
def test_l1_symmetric_and_bounded(p, q):
    a, b = E.l1_share_error(p, q), E.l1_share_error(q, p)
    assert a == b and 0 <= a <= 2 + 1e-12


# --- cross-validation -----------------------------------------------------------


class _Oracle:
    def predict_proba(self, ds):
        return np.eye(ds.n_alts)[ds.chosen]


class _Prior:
    def __init__(self, shares):
        self.shares = shares

    def predict_proba(self, ds):
        return np.tile(self.shares, (ds.n_obs, 1))


def _fake_train(kind_to_model):
    def train(spec, ds, seed=0, layout=None):
        return kind_to_model[spec.kind](ds, seed)
    return train


@pytest.fixture
def balanced4():
    rng = np.random.default_rng(2)
    return make_dataset(rng.normal(size=(400, 4, 1)), np.tile(np.arange(4), 100))


def test_oracle_scores_perfectly(monkeypatch, balanced4):
    monkeypatch.setattr(E, "train", _fake_train({"nb": lambda ds, s: _Oracle()}))
    rep = E.cross_validate([ModelSpec("O", "nb")], balanced4, k=10, seed=0)
    s = rep.summary("O")
    assert s["overall"] == {"mean": 1.0, "sd": 0.0, "n": 10}
    assert s["l1"]["mean"] == 0.0


def test_prior_predictor_is_chance(monkeypatch, balanced4):
    monkeypatch.setattr(E, "train", _fake_train({"nb": lambda ds, s: _Prior(ds.shares())}))
    rep = E.cross_validate([ModelSpec("P", "nb")], balanced4, k=10, seed=1)
    assert abs(rep.summary("P")["overall"]["mean"] - 0.25) < 0.1


def test_failed_cells_are_excluded_and_footnoted(monkeypatch, balanced4, tmp_path):
    calls = {"n": 0}

    def flaky(ds, seed):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("boom")
        return _Oracle()
    monkeypatch.setattr(E, "train", _fake_train({"nb": flaky}))
    rep = E.cross_validate([ModelSpec("O", "nb")], balanced4, k=5, seed=0)
    assert len(rep.failed()) == 1 and "boom" in rep.failed()[0].error
    assert rep.summary("O")["n_ok"] == 4 and rep.summary("O")["n_failed"] == 1
    E.write_cv_report(rep, tmp_path)
    text = (tmp_path / "accuracy.csv").read_text()
    assert "# note: O fold 2 failed and is excluded: RuntimeError: boom" in text


@pytest.fixture(scope="module")
def real_report():
    ds, _ = generate(mnl_config(n_obs=600, seed=4))
    models = [ModelSpec("MNL", "mnl"), ModelSpec("NB", "nb")]
    return ds, E.cross_validate(models, ds, k=10, seed=7)


def test_report_shape_and_pairing(real_report):
    ds, rep = real_report
    assert len(rep.cells) == 20 and all(c.ok for c in rep.cells)
    assert sorted(rep.folds.sizes().tolist()) == [60] * 10
    # identical fold assignment for every model: same test sets and a shared layout
    for m in ("MNL", "NB"):
        assert [c.fold for c in rep.cells_for(m)] == list(range(10))


def test_means_recompute_from_folds(real_report):
    _, rep = real_report
    for m in ("MNL", "NB"):
        vals = [c.overall for c in rep.cells_for(m)]
        s = rep.summary(m)["overall"]
        assert abs(s["mean"] - np.mean(vals)) < 1e-12
        assert abs(s["sd"] - np.std(vals, ddof=1)) < 1e-12
        l1 = [c.l1 for c in rep.cells_for(m)]
        assert abs(rep.summary(m)["l1"]["mean"] - np.mean(l1)) < 1e-12


def test_job_seeds_distinct_and_stable():
    seeds = {E.job_seed(3, m, f) for m in range(4) for f in range(10)}
    assert len(seeds) == 40
    assert E.job_seed(3, 1, 2) == E.job_seed(3, 1, 2)


def test_parallel_matches_serial():
    ds, _ = generate(mnl_config(n_obs=300, seed=5))
    models = [ModelSpec("RF", "rf", {"n_trees": 5}), ModelSpec("NB", "nb")]
    a = E.cross_validate(models, ds, k=3, seed=2, n_jobs=1)
    b = E.cross_validate(models, ds, k=3, seed=2, n_jobs=2)
    assert [(c.overall, c.l1) for c in a.cells] == [(c.overall, c.l1) for c in b.cells]


def test_person_level_folds():
    ds, _ = generate(mnl_config(n_obs=200, seed=6))
    ds = make_dataset(ds.X, ds.chosen, person=np.repeat(np.arange(50), 4))
    rep = E.cross_validate([ModelSpec("NB", "nb")], ds, k=5, seed=0, person_level=True)
    for g in range(50):
        assert len(set(rep.folds.assignment[ds.person_id == g].tolist())) == 1


def test_rejects_bad_k_and_duplicates(balanced4):
    with pytest.raises(ValueError, match="k must"):
        E.cross_validate([ModelSpec("A", "nb")], balanced4, k=1)
    with pytest.raises(ValueError, match="duplicate"):
        E.cross_validate([ModelSpec("A", "nb"), ModelSpec("A", "nb")], balanced4)


def test_report_files(real_report, tmp_path):
    _, rep = real_report
    paths = E.write_cv_report(rep, tmp_path, ["modechoice 0.1.0", "seed 7"])
    assert [p.name for p in paths] == ["accuracy.csv", "l1.csv", "cv.json"]
    acc = (tmp_path / "accuracy.csv").read_text().splitlines()
    assert acc[:3] == ["# modechoice 0.1.0", "# seed 7", "mode,stat,MNL,NB"]
    assert acc[3].startswith("overall,mean,0.")
    assert len(acc) == 3 + 2 * 4
    l1 = (tmp_path / "l1.csv").read_text().splitlines()
    assert l1[2] == "model,mean_l1,sd_l1,n_folds" and l1[3].endswith(",10")
    doc = json.loads((tmp_path / "cv.json").read_text())
    assert doc["_meta"] == ["modechoice 0.1.0", "seed 7"] and len(doc["folds"]) == 20
