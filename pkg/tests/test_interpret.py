import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modechoice import interpret as I
from modechoice.classifiers import NeuralNet, fit_nn
from modechoice.dataset import WideMatrix, to_wide
from modechoice.logit import Term, UtilitySpec, fit_mnl, mnl_probabilities, x_standardized
from modechoice.models import ModelSpec, train
from modechoice.synth import generate, mnl_config
from modechoice.trees import fit_cart, fit_rf


class Stub:
    """Predictor whose class-1 probability depends only on column 0."""

    def __init__(self, names=("a", "b"), lo=None, hi=None):
        self.col_names = names
        self.col_min = np.full(len(names), -np.inf) if lo is None else np.asarray(lo, float)
        self.col_max = np.full(len(names), np.inf) if hi is None else np.asarray(hi, float)

    def predict_proba(self, rows):
        Z = rows.Z if isinstance(rows, WideMatrix) else np.asarray(rows)
        p = 1 / (1 + np.exp(-Z[:, 0]))
        return np.c_[1 - p, p]


class Fixed:
    def __init__(self, P):
        self.P = np.asarray(P, float)
        self.col_names = ("a",)

    def predict_proba(self, rows):
        return self.P


def rows_of(Z, names=("a", "b")):
    Z = np.asarray(Z, float)
    return WideMatrix(Z, np.zeros(len(Z), int), names)


@pytest.fixture(scope="module")
def mnl_case():
    ds, _ = generate(mnl_config(n_obs=1500, seed=11))
    tm = train(ModelSpec("m", "mnl", {}), ds)
    return ds, tm, to_wide(ds, tm.layout)


# --- shares ------------------------------------------------------------------


def test_uniform_share():
    np.testing.assert_allclose(I.market_share(Fixed(np.full((7, 4), 0.25)), None), 0.25)


def test_one_hot_rows_agree_under_both_rules():
    pred = Fixed([[1, 0], [0, 1]])
    for mode in ("prob", "label"):
        np.testing.assert_allclose(I.market_share(pred, None, mode), [0.5, 0.5])


def test_label_rule_overweights_modal_class(mnl_case):
    ds, tm, w = mnl_case
    pred = tm.predictor
    prob, label = I.market_share(pred, w), I.market_share(pred, w, "label")
    modal = int(np.argmax(prob))
    assert label[modal] > prob[modal]
    skew = Fixed([[0.6, 0.4]] * 10)
    np.testing.assert_allclose(I.market_share(skew, None, "label"), [1.0, 0.0])
    np.testing.assert_allclose(I.market_share(skew, None), [0.6, 0.4])


def test_share_mode_rejected():
    with pytest.raises(ValueError):
        I.market_share(Fixed([[1.0]]), None, "votes")


@given(st.integers(0, 10**6))
def test_shares_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(4), size=rng.integers(1, 50))
    assert abs(I.market_share(Fixed(P), None).sum() - 1) < 1e-10


def test_argmax_examples():
    assert I.argmax_choice([0.1, 0.7, 0.2]) == 1
    assert I.argmax_choice([0.5, 0.5]) == 0


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=5), st.floats(-500, 500))
def test_argmax_translation_invariant(v, c):
    alts = [f"a{j}" for j in range(len(v))]
    spec = UtilitySpec([Term("v", alts, "b")])
    V = np.array(v)[:, None]
    p = mnl_probabilities([1.0], V, spec, ["v"], alts)
    q = mnl_probabilities([1.0], V + c, spec, ["v"], alts)
    # translation is exact in utilities; only near-ties may flip through rounding
    assert I.argmax_choice(p) == I.argmax_choice(q) or abs(p.max() - p[I.argmax_choice(q)]) < 1e-12


# --- sensitivity ---------------------------------------------------------------


def test_ignored_feature_has_zero_effects(rng):
    r = rows_of(rng.normal(size=(30, 2)))
    s = I.SensitivitySpec("b", 0.5, 1)
    assert I.marginal_effect(Stub(), r, s) == 0.0
    assert I.arc_elasticity(Stub(), r, s) == 0.0


def test_delta_must_be_nonzero():
    with pytest.raises(ValueError):
        I.SensitivitySpec("a", 0.0, 0)


def test_elasticity_matches_brute_force(mnl_case):
    ds, tm, w = mnl_case
    spec = I.SensitivitySpec("x0_alt1", 0.10, 1)
    est = I.arc_elasticity(tm.predictor, w, spec)
    X = ds.X.copy()
    X[:, 1, 0] *= 1.10
    q0 = tm.model.predict_proba(ds)[:, 1].mean()
    q1 = tm.model.predict_proba(ds.with_X(X))[:, 1].mean()
    assert abs(est - (q1 - q0) / q0 / 0.10) < 1e-12


def test_elasticity_zero_baseline_rejected():
    with pytest.raises(ValueError, match="zero"):
        I.arc_elasticity(Fixed([[1.0, 0.0]] * 3), rows_of(np.ones((3, 1)), ("a",)), I.SensitivitySpec("a", 0.1, 1))


def test_binary_marginal_effect_matches_direct_shares(rng):
    n = 2000
    X = np.zeros((n, 2, 2))
    X[:, :, 0] = rng.normal(size=(n, 2))
    X[:, :, 1] = rng.integers(0, 2, n)[:, None]
    V = -1.0 * X[:, :, 0] + np.c_[np.zeros(n), 0.8 * X[:, 1, 1] - 0.3]
    chosen = (rng.gumbel(size=(n, 2)) + V).argmax(1)
    from conftest import make_dataset
    ds = make_dataset(X, chosen, feats=["t", "d"])
    tm = train(ModelSpec("m", "mnl", {}), ds)
    base = ds.with_X(np.where(np.arange(2) == 1, 0.0, X))
    w = to_wide(base, tm.layout)
    est = I.marginal_effect(tm.predictor, w, I.SensitivitySpec("d", 1.0, 1))
    on = ds.with_X(np.where(np.arange(2) == 1, 1.0, X))
    direct = tm.model.predict_proba(on)[:, 1].mean() - tm.model.predict_proba(base)[:, 1].mean()
    assert abs(est - direct) < 1e-12


def test_small_delta_matches_analytic_derivative(mnl_case):
    ds, tm, w = mnl_case
    est = I.marginal_effect(tm.predictor, w, I.SensitivitySpec("x0_alt2", 1e-4, 2))
    P = tm.model.predict_proba(ds)
    beta = tm.model.coef("x0_alt2")
    analytic = np.mean(beta * P[:, 2] * (1 - P[:, 2]))
    assert abs(est - analytic) < 1e-4


def test_constrained_equals_unconstrained_inside_range(mnl_case):
    ds, tm, w = mnl_case
    j = w.col_names.index("x1_alt0")
    inside = w.subset(w.Z[:, j] < tm.col_max[j] - 0.5)
    a = I.marginal_effect(tm.predictor, inside, I.SensitivitySpec("x1_alt0", 0.5, 0))
    b = I.marginal_effect(tm.predictor, inside, I.SensitivitySpec("x1_alt0", 0.5, 0, constrained=True))
    assert a == b


def test_constrained_effect_larger_on_flat_tailed_forest():
    rng = np.random.default_rng(0)
    n = 2000
    x = rng.uniform(0, 10, n)
    y = (rng.uniform(size=n) < x / 10).astype(int)
    w = WideMatrix(np.c_[x, rng.normal(size=n)], y, ("x", "noise"))
    rf = fit_rf(w, n_trees=60, mtry=1, seed=0)
    spec_all = I.SensitivitySpec("x", 3.0, 1)
    spec_c = I.SensitivitySpec("x", 3.0, 1, constrained=True)
    dropped = np.mean(x + 3.0 > rf.col_max[0])
    assert 0.25 < dropped < 0.35
    assert abs(I.marginal_effect(rf, w, spec_c)) >= abs(I.marginal_effect(rf, w, spec_all))


def test_constrained_filter_removing_everything_rejected(rng):
    r = rows_of(rng.uniform(0, 1, (10, 2)))
    pred = Stub(lo=[0, 0], hi=[1, 1])
    with pytest.raises(ValueError, match="training range"):
        I.marginal_effect(pred, r, I.SensitivitySpec("a", 5.0, 1, constrained=True))


def test_value_of_time_examples():
    r = I.value_of_time_ratio({"transfer": -10.69, "tt": -1.94, "ride": -8.13}, "tt")
    assert round(r["transfer"], 1) == 5.5
    assert round(r["ride"], 1) == 4.2
    assert r["tt"] == 1.0


def test_value_of_time_zero_reference():
    with pytest.raises(ValueError):
        I.value_of_time_ratio({"a": 1.0, "tt": 0.0}, "tt")


# --- partial dependence --------------------------------------------------------


def test_pd_of_ignored_feature_is_flat(rng):
    r = rows_of(rng.normal(size=(40, 2)))
    c = I.partial_dependence(Stub(), r, "b", np.linspace(-3, 3, 9), target_alt=1)
    assert np.ptp(c.values) <= 1e-12
    assert abs(c.values[0] - I.market_share(Stub(), r)[1]) < 1e-12


def test_pd_decreasing_for_negative_mnl_coefficient(mnl_case):
    ds, tm, w = mnl_case
    assert tm.model.coef("x0_alt0") < 0
    c = I.partial_dependence(tm.predictor, w, "x0_alt0", target_alt=0)
    assert c.grid.size == 50
    assert np.all(np.diff(c.values) < 0)
    assert np.all((c.values >= 0) & (c.values <= 1))


def test_pd_single_point_is_overridden_share(rng):
    r = rows_of(rng.normal(size=(25, 2)))
    c = I.partial_dependence(Stub(), r, "a", [0.7], target_alt=1)
    expected = I.market_share(Stub(), r.with_column("a", np.full(25, 0.7)))[1]
    assert c.values.tolist() == [expected]


def test_pd_grid_must_ascend(rng):
    with pytest.raises(ValueError, match="ascending"):
        I.partial_dependence(Stub(), rows_of(rng.normal(size=(5, 2))), "a", [1.0, 0.0])


def test_default_grid_spans_observed_range():
    r = rows_of([[1.0, 0], [4.0, 0], [2.0, 0]])
    g = I.default_grid(r, "a")
    assert (g[0], g[-1], g.size) == (1.0, 4.0, 50)
    assert I.default_grid(r, "b").tolist() == [0.0]


# --- importance ----------------------------------------------------------------


def test_gini_depth_one_tree():
    x = np.linspace(-1, 1, 50)
    w = WideMatrix(np.c_[np.zeros(50), x], (x > 0).astype(int), ("c", "x"))
    ranked = I.gini_importance(fit_cart(w, max_leaves=2))
    assert ranked == [("x", 100.0), ("c", 0.0)]


def test_gini_scores_nonnegative_sum_100(rng):
    y = rng.integers(0, 3, 200)
    w = WideMatrix(np.c_[y + rng.normal(size=200), rng.normal(size=(200, 2))], y, ("a", "b", "c"))
    scores = [s for _, s in I.gini_importance(fit_rf(w, n_trees=20, mtry=2))]
    assert min(scores) >= 0 and abs(sum(scores) - 100) < 1e-9
    assert scores == sorted(scores, reverse=True)


def test_gini_requires_tree_model():
    with pytest.raises(TypeError):
        I.gini_importance(Stub())


def test_duplicated_feature_splits_importance():
    rng = np.random.default_rng(0)
    n = 600
    y = rng.integers(0, 2, n)
    x = y + rng.normal(scale=0.8, size=n)
    z = rng.normal(size=(n, 2))
    single = dict(I.gini_importance(fit_rf(WideMatrix(np.c_[x, z], y, ("x", "n1", "n2")),
                                           n_trees=200, mtry=2, seed=0)))
    double = dict(I.gini_importance(fit_rf(WideMatrix(np.c_[x, x, z], y, ("x", "x_copy", "n1", "n2")),
                                           n_trees=200, mtry=2, seed=0)))
    assert abs(double["x"] + double["x_copy"] - single["x"]) <= 0.2 * single["x"]
    assert double["x"] > 0 and double["x_copy"] > 0


def _hand_net(W1, W2, names=("i0", "i1")):
    W1, W2 = np.asarray(W1, float), np.asarray(W2, float)
    return NeuralNet(W1, np.zeros(W1.shape[0]), W2, np.zeros(W2.shape[0]), np.zeros(W1.shape[1]),
                     np.ones(W1.shape[1]), names)


def test_garson_hand_computation():
    net = _hand_net([[1, 2], [3, 1]], [[1, -1], [2, 0.5]])
    # hidden 0: shares (1/3, 2/3), outgoing 3; hidden 1: shares (3/4, 1/4), outgoing 1.5
    expected = {"i0": 2.125 / 4.5 * 100, "i1": 2.375 / 4.5 * 100}
    got = dict(I.nn_importance(net))
    for k in expected:
        assert abs(got[k] - expected[k]) < 1e-10


def test_garson_disconnected_input_is_zero():
    net = _hand_net([[0, 2, 1], [0, -1, 3]], [[1, 1], [1, 1]], ("z", "a", "b"))
    assert dict(I.nn_importance(net))["z"] == 0.0


def test_garson_symmetric_inputs():
    net = _hand_net([[0.5, 0.5], [-2, -2]], [[1, 3], [0.2, 1]])
    got = dict(I.nn_importance(net))
    assert got["i0"] == got["i1"]


def test_importance_table_marks_missing_features(mnl_case):
    ds, tm, w = mnl_case
    fit = x_standardized(tm.model, ds)
    rf = fit_rf(w, n_trees=10, mtry=2)
    nn = fit_nn(w.select(w.col_names[:-1]), hidden=3, epochs=30, n_classes=3)
    table = I.importance_table({"RF": rf, "NN": nn}, {"MNL": fit}, layout=tm.layout)
    rows = dict(table)
    last = w.col_names[-1]
    assert rows[last]["NN"] == "/"
    for model in ("RF", "NN", "MNL"):
        ranks = [r[model] for _, r in table if r[model] != "/"]
        assert sorted(ranks) == list(range(1, len(ranks) + 1))


def test_importance_table_singleton():
    x = np.linspace(-1, 1, 40)
    w = WideMatrix(x[:, None], (x > 0).astype(int), ("x",))
    net = _hand_net([[1.0]], [[1.0], [2.0]], ("x",))
    table = I.importance_table({"CART": fit_cart(w), "NN": net})
    assert table == [("x", {"CART": 1, "NN": 1})]


def test_logit_importance_needs_standardized_fit(mnl_case):
    with pytest.raises(ValueError, match="x_standardized"):
        I.logit_importance(mnl_case[1].model)


# --- CSV exports ---------------------------------------------------------------


def test_csv_writers(tmp_path):
    c = I.PDCurve("tt", np.array([1.0, 2.0]), np.array([0.5, 0.25]), 0)
    I.write_pd_csv([c], tmp_path / "pd.csv", ["h"])
    assert (tmp_path / "pd.csv").read_text().splitlines() == \
        ["# h", "feature,grid_value,probability", "tt,1.0,0.5", "tt,2.0,0.25"]
    I.write_importance_csv([("tt", {"RF": 1, "MNL": "/"})], tmp_path / "imp.csv")
    assert list(csv.reader(open(tmp_path / "imp.csv"))) == [["variable", "RF", "MNL"], ["tt", "1", "/"]]
    I.write_sensitivity_csv([{"variable": "tt", "delta": "1 or 2 min", "estimate": -0.02, "variant": "marginal"}],
                            tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "tt,1 or 2 min,-0.02,marginal"
