"""Model registry: one training entry point for every model family.

Logit models consume the long-form ChoiceDataset; the ML models consume its
wide projection. Every trained model exposes ``predict_proba(ds)`` on long
data and ``predictor`` for the wide-row interpretation contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import fit_nb, fit_nn
from .dataset import ChoiceDataset, DataError, WideLayout, to_wide, wide_layout
from .logit import (LogitPredictor, RandomCoefSpec, Term, UtilitySpec, fit_mixl, fit_mnl)
from .trees import fit_bagging, fit_boost, fit_cart, fit_rf

LOGIT_KINDS = ("mnl", "mixl")
ML_KINDS = ("nb", "cart", "bag", "rf", "boost", "nn")
KINDS = LOGIT_KINDS + ML_KINDS

DEFAULTS = {
    "mnl": {},
    "mixl": {"n_draws": 1000, "random": None},
    "nb": {},
    "cart": {"max_leaves": 6, "min_split": 10},
    "bag": {"n_trees": 400},
    "rf": {"n_trees": 500, "mtry": 12},
    "boost": {"n_iters": 400, "shrinkage": 0.14, "depth": 10, "min_node": 10},
    "nn": {"hidden": 18, "decay": 0.4, "epochs": 2000, "lr": 0.01},
}
_LOGIT_KEYS = ("reference", "generic", "terms", "constants")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model {self.name!r}: unknown kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        allowed = set(DEFAULTS[self.kind]) | (set(_LOGIT_KEYS) if self.kind in LOGIT_KINDS else set())
        unknown = sorted(set(self.params) - allowed)
        if unknown:
            raise ValueError(f"model {self.name!r}: unknown parameter(s) {', '.join(unknown)}")

    @property
    def is_logit(self) -> bool:
        return self.kind in LOGIT_KINDS

    def resolved(self) -> dict:
        out = dict(DEFAULTS[self.kind])
        out.update(self.params)
        return out


def default_utility_spec(ds: ChoiceDataset, reference=None, generic=()) -> UtilitySpec:
    """Alternative-specific coefficients for every wide column.

    Features that vary across alternatives get one coefficient per applicable
    alternative, named like the wide column ``{feature}_{alt}``. Person-level
    features get one coefficient per non-reference alternative. Features in
    ``generic`` share a single coefficient across alternatives. Constants are
    added for every non-reference alternative.
    """
    layout = wide_layout(ds)
    ref = ds.alt_names[0] if reference is None else reference
    if ref not in ds.alt_names:
        raise DataError(f"reference alternative {ref!r} not in {list(ds.alt_names)}")
    generic = set(generic)
    missing = generic - set(ds.feature_names)
    if missing:
        raise DataError(f"generic feature(s) not in data: {sorted(missing)}")
    others = tuple(a for a in ds.alt_names if a != ref)
    terms = []
    for fi, f in enumerate(ds.feature_names):
        cols = [(g, a) for g, a in layout.columns if g == fi]
        if f in generic:
            alts = [a for a in ds.alt_names if ds.mask[:, ds.alt_index(a), ds.feature_index(f)].any()]
            terms.append(Term(f, tuple(alts), f))
        elif cols and cols[0][1] is None:
            terms.extend(Term(f, (a,), f"{f}_{a}") for a in others)
        else:
            terms.extend(Term(f, (ds.alt_names[a],), f"{f}_{ds.alt_names[a]}") for _, a in cols)
    return UtilitySpec(tuple(terms), others)


@dataclass
class TrainedModel:
    spec: ModelSpec
    model: object
    layout: WideLayout
    col_min: np.ndarray
    col_max: np.ndarray
    seed: int = 0

    @property
    def predictor(self):
        if self.spec.is_logit:
            return LogitPredictor(self.model, self.layout, self.col_min, self.col_max)
        return self.model

    def predict_proba(self, ds: ChoiceDataset) -> np.ndarray:
        if self.spec.is_logit:
            return self.model.predict_proba(ds)
        return self.model.predict_proba(to_wide(ds, self.layout))


def _utility(spec: ModelSpec, ds: ChoiceDataset) -> UtilitySpec:
    """Explicit ``terms`` (each {feature, alts, coef}) with ``constants``, or
    the default alternative-specific specification."""
    p = spec.resolved()
    if p.get("terms"):
        try:
            terms = tuple(Term(t["feature"], tuple(t["alts"]), t.get("coef", t["feature"])) for t in p["terms"])
        except (KeyError, TypeError) as e:
            raise DataError(f"model {spec.name!r}: each term needs 'feature' and 'alts' ({e})") from None
        constants = p.get("constants")
        if constants is None:
            constants = tuple(a for a in ds.alt_names if a != (p.get("reference") or ds.alt_names[0]))
        u = UtilitySpec(terms, tuple(constants))
        u.design(ds.X[:1], ds.feature_names, ds.alt_names)
        return u
    return default_utility_spec(ds, p.get("reference"), p.get("generic") or ())


def train(spec: ModelSpec, ds: ChoiceDataset, seed: int = 0, layout: WideLayout | None = None) -> TrainedModel:
    """Fit ``spec`` on ``ds``; ``layout`` fixes the wide projection across folds."""
    layout = layout or wide_layout(ds)
    w = to_wide(ds, layout)
    p = spec.resolved()
    K = ds.n_alts
    k = spec.kind
    if k == "mnl":
        m = fit_mnl(ds, _utility(spec, ds))
    elif k == "mixl":
        u = _utility(spec, ds)
        random = p["random"] or [c for c in u.coef_names if not c.startswith("ASC_")][:1]
        unknown = [c for c in random if c not in u.coef_names]
        if unknown:
            raise DataError(f"model {spec.name!r}: random coefficient(s) {unknown} not in utility")
        m = fit_mixl(ds, u, RandomCoefSpec(tuple(random), int(p["n_draws"])))
    elif k == "nb":
        m = fit_nb(w, n_classes=K)
    elif k == "cart":
        m = fit_cart(w, max_leaves=int(p["max_leaves"]), min_split=int(p["min_split"]), n_classes=K)
    elif k == "bag":
        m = fit_bagging(w, n_trees=int(p["n_trees"]), seed=seed, n_classes=K)
    elif k == "rf":
        m = fit_rf(w, n_trees=int(p["n_trees"]), mtry=min(int(p["mtry"]), w.cols), seed=seed, n_classes=K)
    elif k == "boost":
        m = fit_boost(w, n_iters=int(p["n_iters"]), shrinkage=float(p["shrinkage"]), depth=int(p["depth"]),
                      min_node=int(p["min_node"]), n_classes=K)
    else:
        m = fit_nn(w, hidden=int(p["hidden"]), decay=float(p["decay"]), epochs=int(p["epochs"]),
                   lr=float(p["lr"]), seed=seed, n_classes=K)
    return TrainedModel(spec, m, layout, w.Z.min(axis=0), w.Z.max(axis=0), seed)
