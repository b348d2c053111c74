"""Model-agnostic interpretation: market shares, sensitivity analysis,
partial dependence and variable importance.

A predictor is any object with ``predict_proba(rows)`` returning an N x K
matrix, a ``col_names`` tuple, and (for the constrained variants)
``col_min`` / ``col_max`` training ranges aligned with ``col_names``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classifiers import NeuralNet
from .dataset import WideMatrix
from .logit import FittedLogit
from .trees import BoostModel, CartModel, Ensemble, gini_tally


@dataclass(frozen=True)
class SensitivitySpec:
    feature: str            # wide column name
    delta: float            # absolute for marginal effects, fraction for elasticities
    target_alt: int
    constrained: bool = False
    label: str = ""

    def __post_init__(self):
        if self.delta == 0:
            raise ValueError("delta must be nonzero")


@dataclass(frozen=True)
class PDCurve:
    feature: str
    grid: np.ndarray
    values: np.ndarray
    target_alt: int


def market_share(pred, rows, mode: str = "prob") -> np.ndarray:
    """Mean predicted probability per alternative; ``mode="label"`` instead
    counts argmax labels."""
    P = pred.predict_proba(rows)
    if mode == "prob":
        return P.mean(axis=0)
    if mode == "label":
        return np.bincount(np.argmax(P, axis=1), minlength=P.shape[1]) / P.shape[0]
    raise ValueError(f"unknown share mode {mode!r}")


def argmax_choice(probs) -> int:
    """Index of the largest probability, lowest index on ties."""
    return int(np.argmax(np.asarray(probs)))


def _train_range(pred, feature):
    j = list(pred.col_names).index(feature)
    return pred.col_min[j], pred.col_max[j]


def _keep_in_range(pred, perturbed, feature):
    lo, hi = _train_range(pred, feature)
    keep = (perturbed >= lo) & (perturbed <= hi)
    if not keep.any():
        raise ValueError(f"every row leaves the training range of {feature!r}")
    return keep


def _shares_before_after(pred, rows: WideMatrix, spec: SensitivitySpec, perturbed):
    keep = None
    if spec.constrained:
        keep = _keep_in_range(pred, perturbed, spec.feature)
    base_rows = rows if keep is None else rows.subset(keep)
    new_rows = rows.with_column(spec.feature, perturbed)
    if keep is not None:
        new_rows = new_rows.subset(keep)
    q0 = market_share(pred, base_rows)[spec.target_alt]
    q1 = market_share(pred, new_rows)[spec.target_alt]
    return q0, q1


def arc_elasticity(pred, rows: WideMatrix, spec: SensitivitySpec) -> float:
    """[(Q_k' - Q_k) / Q_k] / |delta| with the column scaled by (1 + delta)."""
    x = rows.Z[:, rows.col_names.index(spec.feature)]
    q0, q1 = _shares_before_after(pred, rows, spec, x * (1 + spec.delta))
    if q0 <= 0:
        raise ValueError("baseline share of the target alternative is zero")
    return float((q1 - q0) / q0 / abs(spec.delta))


def marginal_effect(pred, rows: WideMatrix, spec: SensitivitySpec) -> float:
    """(Q_k' - Q_k) / |delta| with the column shifted by delta.

    ``constrained`` drops rows whose shifted value leaves the predictor's
    training range from both averages.
    """
    x = rows.Z[:, rows.col_names.index(spec.feature)]
    q0, q1 = _shares_before_after(pred, rows, spec, x + spec.delta)
    return float((q1 - q0) / abs(spec.delta))


def value_of_time_ratio(effects: Mapping[str, float], reference: str) -> dict:
    """Each marginal effect divided by the reference feature's."""
    ref = effects[reference]
    if ref == 0:
        raise ValueError(f"reference effect {reference!r} is zero")
    return {k: v / ref for k, v in effects.items()}


def default_grid(rows: WideMatrix, feature: str, n: int = 50) -> np.ndarray:
    x = rows.Z[:, rows.col_names.index(feature)]
    lo, hi = float(x.min()), float(x.max())
    return np.array([lo]) if lo == hi else np.linspace(lo, hi, n)


def partial_dependence(pred, rows: WideMatrix, feature: str, grid=None,
                       target_alt: int = 0) -> PDCurve:
    """Mean predicted probability of ``target_alt`` with ``feature`` set to
    each grid value in every row."""
    grid = default_grid(rows, feature) if grid is None else np.asarray(grid, dtype=float)
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly ascending")
    vals = np.array([market_share(pred, rows.with_column(feature, np.full(rows.rows, v)))[target_alt]
                     for v in grid])
    return PDCurve(feature, grid, vals, target_alt)


# ---------------------------------------------------------------------------
# importance


def _rank(names: Sequence[str], scores) -> list:
    order = sorted(range(len(names)), key=lambda j: (-scores[j], j))
    return [(names[j], float(scores[j])) for j in order]


def gini_importance(model) -> list:
    """Impurity decrease per feature over all splits, scaled to sum to 100."""
    if not isinstance(model, (CartModel, Ensemble, BoostModel)):
        raise TypeError(f"gini importance needs a tree model, got {type(model).__name__}")
    tally = gini_tally(model)
    total = tally.sum()
    scores = 100 * tally / total if total > 0 else tally
    return _rank(model.col_names, scores)


def nn_importance(nn: NeuralNet) -> list:
    """Garson's weight decomposition, scaled to sum to 100."""
    a = np.abs(nn.W1)                        # hidden x inputs
    row = a.sum(axis=1, keepdims=True)
    share = np.divide(a, row, out=np.zeros_like(a), where=row > 0)
    out_w = np.abs(nn.W2).sum(axis=0)        # per hidden unit
    contrib = share.T @ out_w
    total = contrib.sum()
    scores = 100 * contrib / total if total > 0 else contrib
    return _rank(nn.col_names, scores)


def _coef_columns(fit: FittedLogit, layout) -> dict:
    """Wide columns each coefficient describes: a person-level feature maps
    to its single column, an alternative-varying term to the column of every
    alternative it covers."""
    if layout is None:
        return {}
    shared = {layout.feature_names[f] for f, a in layout.columns if a is None}
    names = set(layout.col_names)
    out: dict = {}
    for t in fit.spec.terms:
        cols = [t.feature] if t.feature in shared else \
            [c for c in (f"{t.feature}_{a}" for a in t.alts) if c in names]
        for c in cols:
            if c not in out.setdefault(t.coef, []):
                out[t.coef].append(c)
    return out


def logit_importance(fit: FittedLogit, layout=None) -> list:
    """Coefficients ranked by |beta_std_x| (constants and sds excluded).

    With a wide ``layout`` the ranking is per wide column, taking the largest
    |beta_std_x| among the coefficients attached to that column.
    """
    if fit.beta_std_x is None:
        raise ValueError("fit has no X-standardized coefficients; run x_standardized first")
    cols = _coef_columns(fit, layout)
    scores: dict = {}
    for name, v in zip(fit.param_names, fit.beta_std_x):
        if name.startswith("ASC_") or name.startswith("sd.") or not np.isfinite(v):
            continue
        for key in cols.get(name, [name]):
            scores[key] = max(scores.get(key, 0.0), abs(float(v)))
    names = list(scores)
    return _rank(names, [scores[n] for n in names])


def model_importance(model, layout=None) -> list:
    if isinstance(model, FittedLogit):
        return logit_importance(model, layout)
    if isinstance(model, NeuralNet):
        return nn_importance(model)
    return gini_importance(model)


def importance_table(models: Mapping[str, object], logit_fits: Mapping[str, FittedLogit] = None,
                     layout=None) -> list:
    """Rows of (feature, {model name: rank or "/"}) across all models;
    "/" marks a feature the model does not use."""
    rankings = {name: model_importance(m, layout) for name, m in models.items()}
    for name, fit in (logit_fits or {}).items():
        rankings[name] = logit_importance(fit, layout)
    features: list = []
    for ranked in rankings.values():
        for f, _ in ranked:
            if f not in features:
                features.append(f)
    table = []
    for f in features:
        ranks = {}
        for name, ranked in rankings.items():
            pos = [i for i, (g, _) in enumerate(ranked) if g == f]
            ranks[name] = pos[0] + 1 if pos else "/"
        table.append((f, ranks))
    return table


# ---------------------------------------------------------------------------
# CSV exports


def _header(fh, header_lines):
    for line in header_lines:
        fh.write(f"# {line}\n")


def write_pd_csv(curves: Iterable[PDCurve], path, header_lines=()):
    with open(path, "w", newline="") as fh:
        _header(fh, header_lines)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "grid_value", "probability"])
        for c in curves:
            for g, v in zip(c.grid, c.values):
                w.writerow([c.feature, repr(float(g)), repr(float(v))])


def write_importance_csv(table, path, header_lines=()):
    models = list(table[0][1]) if table else []
    with open(path, "w", newline="") as fh:
        _header(fh, header_lines)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", *models])
        for f, ranks in table:
            w.writerow([f, *(ranks[m] for m in models)])


def write_sensitivity_csv(rows, path, header_lines=()):
    """``rows``: dicts with variable, delta, estimate, variant."""
    with open(path, "w", newline="") as fh:
        _header(fh, header_lines)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "delta", "estimate", "variant"])
        for r in rows:
            w.writerow([r["variable"], r["delta"], repr(float(r["estimate"])), r["variant"]])
