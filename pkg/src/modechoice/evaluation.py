"""Paired k-fold cross-validation with individual-level accuracy and
aggregate L1 market-share error."""
from __future__ import annotations

import csv
import json
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .dataset import ChoiceDataset, FoldAssignment, kfold_split, wide_layout
from .models import ModelSpec, train

UNDEFINED = float("nan")
_SIMPLEX_TOL = 1e-6


def accuracy(pred_labels, true_labels, n_classes: int | None = None) -> dict:
    """Overall fraction correct and per-class recall (NaN for classes with
    no true rows)."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("pred_labels and true_labels must be 1-d of equal length")
    if true.size == 0:
        raise ValueError("need at least one label")
    K = n_classes or int(max(pred.max(), true.max())) + 1
    hit = pred == true
    per = np.full(K, UNDEFINED)
    for k in range(K):
        rows = true == k
        if rows.any():
            per[k] = hit[rows].mean()
    return {"overall": float(hit.mean()), "per_class": per}


def _check_simplex(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or np.any(~np.isfinite(v)) or np.any(v < -_SIMPLEX_TOL) \
            or abs(v.sum() - 1.0) > _SIMPLEX_TOL:
        raise ValueError(f"{name} is not a probability simplex: {v.tolist()}")
    return v


def l1_share_error(pred_shares, true_shares) -> float:
    """Sum of absolute share differences, in [0, 2]."""
    p = _check_simplex(pred_shares, "pred_shares")
    q = _check_simplex(true_shares, "true_shares")
    if p.shape != q.shape:
        raise ValueError("share vectors differ in length")
    return float(np.abs(p - q).sum())


def check_proba(P, tol: float = 1e-9) -> None:
    P = np.asarray(P)
    if np.any(~np.isfinite(P)) or np.any(P < -tol) or np.any(np.abs(P.sum(axis=1) - 1) > tol):
        raise ValueError("predicted probabilities are not row simplexes")


# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    model: str
    fold: int
    seed: int
    ok: bool
    overall: float = UNDEFINED
    per_class: list = field(default_factory=list)
    l1: float = UNDEFINED
    error: str = ""


@dataclass
class CvReport:
    models: list                  # ModelSpec
    alt_names: tuple
    k: int
    seed: int
    person_level: bool
    folds: FoldAssignment
    cells: list                   # FoldResult, model-major then fold

    def cells_for(self, name: str) -> list:
        return [c for c in self.cells if c.model == name]

    def summary(self, name: str) -> dict:
        ok = [c for c in self.cells_for(name) if c.ok]
        K = len(self.alt_names)
        out = {"n_ok": len(ok), "n_failed": len(self.cells_for(name)) - len(ok)}
        out["overall"] = _mean_sd([c.overall for c in ok])
        out["l1"] = _mean_sd([c.l1 for c in ok])
        out["per_class"] = [_mean_sd([c.per_class[j] for c in ok if not math.isnan(c.per_class[j])])
                            for j in range(K)]
        return out

    def failed(self) -> list:
        return [c for c in self.cells if not c.ok]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "fold_seed": self.seed,
            "person_level": self.person_level,
            "alternatives": list(self.alt_names),
            "note": "hyperparameters fixed by config and trained inside each fold; no tuning",
            "models": [{"name": m.name, "kind": m.kind, "params": m.resolved()} for m in self.models],
            "summary": {m.name: self.summary(m.name) for m in self.models},
            "folds": [{"model": c.model, "fold": c.fold, "seed": c.seed, "ok": c.ok,
                       "overall": _num(c.overall), "per_class": [_num(v) for v in c.per_class],
                       "l1": _num(c.l1), "error": c.error} for c in self.cells],
        }


def _num(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def _mean_sd(vals):
    vals = [float(v) for v in vals]
    if not vals:
        return {"mean": None, "sd": None, "n": 0}
    mean = math.fsum(vals) / len(vals)
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)) if len(vals) > 1 else None
    return {"mean": mean, "sd": sd, "n": len(vals)}


def job_seed(seed: int, model_id: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, model_id, fold]).generate_state(1)[0])


def _run_cell(spec: ModelSpec, ds: ChoiceDataset, layout, folds: FoldAssignment, fold: int, s: int) -> FoldResult:
    try:
        train_ds = ds.subset(folds.train_index(fold))
        test_ds = ds.subset(folds.test_index(fold))
        tm = train(spec, train_ds, seed=s, layout=layout)
        P = tm.predict_proba(test_ds)
        check_proba(P, 1e-6)
        labels = np.argmax(P, axis=1)
        acc = accuracy(labels, test_ds.chosen, ds.n_alts)
        l1 = l1_share_error(P.mean(axis=0), test_ds.shares())
        return FoldResult(spec.name, fold, s, True, acc["overall"], acc["per_class"].tolist(), l1)
    except Exception as e:  # noqa: BLE001  a failing cell must not stop the run
        msg = f"{type(e).__name__}: {e}"
        if not str(e):
            msg += " " + traceback.format_exc(limit=1).strip().splitlines()[-1]
        return FoldResult(spec.name, fold, s, False, error=msg)


def cross_validate(models: Sequence[ModelSpec], ds: ChoiceDataset, k: int = 10, seed: int = 0,
                   n_jobs: int = 1, person_level: bool = False) -> CvReport:
    """Every model is scored on the same fold assignment.

    A (model, fold) cell that fails to train or predict is recorded with its
    error and excluded from the summary statistics.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate model names: {names}")
    folds = kfold_split(ds.n_obs, k, seed, groups=ds.person_id if person_level else None)
    layout = wide_layout(ds)
    jobs = [(m, f, job_seed(seed, i, f)) for i, m in enumerate(models) for f in range(k)]
    if n_jobs == 1:
        cells = [_run_cell(m, ds, layout, folds, f, s) for m, f, s in jobs]
    else:
        cells = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(m, ds, layout, folds, f, s) for m, f, s in jobs)
    return CvReport(list(models), ds.alt_names, k, seed, person_level, folds, list(cells))


# ---------------------------------------------------------------------------


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def write_cv_report(report: CvReport, out_dir, header_lines=()) -> list:
    """Writes accuracy.csv, l1.csv and cv.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [m.name for m in report.models]
    summ = {n: report.summary(n) for n in names}
    footnotes = [f"{c.model} fold {c.fold} failed and is excluded: {c.error}" for c in report.failed()]

    acc_path = out / "accuracy.csv"
    with open(acc_path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "stat", *names])
        for label, key in [("overall", None), *[(a, j) for j, a in enumerate(report.alt_names)]]:
            for stat in ("mean", "sd"):
                row = []
                for n in names:
                    d = summ[n]["overall"] if key is None else summ[n]["per_class"][key]
                    row.append(_fmt(d[stat]))
                w.writerow([label, stat, *row])
        for note in footnotes:
            fh.write(f"# note: {note}\n")

    l1_path = out / "l1.csv"
    with open(l1_path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mean_l1", "sd_l1", "n_folds"])
        for n in names:
            d = summ[n]["l1"]
            w.writerow([n, _fmt(d["mean"]), _fmt(d["sd"]), d["n"]])
        for note in footnotes:
            fh.write(f"# note: {note}\n")

    json_path = out / "cv.json"
    doc = report.to_dict()
    doc["_meta"] = list(header_lines)
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return [acc_path, l1_path, json_path]
