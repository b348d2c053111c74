"""Panel choice data: long-form ingest, wide-form flattening, VIF screening, CV folds."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed choice data."""


DEFAULT_SCHEMA = {
    "obs_id": "obs_id",
    "person_id": "person_id",
    "alt": "alt",
    "chosen": "chosen",
}


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class ChoiceDataset:
    """N observations x K alternatives x P features, long (logit) layout.

    ``mask[n, k, p]`` is False where feature p does not apply to alternative k
    (the cell is stored as 0). ``availability[n, k]`` is False for alternatives
    absent from the choice set of observation n.
    """

    X: np.ndarray
    chosen: np.ndarray
    person_id: np.ndarray
    alt_names: tuple
    feature_names: tuple
    availability: np.ndarray = None
    mask: np.ndarray = None
    obs_id: np.ndarray = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 3:
            raise DataError(f"X must be N x K x P, got shape {X.shape}")
        n, k, p = X.shape
        if n < 1 or k < 2 or p < 1:
            raise DataError(f"need N>=1, K>=2, P>=1; got N={n}, K={k}, P={p}")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise DataError(
                f"non-finite attribute at observation {bad[0]}, alternative "
                f"{self.alt_names[bad[1]]!r}, feature {self.feature_names[bad[2]]!r}"
            )
        chosen = np.asarray(self.chosen, dtype=np.int64).copy()
        avail = (np.ones((n, k), dtype=bool) if self.availability is None
                 else np.asarray(self.availability, dtype=bool).copy())
        mask = (np.ones((n, k, p), dtype=bool) if self.mask is None
                else np.asarray(self.mask, dtype=bool).copy())
        person = np.asarray(self.person_id).copy()
        obs = np.arange(n) if self.obs_id is None else np.asarray(self.obs_id).copy()
        if len(self.alt_names) != k or len(self.feature_names) != p:
            raise DataError("alt_names / feature_names do not match X")
        if chosen.shape != (n,) or person.shape != (n,) or obs.shape != (n,):
            raise DataError("chosen, person_id and obs_id must have length N")
        if avail.shape != (n, k) or mask.shape != (n, k, p):
            raise DataError("availability must be N x K and mask N x K x P")
        if np.any((chosen < 0) | (chosen >= k)):
            raise DataError("chosen index outside [0, K)")
        if not np.all(avail[np.arange(n), chosen]):
            i = int(np.flatnonzero(~avail[np.arange(n), chosen])[0])
            raise DataError(f"observation {obs[i]} chose an unavailable alternative")
        X = X.copy()
        _freeze(X, chosen, avail, mask, person, obs)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "chosen", chosen)
        object.__setattr__(self, "availability", avail)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "person_id", person)
        object.__setattr__(self, "obs_id", obs)
        object.__setattr__(self, "alt_names", tuple(self.alt_names))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_alts(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    @property
    def n_individuals(self) -> int:
        return len(np.unique(self.person_id))

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown feature {name!r}") from None

    def alt_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self.alt_names.index(name)
        except ValueError:
            raise DataError(f"unknown alternative {name!r}") from None

    def subset(self, idx) -> "ChoiceDataset":
        idx = np.asarray(idx)
        return ChoiceDataset(
            X=self.X[idx], chosen=self.chosen[idx], person_id=self.person_id[idx],
            alt_names=self.alt_names, feature_names=self.feature_names,
            availability=self.availability[idx], mask=self.mask[idx],
            obs_id=self.obs_id[idx],
        )

    def with_X(self, X) -> "ChoiceDataset":
        return ChoiceDataset(
            X=X, chosen=self.chosen, person_id=self.person_id,
            alt_names=self.alt_names, feature_names=self.feature_names,
            availability=self.availability, mask=self.mask, obs_id=self.obs_id,
        )

    def person_groups(self):
        """(order, starts): ``order`` sorts observations so each person is one
        contiguous block, ``starts`` gives the block offsets (for reduceat)."""
        _, first, inverse = np.unique(self.person_id, return_index=True, return_inverse=True)
        # rank persons by first appearance so the ordering is stable for the caller
        rank = np.empty_like(first)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        key = rank[inverse]
        order = np.argsort(key, kind="stable")
        counts = np.bincount(key)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        return order, starts

    def shares(self) -> np.ndarray:
        return np.bincount(self.chosen, minlength=self.n_alts) / self.n_obs


def _parse_float(text, row_no, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row_no}, column {col!r}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row_no}, column {col!r}: non-finite value {text!r}")
    return v


def load_long(source, schema: Mapping[str, str] | None = None,
              features: Sequence[str] | None = None,
              alternatives: Sequence[str] | None = None, _first_row: int = 2) -> ChoiceDataset:
    """Read a long-form CSV (one row per observation x alternative).

    ``source`` is a path, an open text file, or an iterable of dict records.
    Empty feature cells mark a feature as not applicable to that alternative;
    they are stored as 0 and recorded in ``mask``. Alternatives missing from an
    observation are marked unavailable. An optional ``avail`` schema entry names
    a 0/1 availability column.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            lines = fh.readlines()
        n_comments = next((i for i, ln in enumerate(lines) if not ln.startswith("#")), len(lines))
        try:
            return load_long(io.StringIO("".join(lines[n_comments:])), schema, features, alternatives,
                             _first_row=2 + n_comments)
        except DataError as e:
            raise DataError(f"{source}: {e}") from None
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        reader = csv.DictReader(source)
        header = list(reader.fieldnames or [])
        records = reader
    else:
        records = list(source)
        header = list(records[0].keys()) if records else []

    required = [schema[c] for c in ("obs_id", "person_id", "alt", "chosen")]
    for col in required + list(features or []):
        if col not in header:
            raise DataError(f"missing column {col!r}")
    reserved = set(required) | ({schema["avail"]} if "avail" in schema else set())
    if features is None:
        features = [c for c in header if c not in reserved]
    if not features:
        raise DataError("no feature columns")

    rows = []
    for row_no, rec in enumerate(records, start=_first_row):
        chosen_txt = str(rec[schema["chosen"]]).strip()
        if chosen_txt not in ("0", "1", "0.0", "1.0"):
            raise DataError(f"row {row_no}, column {schema['chosen']!r}: expected 0/1, got {chosen_txt!r}")
        vals, applies = [], []
        for f in features:
            txt = rec.get(f)
            if txt is None or str(txt).strip() == "":
                vals.append(0.0)
                applies.append(False)
            else:
                vals.append(_parse_float(txt, row_no, f))
                applies.append(True)
        avail = True
        if "avail" in schema:
            avail = str(rec[schema["avail"]]).strip() in ("1", "1.0", "True", "true")
        rows.append((str(rec[schema["obs_id"]]).strip(), str(rec[schema["person_id"]]).strip(),
                     str(rec[schema["alt"]]).strip(), chosen_txt.startswith("1"), vals, applies,
                     avail, row_no))
    if not rows:
        raise DataError("no data rows")

    if alternatives is None:
        alternatives = list(dict.fromkeys(r[2] for r in rows))
    alt_pos = {a: i for i, a in enumerate(alternatives)}
    obs_pos: dict = {}
    for r in rows:
        obs_pos.setdefault(r[0], len(obs_pos))
    n, k, p = len(obs_pos), len(alternatives), len(features)
    X = np.zeros((n, k, p))
    mask = np.zeros((n, k, p), dtype=bool)
    avail = np.zeros((n, k), dtype=bool)
    seen = np.zeros((n, k), dtype=bool)
    chosen = np.full(n, -1, dtype=np.int64)
    person = [None] * n
    for obs, pid, alt, is_chosen, vals, applies, av, row_no in rows:
        if alt not in alt_pos:
            raise DataError(f"row {row_no}, column {schema['alt']!r}: unknown alternative {alt!r}")
        i, j = obs_pos[obs], alt_pos[alt]
        if seen[i, j]:
            raise DataError(f"row {row_no}: duplicate (obs_id, alt) pair ({obs}, {alt})")
        if person[i] is not None and person[i] != pid:
            raise DataError(f"row {row_no}, column {schema['person_id']!r}: obs {obs} has two person ids")
        person[i] = pid
        seen[i, j] = True
        X[i, j] = vals
        mask[i, j] = applies
        avail[i, j] = av
        if is_chosen:
            if chosen[i] >= 0:
                raise DataError(f"obs {obs} has more than one chosen=1 row (row {row_no})")
            if not av:
                raise DataError(f"row {row_no}: obs {obs} chose an unavailable alternative")
            chosen[i] = j
    missing = np.flatnonzero(chosen < 0)
    if len(missing):
        obs_names = list(obs_pos)
        raise DataError(f"obs {obs_names[missing[0]]} has no chosen=1 row")
    return ChoiceDataset(X=X, chosen=chosen, person_id=np.array(person, dtype=object),
                         alt_names=tuple(alternatives), feature_names=tuple(features),
                         availability=avail, mask=mask, obs_id=np.array(list(obs_pos), dtype=object))


def write_long(ds: ChoiceDataset, path, header_lines: Iterable[str] = ()):
    """Inverse of load_long; non-applicable cells are written empty."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obs_id", "person_id", "alt", "chosen", *ds.feature_names])
        for i in range(ds.n_obs):
            for j in range(ds.n_alts):
                if not ds.availability[i, j]:
                    continue
                vals = [repr(float(v)) if m else "" for v, m in zip(ds.X[i, j], ds.mask[i, j])]
                w.writerow([ds.obs_id[i], ds.person_id[i], ds.alt_names[j],
                            int(ds.chosen[i] == j), *vals])


def read_csv_skipping_comments(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return io.StringIO("".join(lines))


# ---------------------------------------------------------------------------
# wide layout


@dataclass(frozen=True)
class WideLayout:
    """How ChoiceDataset features map to wide columns.

    Each entry of ``columns`` is (feature index, alternative index or None);
    None means an individual-level feature shared by all alternatives.
    """

    columns: tuple
    col_names: tuple
    alt_names: tuple
    feature_names: tuple

    def to_X(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        n = Z.shape[0]
        X = np.zeros((n, len(self.alt_names), len(self.feature_names)))
        for c, (f, a) in enumerate(self.columns):
            if a is None:
                X[:, :, f] = Z[:, c][:, None]
            else:
                X[:, a, f] = Z[:, c]
        return X

    def column(self, name: str) -> int:
        try:
            return self.col_names.index(name)
        except ValueError:
            raise DataError(f"unknown wide column {name!r}") from None


@dataclass(frozen=True)
class WideMatrix:
    """One row per observation (machine-learning layout)."""

    Z: np.ndarray
    y: np.ndarray
    col_names: tuple
    layout: WideLayout = None

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        y = np.array(self.y, dtype=np.int64)
        if Z.ndim != 2 or Z.shape[1] != len(self.col_names):
            raise DataError("Z columns do not match col_names")
        if len(set(self.col_names)) != len(self.col_names):
            raise DataError("duplicated column names")
        _freeze(Z, y)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "col_names", tuple(self.col_names))

    @property
    def rows(self) -> int:
        return self.Z.shape[0]

    @property
    def cols(self) -> int:
        return self.Z.shape[1]

    def subset(self, idx) -> "WideMatrix":
        return WideMatrix(self.Z[idx], self.y[idx], self.col_names, self.layout)

    def select(self, names: Sequence[str]) -> "WideMatrix":
        """Columns by name, in the given order (layout is dropped)."""
        pos = {c: i for i, c in enumerate(self.col_names)}
        missing = [c for c in names if c not in pos]
        if missing:
            raise DataError(f"column {missing[0]!r} not present in rows")
        return WideMatrix(self.Z[:, [pos[c] for c in names]], self.y, tuple(names))

    def drop(self, names: Sequence[str]) -> "WideMatrix":
        for c in names:
            if c not in self.col_names:
                raise DataError(f"cannot drop unknown column {c!r}")
        return self.select([c for c in self.col_names if c not in set(names)])

    def with_column(self, name: str, values) -> "WideMatrix":
        j = self.col_names.index(name)
        Z = self.Z.copy()
        Z[:, j] = values
        return WideMatrix(Z, self.y, self.col_names, self.layout)


def wide_layout(ds: ChoiceDataset) -> WideLayout:
    columns, names = [], []
    for f, fname in enumerate(ds.feature_names):
        m = ds.mask[:, :, f]
        x = ds.X[:, :, f]
        individual = bool(np.all(m)) and bool(np.all(x == x[:, :1]))
        if individual:
            columns.append((f, None))
            names.append(fname)
            continue
        for a, aname in enumerate(ds.alt_names):
            if np.any(m[:, a]):
                columns.append((f, a))
                names.append(f"{fname}_{aname}")
    return WideLayout(tuple(columns), tuple(names), ds.alt_names, ds.feature_names)


def to_wide(ds: ChoiceDataset, layout: WideLayout | None = None) -> WideMatrix:
    """Flatten: alternative-varying features get one column per applicable
    alternative, individual-level features a single column."""
    layout = layout or wide_layout(ds)
    Z = np.empty((ds.n_obs, len(layout.columns)))
    for c, (f, a) in enumerate(layout.columns):
        Z[:, c] = ds.X[:, 0 if a is None else a, f]
    return WideMatrix(Z, ds.chosen, layout.col_names, layout)


def align_to_layout(ds: ChoiceDataset, layout: WideLayout) -> ChoiceDataset:
    """Reorder ``ds`` features to ``layout.feature_names``; names the first mismatch."""
    if tuple(ds.alt_names) != tuple(layout.alt_names):
        raise DataError(f"alternatives differ: model has {list(layout.alt_names)}, data has {list(ds.alt_names)}")
    missing = [f for f in layout.feature_names if f not in ds.feature_names]
    if missing:
        raise DataError(f"model feature {missing[0]!r} not present in data")
    idx = [ds.feature_names.index(f) for f in layout.feature_names]
    return ChoiceDataset(X=ds.X[:, :, idx], chosen=ds.chosen, person_id=ds.person_id,
                         alt_names=ds.alt_names, feature_names=layout.feature_names,
                         availability=ds.availability, mask=ds.mask[:, :, idx], obs_id=ds.obs_id)


def from_wide(w: WideMatrix, template: ChoiceDataset) -> ChoiceDataset:
    """Regroup wide rows into the long layout of ``template``."""
    X = w.layout.to_X(w.Z) * template.mask
    return template.with_X(X)


def write_wide(w: WideMatrix, path, alt_names=None, header_lines: Iterable[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([*w.col_names, "choice"])
        for z, y in zip(w.Z, w.y):
            wr.writerow([*(repr(float(v)) for v in z), alt_names[y] if alt_names else int(y)])


# ---------------------------------------------------------------------------
# multicollinearity


def vif(w) -> dict:
    """Variance inflation factor per column: 1 / (1 - R^2) of the OLS
    regression (with intercept) of the column on all others.

    Perfectly collinear columns get ``math.inf``.
    """
    Z = w.Z if isinstance(w, WideMatrix) else np.asarray(w, dtype=float)
    names = w.col_names if isinstance(w, WideMatrix) else tuple(range(Z.shape[1]))
    n, m = Z.shape
    if m < 2:
        raise DataError("VIF needs at least two columns")
    sd = Z.std(axis=0)
    if np.any(sd == 0):
        raise DataError(f"constant column {names[int(np.flatnonzero(sd == 0)[0])]!r}")
    Zc = Z - Z.mean(axis=0)
    out = {}
    for j in range(m):
        target = Zc[:, j]
        others = np.delete(Zc, j, axis=1)
        coef, *_ = np.linalg.lstsq(others, target, rcond=None)
        resid = target - others @ coef
        sst = float(target @ target)
        ssr = float(resid @ resid)
        if ssr <= 1e-10 * sst:
            out[names[j]] = math.inf
        else:
            out[names[j]] = sst / ssr
    return out


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def kfold_split(n: int, k: int, seed: int, groups=None) -> FoldAssignment:
    """Seeded shuffle, then round-robin slicing.

    With ``groups`` (e.g. person ids) whole groups are dealt to folds instead
    of single observations; fold sizes are then only approximately balanced.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of observations n={n}")
    rng = np.random.default_rng(seed)
    if groups is None:
        perm = rng.permutation(n)
        assignment = np.empty(n, dtype=np.int64)
        assignment[perm] = np.arange(n) % k
    else:
        _, inverse = np.unique(np.asarray(groups), return_inverse=True)
        n_groups = inverse.max() + 1
        if k > n_groups:
            raise ValueError(f"k={k} exceeds the number of groups {n_groups}")
        perm = rng.permutation(n_groups)
        group_fold = np.empty(n_groups, dtype=np.int64)
        group_fold[perm] = np.arange(n_groups) % k
        assignment = group_fold[inverse]
    assignment.setflags(write=False)
    return FoldAssignment(k, assignment, seed)


def write_folds(folds: FoldAssignment, obs_ids, path, header_lines: Iterable[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obs_id", "fold"])
        for o, f in zip(obs_ids, folds.assignment):
            w.writerow([o, int(f)])
