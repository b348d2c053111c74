"""Synthetic panel choice data from Gumbel-error utility maximization.

Utilities are ``U_nk = ASC_k + sum_terms beta_i * g_i(x) + eps_nk`` with
i.i.d. standard Gumbel errors. Random coefficients are drawn once per
individual and shared by all of that individual's occasions.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import ChoiceDataset, write_long

SHAPES = ("linear", "flat_tails", "threshold", "interaction", "xor")


@dataclass(frozen=True)
class SynthFeature:
    name: str
    level: str = "alt"          # "alt": varies by alternative; "person": one value per individual
    low: float = 0.0
    high: float = 1.0
    binary: bool = False
    alts: tuple = ()            # alternatives the feature applies to; empty means all

    def __post_init__(self):
        object.__setattr__(self, "alts", tuple(self.alts))
        if self.level not in ("alt", "person"):
            raise ValueError(f"feature {self.name!r}: level must be 'alt' or 'person'")
        if not self.binary and not self.high > self.low:
            raise ValueError(f"feature {self.name!r}: need high > low")


@dataclass(frozen=True)
class SynthTerm:
    """``beta * g(x)`` added to the utility of each alternative in ``alts``.

    Shapes: ``linear`` g = x; ``flat_tails`` g = clip(x, *knots);
    ``threshold`` g = 1[x > knots[0]]; ``interaction`` g = x * other;
    ``xor`` g = +1 when exactly one of x > knots[0], other > knots[1] holds,
    else -1.
    """

    feature: str
    alts: tuple
    beta: float
    sd: float = 0.0
    shape: str = "linear"
    knots: tuple = ()
    other: str = ""

    def __post_init__(self):
        object.__setattr__(self, "alts", tuple(self.alts))
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        if self.shape not in SHAPES:
            raise ValueError(f"unknown term shape {self.shape!r}")
        if self.sd < 0:
            raise ValueError("sd must be >= 0")
        need = {"flat_tails": 2, "threshold": 1, "xor": 2}.get(self.shape, 0)
        if len(self.knots) < need:
            raise ValueError(f"shape {self.shape!r} needs {need} knot(s)")
        if self.shape in ("interaction", "xor") and not self.other:
            raise ValueError(f"shape {self.shape!r} needs 'other'")


@dataclass(frozen=True)
class SynthConfig:
    alternatives: tuple = ("alt0", "alt1", "alt2")
    n_individuals: int = 1000
    n_occasions: int = 1
    features: tuple = ()
    terms: tuple = ()
    constants: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "features", tuple(
            f if isinstance(f, SynthFeature) else SynthFeature(**f) for f in self.features))
        object.__setattr__(self, "terms", tuple(
            t if isinstance(t, SynthTerm) else SynthTerm(**t) for t in self.terms))
        if len(self.alternatives) < 2:
            raise ValueError("need at least two alternatives")
        if self.n_individuals < 1 or self.n_occasions < 1:
            raise ValueError("n_individuals and n_occasions must be >= 1")
        if not self.features:
            raise ValueError("need at least one feature")
        names = [f.name for f in self.features]
        for t in self.terms:
            for ref in (t.feature, t.other):
                if ref and ref not in names:
                    raise ValueError(f"term references unknown feature {ref!r}")
            for a in t.alts:
                if a not in self.alternatives:
                    raise ValueError(f"term references unknown alternative {a!r}")
        for f in self.features:
            for a in f.alts:
                if a not in self.alternatives:
                    raise ValueError(f"feature {f.name!r} references unknown alternative {a!r}")
        for a in self.constants:
            if a not in self.alternatives:
                raise ValueError(f"constant for unknown alternative {a!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alternatives"] = list(self.alternatives)
        return d


def _shape(t: SynthTerm, x, other):
    if t.shape == "linear":
        return x
    if t.shape == "flat_tails":
        return np.clip(x, t.knots[0], t.knots[1])
    if t.shape == "threshold":
        return (x > t.knots[0]).astype(float)
    if t.shape == "interaction":
        return x * other
    return np.where((x > t.knots[0]) != (other > t.knots[1]), 1.0, -1.0)


def generate(cfg: SynthConfig):
    """Returns (dataset, ground_truth dict)."""
    rng = np.random.default_rng(cfg.seed)
    I, T, K, P = cfg.n_individuals, cfg.n_occasions, len(cfg.alternatives), len(cfg.features)
    N = I * T
    person = np.repeat(np.arange(I), T)
    X = np.zeros((N, K, P))
    mask = np.zeros((N, K, P), dtype=bool)
    for p, f in enumerate(cfg.features):
        applies = np.array([not f.alts or a in f.alts for a in cfg.alternatives])
        if f.level == "person":
            if f.binary:
                v = rng.integers(0, 2, size=I).astype(float)
            else:
                v = rng.uniform(f.low, f.high, size=I)
            X[:, :, p] = v[person][:, None]
        else:
            if f.binary:
                X[:, :, p] = rng.integers(0, 2, size=(N, K))
            else:
                X[:, :, p] = rng.uniform(f.low, f.high, size=(N, K))
        X[:, ~applies, p] = 0.0
        mask[:, :, p] = applies
    fpos = {f.name: p for p, f in enumerate(cfg.features)}
    apos = {a: k for k, a in enumerate(cfg.alternatives)}
    V = np.zeros((N, K))
    for a, c in cfg.constants.items():
        V[:, apos[a]] += c
    person_betas = {}
    for i, t in enumerate(cfg.terms):
        b = np.full(I, float(t.beta))
        if t.sd > 0:
            b = b + t.sd * rng.standard_normal(I)
            person_betas[f"term{i}:{t.feature}"] = b
        alts = t.alts or cfg.alternatives
        for a in alts:
            k = apos[a]
            x = X[:, k, fpos[t.feature]]
            other = X[:, k, fpos[t.other]] if t.other else None
            V[:, k] += b[person] * _shape(t, x, other)
    U = V + rng.gumbel(size=(N, K))
    chosen = np.argmax(U, axis=1)
    P_true = np.exp(V - V.max(axis=1, keepdims=True))
    P_true /= P_true.sum(axis=1, keepdims=True)
    ds = ChoiceDataset(
        X=X, chosen=chosen, person_id=np.array([f"p{i}" for i in person], dtype=object),
        alt_names=cfg.alternatives, feature_names=tuple(f.name for f in cfg.features),
        mask=mask, obs_id=np.array([f"o{n}" for n in range(N)], dtype=object),
    )
    truth = {
        "config": cfg.to_dict(),
        "n_obs": N,
        "empirical_shares": (np.bincount(chosen, minlength=K) / N).tolist(),
        "expected_shares": P_true.mean(axis=0).tolist(),
        "realized_random_coef_mean": {k: float(v.mean()) for k, v in person_betas.items()},
        "realized_random_coef_sd": {k: float(v.std(ddof=1)) if v.size > 1 else 0.0
                                    for k, v in person_betas.items()},
    }
    return ds, truth


def write_synth(cfg: SynthConfig, data_path, truth_path, header_lines=()):
    ds, truth = generate(cfg)
    write_long(ds, data_path, header_lines)
    truth["_meta"] = list(header_lines)
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ds, truth


# ---------------------------------------------------------------------------
# ready-made generators


def mnl_config(n_obs=5000, beta=(-1.0, 0.5), asc=(0.3, -0.2), seed=0) -> SynthConfig:
    """Three alternatives, two generic alternative-varying features."""
    alts = ("alt0", "alt1", "alt2")
    feats = tuple(SynthFeature(f"x{j}", low=-2.0, high=2.0) for j in range(len(beta)))
    terms = tuple(SynthTerm(f"x{j}", alts, b) for j, b in enumerate(beta))
    return SynthConfig(alts, n_obs, 1, feats, terms, dict(zip(alts[1:], asc)), seed)


def mixl_config(n_individuals=500, n_occasions=7, mean=-1.0, sd=0.5, seed=0) -> SynthConfig:
    """Three alternatives, one Normal(mean, sd) coefficient on ``x``
    and a fixed coefficient on ``w``."""
    alts = ("alt0", "alt1", "alt2")
    feats = (SynthFeature("x", low=-2.0, high=2.0), SynthFeature("w", low=-2.0, high=2.0))
    terms = (SynthTerm("x", alts, mean, sd), SynthTerm("w", alts, 0.5))
    return SynthConfig(alts, n_individuals, n_occasions, feats, terms, {"alt1": 0.2, "alt2": -0.2}, seed)


def nonlinear_config(n_individuals=2000, seed=0) -> SynthConfig:
    """Four modes with a strong xor interaction of two person-level
    features and a flat-tailed travel-time effect."""
    alts = ("pt", "car", "ride", "walk")
    feats = (
        SynthFeature("tt", low=0.0, high=60.0),
        SynthFeature("cost", low=0.0, high=10.0, alts=("pt", "car", "ride")),
        SynthFeature("age", level="person", low=18.0, high=80.0),
        SynthFeature("income", level="person", low=0.0, high=10.0),
        SynthFeature("noise", level="person", low=0.0, high=1.0),
    )
    terms = (
        SynthTerm("tt", alts, -0.12, shape="flat_tails", knots=(20.0, 40.0)),
        SynthTerm("cost", ("pt", "car", "ride"), -0.2),
        SynthTerm("age", ("car",), 2.5, shape="xor", knots=(49.0, 5.0), other="income"),
        SynthTerm("age", ("walk",), -2.5, shape="xor", knots=(49.0, 5.0), other="income"),
    )
    return SynthConfig(alts, n_individuals, 1, feats, terms, {"car": 0.0, "ride": -1.0, "walk": 0.0}, seed)


def flat_tail_config(n_individuals=4000, seed=0) -> SynthConfig:
    """Binary choice driven by a clip(x, 3, 7) response on alt1's ``x``,
    plus four pure-noise person-level features."""
    alts = ("alt0", "alt1")
    feats = (SynthFeature("x", low=0.0, high=10.0, alts=("alt1",)),
             *(SynthFeature(f"z{i}", level="person") for i in range(4)))
    terms = (SynthTerm("x", ("alt1",), 1.0, shape="flat_tails", knots=(3.0, 7.0)),)
    return SynthConfig(alts, n_individuals, 1, feats, terms, {"alt1": -5.0}, seed)
