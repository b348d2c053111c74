"""Multinomial and panel mixed logit: likelihoods, estimation, fit statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import erfc, logsumexp

from .dataset import ChoiceDataset, DataError, WideMatrix
from .optim import OptProblem, fd_hessian, maximize

PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)
HALTON_SKIP = 10


@dataclass(frozen=True)
class Term:
    """One utility term: ``coef * feature`` added to each alternative in ``alts``."""

    feature: str
    alts: tuple
    coef: str

    def __post_init__(self):
        object.__setattr__(self, "alts", tuple(self.alts))


@dataclass(frozen=True)
class UtilitySpec:
    """Linear-in-parameters utilities with i.i.d. Gumbel errors.

    Coefficient ids are dense: term coefficients in order of first appearance,
    followed by one alternative-specific constant per entry of ``constants``.
    """

    terms: tuple
    constants: tuple = ()
    error_assumption: str = "i.i.d. Gumbel"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "constants", tuple(self.constants))

    @property
    def coef_names(self) -> tuple:
        names = list(dict.fromkeys(t.coef for t in self.terms))
        return tuple(names + [f"ASC_{a}" for a in self.constants])

    @property
    def n_params(self) -> int:
        return len(self.coef_names)

    def coef_index(self, name: str) -> int:
        try:
            return self.coef_names.index(name)
        except ValueError:
            raise KeyError(f"unknown coefficient {name!r}") from None

    def constants_only(self) -> "UtilitySpec":
        return UtilitySpec((), self.constants, self.error_assumption)

    def design(self, X, feature_names, alt_names) -> np.ndarray:
        """N x K x n_params tensor D with V = D @ beta."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 2
        if single:
            X = X[None]
        n, k, _ = X.shape
        if len(self.constants) >= k:
            raise ValueError("at least one alternative must have no constant")
        fpos = {f: i for i, f in enumerate(feature_names)}
        apos = {a: i for i, a in enumerate(alt_names)}
        D = np.zeros((n, k, self.n_params))
        cpos = {c: i for i, c in enumerate(self.coef_names)}
        for t in self.terms:
            if t.feature not in fpos:
                raise DataError(f"utility term references missing feature {t.feature!r}")
            for a in t.alts:
                if a not in apos:
                    raise DataError(f"utility term references unknown alternative {a!r}")
                D[:, apos[a], cpos[t.coef]] += X[:, apos[a], fpos[t.feature]]
        for j, a in enumerate(self.constants):
            if a not in apos:
                raise DataError(f"constant for unknown alternative {a!r}")
            D[:, apos[a], len(self.coef_names) - len(self.constants) + j] = 1.0
        return D[0] if single else D


@dataclass(frozen=True)
class RandomCoefSpec:
    """Normally distributed coefficients: beta_c ~ Normal(mean_c, sd_c)."""

    random_terms: tuple
    n_draws: int = 1000
    draw_scheme: str = "halton"

    def __post_init__(self):
        object.__setattr__(self, "random_terms", tuple(self.random_terms))
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if len(self.random_terms) > len(PRIMES):
            raise ValueError(f"at most {len(PRIMES)} random coefficients")


@dataclass(frozen=True)
class FittedLogit:
    spec: UtilitySpec
    beta_hat: np.ndarray
    std_errors: np.ndarray
    ll_convergence: float
    ll_constants_only: float
    n_params: int
    n_obs: int
    n_obs_individuals: int
    param_names: tuple
    converged: bool
    message: str = ""
    rcs: Optional[RandomCoefSpec] = None
    beta_std_x: Optional[np.ndarray] = None
    n_iters: int = 0

    @property
    def kind(self) -> str:
        return "mnl" if self.rcs is None else "mixl"

    def coef(self, name: str) -> float:
        return float(self.beta_hat[self.param_names.index(name)])

    def means(self) -> np.ndarray:
        return self.beta_hat[: self.spec.n_params]

    def sds(self) -> np.ndarray:
        return np.abs(self.beta_hat[self.spec.n_params:])

    def predict_proba(self, ds: ChoiceDataset, n_draws: int | None = None) -> np.ndarray:
        D = self.spec.design(ds.X, ds.feature_names, ds.alt_names)
        return _predict(self, D, ds.availability, n_draws)


# ---------------------------------------------------------------------------
# MNL


def _log_softmax(V, avail):
    V = np.where(avail, V, -np.inf)
    m = np.max(V, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("no available alternative")
    Z = V - m
    return Z - np.log(np.sum(np.exp(Z), axis=-1, keepdims=True))


def _softmax(V, avail):
    return np.exp(_log_softmax(V, avail))


def mnl_probabilities(beta, obs, spec: UtilitySpec, feature_names, alt_names,
                      available=None) -> np.ndarray:
    """Choice probabilities for one observation's K x P attribute matrix."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.n_params,):
        raise ValueError(f"beta has length {beta.size}, spec has {spec.n_params} parameters")
    D = spec.design(obs, feature_names, alt_names)
    avail = np.ones(D.shape[0], dtype=bool) if available is None else np.asarray(available, bool)
    if not avail.any():
        raise ValueError("all alternatives unavailable")
    return _softmax(D @ beta, avail)


def _mnl_ll(beta, D, chosen, avail):
    V = D @ beta
    lp = _log_softmax(V, avail)
    n = len(chosen)
    ll = float(np.sum(lp[np.arange(n), chosen]))
    resid = -np.exp(lp)
    resid[np.arange(n), chosen] += 1.0
    grad = np.einsum("nk,nkq->q", resid, D)
    return ll, grad


def mnl_loglik(beta, ds: ChoiceDataset, spec: UtilitySpec):
    """Log-likelihood and analytic gradient sum_i sum_k (y_ik - p_ik) x_ik."""
    D = spec.design(ds.X, ds.feature_names, ds.alt_names)
    return _mnl_ll(np.asarray(beta, dtype=float), D, ds.chosen, ds.availability)


def _std_errors(vg, x):
    """Standard errors from the inverse finite-difference Hessian, and a
    regularity flag that is False when the maximum is not finite or isolated."""
    H = fd_hessian(lambda b: vg(b)[1], x)
    try:
        eig, vecs = np.linalg.eigh(-H)
    except np.linalg.LinAlgError:
        return np.full(x.size, np.nan), False
    if eig.size == 0:
        return np.zeros(0), True
    if eig[0] <= 1e-7 * max(eig[-1], 1e-300):
        return np.full(x.size, np.nan), False
    # a diverging parameter leaves a direction along which the objective
    # keeps rising or stays flat far beyond the reported optimum
    f0 = vg(x)[0]
    t = 10.0 * max(1.0, float(np.max(np.abs(x))))
    for sign in (1.0, -1.0):
        f_far = vg(x + sign * t * vecs[:, 0])[0]
        if np.isfinite(f_far) and f_far >= f0 - 1e-6 * (1.0 + abs(f0)):
            return np.full(x.size, np.nan), False
    cov = np.linalg.inv(-H)
    return np.sqrt(np.diag(cov)), True


def _constants_only_ll(ds: ChoiceDataset, spec: UtilitySpec) -> float:
    cspec = spec.constants_only()
    D = cspec.design(ds.X, ds.feature_names, ds.alt_names)
    if cspec.n_params == 0:
        return _mnl_ll(np.zeros(0), D, ds.chosen, ds.availability)[0]
    prob = OptProblem(cspec.n_params, None,
                      value_and_grad=lambda b: _mnl_ll(b, D, ds.chosen, ds.availability))
    return maximize(prob, np.zeros(cspec.n_params)).f_star


def fit_mnl(ds: ChoiceDataset, spec: UtilitySpec, max_iters: int = 1000,
            grad_tol: float = 1e-6) -> FittedLogit:
    D = spec.design(ds.X, ds.feature_names, ds.alt_names)

    def vg(b):
        return _mnl_ll(b, D, ds.chosen, ds.availability)

    res = maximize(OptProblem(spec.n_params, None, value_and_grad=vg),
                   np.zeros(spec.n_params), max_iters=max_iters, grad_tol=grad_tol)
    se, regular = _std_errors(vg, res.x_star)
    converged = res.converged and regular
    message = res.message if regular else "Hessian not negative definite: parameters diverge or are not identified"
    return FittedLogit(
        spec=spec, beta_hat=res.x_star, std_errors=se, ll_convergence=res.f_star,
        ll_constants_only=_constants_only_ll(ds, spec), n_params=spec.n_params,
        n_obs=ds.n_obs, n_obs_individuals=ds.n_individuals, param_names=spec.coef_names,
        converged=converged, message=message, n_iters=res.n_iters,
    )


# ---------------------------------------------------------------------------
# Halton draws


def halton(base: int, n: int, skip: int = 0) -> np.ndarray:
    """Radical-inverse sequence of ``base`` at indices skip+1 ... skip+n."""
    if base < 2 or any(base % d == 0 for d in range(2, int(base ** 0.5) + 1)):
        raise ValueError(f"base must be a prime >= 2, got {base}")
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.arange(skip + 1, skip + n + 1, dtype=np.int64)
    out = np.zeros(n)
    f = 1.0 / base
    while np.any(idx > 0):
        out += f * (idx % base)
        idx //= base
        f /= base
    return out


_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def norm_ppf(u) -> np.ndarray:
    """Inverse standard-normal CDF on (0, 1).

    Acklam's rational approximation followed by one Halley correction step.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("norm_ppf needs values strictly inside (0, 1)")
    x = np.empty_like(u)
    lo, hi = u < 0.02425, u > 1 - 0.02425
    mid = ~(lo | hi)
    q = u[mid] - 0.5
    r = q * q
    x[mid] = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
              / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))
    for sel, sign in ((lo, 1.0), (hi, -1.0)):
        tail = u[sel] if sign > 0 else 1 - u[sel]
        q = np.sqrt(-2 * np.log(tail))
        x[sel] = sign * ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                         / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    # residual taken from the nearer tail to avoid cancellation near u = 1
    e = np.where(x > 0, (1 - u) - 0.5 * erfc(x / math.sqrt(2)), 0.5 * erfc(-x / math.sqrt(2)) - u)
    step = e * math.sqrt(2 * math.pi) * np.exp(x * x / 2)
    return x - step / (1 + x * step / 2)


@dataclass(frozen=True)
class HaltonDraws:
    """Uniform Halton points, n_individuals x n_draws x dims; individual i
    takes the contiguous block i*n_draws ... (i+1)*n_draws - 1."""

    matrix: np.ndarray
    bases: tuple
    skip: int

    def normal(self) -> np.ndarray:
        return norm_ppf(self.matrix)


def halton_draws(n_individuals: int, n_draws: int, dims: int, skip: int = HALTON_SKIP) -> HaltonDraws:
    if dims > len(PRIMES):
        raise ValueError(f"at most {len(PRIMES)} dimensions")
    m = np.empty((n_individuals, n_draws, dims))
    for d in range(dims):
        m[:, :, d] = halton(PRIMES[d], n_individuals * n_draws, skip).reshape(n_individuals, n_draws)
    return HaltonDraws(m, PRIMES[:dims], skip)


def normal_draws(n_individuals: int, n_draws: int, dims: int, skip: int = HALTON_SKIP) -> np.ndarray:
    """Standard-normal transform of ``halton_draws``."""
    return halton_draws(n_individuals, n_draws, dims, skip).normal()


# ---------------------------------------------------------------------------
# mixed logit


@dataclass
class _Panel:
    D: np.ndarray        # N x K x Q, person-contiguous order
    chosen: np.ndarray
    avail: np.ndarray
    starts: np.ndarray   # block offsets per person
    person_of_obs: np.ndarray
    random_idx: np.ndarray


def _panel(ds: ChoiceDataset, spec: UtilitySpec, rcs: RandomCoefSpec) -> _Panel:
    order, starts = ds.person_groups()
    D = spec.design(ds.X[order], ds.feature_names, ds.alt_names)
    counts = np.diff(np.append(starts, len(order)))
    person_of_obs = np.repeat(np.arange(len(starts)), counts)
    ridx = np.array([spec.coef_index(c) for c in rcs.random_terms], dtype=np.int64)
    return _Panel(D, ds.chosen[order], ds.availability[order], starts, person_of_obs, ridx)


def _person_chunks(starts, n_obs, n_draws, budget=4_000_000):
    """Split persons into contiguous chunks with about ``budget`` obs*draws cells."""
    bounds = np.append(starts, n_obs)
    per = max(1, budget // max(n_draws, 1))
    chunks, p0 = [], 0
    n_persons = len(starts)
    while p0 < n_persons:
        p1 = p0 + 1
        while p1 < n_persons and bounds[p1 + 1] - bounds[p0] <= per:
            p1 += 1
        chunks.append((p0, p1))
        p0 = p1
    return chunks


def _mixl_ll(theta, panel: _Panel, draws: np.ndarray, fixed_sd=None):
    """Simulated panel log-likelihood and gradient (draws fixed)."""
    Q = panel.D.shape[2]
    beta = theta[:Q]
    sd = theta[Q:] if fixed_sd is None else np.asarray(fixed_sd, dtype=float)
    n_draws = draws.shape[1]
    ridx = panel.random_idx
    ll = 0.0
    g_beta = np.zeros(Q)
    g_sd = np.zeros(len(ridx))
    n_obs = panel.D.shape[0]
    for p0, p1 in _person_chunks(panel.starts, n_obs, n_draws):
        o0 = panel.starts[p0]
        o1 = panel.starts[p1] if p1 < len(panel.starts) else n_obs
        D = panel.D[o0:o1]
        Dr = D[:, :, ridx]                                   # n x K x S
        z = draws[panel.person_of_obs[o0:o1]]                # n x R x S
        V = (D @ beta)[:, None, :] + np.einsum("nrs,nks->nrk", z * sd, Dr)
        avail = panel.avail[o0:o1][:, None, :]
        lp = _log_softmax(V, avail)
        rows = np.arange(o1 - o0)
        lp_ch = lp[rows, :, panel.chosen[o0:o1]]             # n x R
        local = panel.starts[p0:p1] - o0
        S = np.add.reduceat(lp_ch, local, axis=0)            # persons x R
        lse = logsumexp(S, axis=1)
        ll += float(np.sum(lse)) - (p1 - p0) * math.log(n_draws)
        w = np.exp(S - lse[:, None])                         # persons x R
        wn = w[panel.person_of_obs[o0:o1] - p0]              # n x R
        resid = -np.exp(lp)
        resid[rows, :, panel.chosen[o0:o1]] += 1.0           # n x R x K
        A = np.einsum("nr,nrk->nk", wn, resid)
        g_beta += np.einsum("nk,nkq->q", A, D)
        if len(ridx):
            B = np.einsum("nr,nrs,nrk->nks", wn, z, resid)
            g_sd += np.einsum("nks,nks->s", B, Dr)
    if fixed_sd is None:
        return ll, np.concatenate([g_beta, g_sd])
    return ll, g_beta


def mixl_sim_loglik(params, ds: ChoiceDataset, spec: UtilitySpec, rcs: RandomCoefSpec,
                    draws: np.ndarray | HaltonDraws | None = None):
    """Simulated log-likelihood of the panel mixed logit and its gradient.

    ``params`` is [means (spec.n_params), sds (len(rcs.random_terms))].
    ``draws`` are standard-normal, n_individuals x n_draws x n_random, with
    individuals ordered by first appearance in ``ds``.
    """
    if draws is None:
        draws = normal_draws(ds.n_individuals, rcs.n_draws, len(rcs.random_terms))
    elif isinstance(draws, HaltonDraws):
        draws = draws.normal()
    panel = _panel(ds, spec, rcs)
    return _mixl_ll(np.asarray(params, dtype=float), panel, draws)


def fit_mixl(ds: ChoiceDataset, spec: UtilitySpec, rcs: RandomCoefSpec,
             fix_sd_zero: bool = False, start: FittedLogit | None = None,
             max_iters: int = 1000, grad_tol: float = 1e-6) -> FittedLogit:
    """Simulated maximum likelihood with draws fixed across iterations,
    warm-started from the MNL solution with sds of 0.1."""
    S = len(rcs.random_terms)
    draws = normal_draws(ds.n_individuals, rcs.n_draws, S)
    panel = _panel(ds, spec, rcs)
    mnl = start if start is not None else fit_mnl(ds, spec)
    names = spec.coef_names + tuple(f"sd.{c}" for c in rcs.random_terms)
    if fix_sd_zero:
        zeros = np.zeros(S)

        def vg(b):
            return _mixl_ll(b, panel, draws, fixed_sd=zeros)
        x0 = mnl.means().copy()
    else:
        def vg(t):
            return _mixl_ll(t, panel, draws)
        x0 = np.concatenate([mnl.means(), np.full(S, 0.1)])
    res = maximize(OptProblem(x0.size, None, value_and_grad=vg), x0,
                   max_iters=max_iters, grad_tol=grad_tol)
    se, regular = _std_errors(vg, res.x_star)
    x = res.x_star
    if fix_sd_zero:
        x = np.concatenate([x, np.zeros(S)])
        se = np.concatenate([se, np.full(S, np.nan)])
    else:
        x = np.concatenate([x[: spec.n_params], np.abs(x[spec.n_params:])])
    converged = res.converged and regular
    message = res.message if regular else "Hessian not negative definite: parameters diverge or are not identified"
    return FittedLogit(
        spec=spec, beta_hat=x, std_errors=se, ll_convergence=res.f_star,
        ll_constants_only=mnl.ll_constants_only,
        n_params=res.x_star.size, n_obs=ds.n_obs, n_obs_individuals=ds.n_individuals,
        param_names=names, converged=converged, message=message, rcs=rcs, n_iters=res.n_iters,
    )


def _predict(fit: FittedLogit, D, avail, n_draws=None):
    beta = fit.means()
    if fit.rcs is None or not np.any(fit.sds() > 0):
        return _softmax(D @ beta, avail)
    ridx = np.array([fit.spec.coef_index(c) for c in fit.rcs.random_terms])
    R = n_draws or fit.rcs.n_draws
    z = normal_draws(1, R, len(ridx))[0]                     # R x S
    V0 = D @ beta
    out = np.zeros_like(V0)
    for r in range(R):
        V = V0 + D[:, :, ridx] @ (fit.sds() * z[r])
        out += _softmax(V, avail)
    return out / R


# ---------------------------------------------------------------------------
# fit statistics and reporting


def fit_stats(f: FittedLogit) -> dict:
    """McFadden pseudo R^2 (plain and adjusted), AIC and BIC.

    BIC uses the number of choice observations.
    """
    ll0, llc, k = f.ll_constants_only, f.ll_convergence, f.n_params
    if ll0 == 0:
        raise ValueError("constants-only log-likelihood is zero")
    return {
        "pseudo_r2": 1 - llc / ll0,
        "adj_pseudo_r2": 1 - (llc - k) / ll0,
        "aic": -2 * llc + 2 * k,
        "bic": -2 * llc + k * math.log(f.n_obs),
        "bic_n": f.n_obs,
    }


def feature_scale(ds: ChoiceDataset) -> tuple:
    """Per-feature mean and sd over the applicable, available cells."""
    cells = ds.mask & ds.availability[:, :, None]
    means = np.empty(ds.n_features)
    sds = np.empty(ds.n_features)
    for p in range(ds.n_features):
        v = ds.X[:, :, p][cells[:, :, p]]
        means[p] = v.mean() if v.size else 0.0
        sds[p] = v.std() if v.size else 0.0
    return means, sds


def x_standardized(f: FittedLogit, ds: ChoiceDataset) -> FittedLogit:
    """Refit with every feature standardized; returns ``f`` with
    ``beta_std_x`` filled (NaN for constants and zero-variance features)."""
    means, sds = feature_scale(ds)
    ok = sds > 0
    scale = np.where(ok, sds, 1.0)
    shift = np.where(ok, means, 0.0)
    X = np.where(ds.mask, (ds.X - shift) / scale, 0.0)
    std_ds = ds.with_X(X)
    if f.rcs is None:
        refit = fit_mnl(std_ds, f.spec)
    else:
        refit = fit_mixl(std_ds, f.spec, f.rcs)
    bad_features = {ds.feature_names[p] for p in np.flatnonzero(~ok)}
    std = refit.beta_hat.copy()
    coef_features: dict = {}
    for t in f.spec.terms:
        coef_features.setdefault(t.coef, set()).add(t.feature)
    for i, name in enumerate(f.param_names):
        base = name[3:] if name.startswith("sd.") else name
        if base.startswith("ASC_") and base not in coef_features:
            std[i] = np.nan
        elif coef_features.get(base, set()) & bad_features:
            std[i] = np.nan
    return replace(f, beta_std_x=std)


def significance(estimate, se) -> str:
    if not np.isfinite(se) or se <= 0:
        return ""
    z = abs(estimate / se)
    return "**" if z > 2.576 else "*" if z > 1.96 else ""


def coefficient_rows(f: FittedLogit) -> list:
    rows = []
    for i, name in enumerate(f.param_names):
        est, se = float(f.beta_hat[i]), float(f.std_errors[i])
        bsx = np.nan if f.beta_std_x is None else float(f.beta_std_x[i])
        rows.append({"coef": name, "estimate": est, "std_error": se,
                     "beta_std_x": bsx, "significance": significance(est, se)})
    return rows


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return "/" if not np.isfinite(v) else f"{v:.6g}"


def write_coefficient_report(f: FittedLogit, path, header_lines: Sequence[str] = ()):
    stats = fit_stats(f)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coef", "estimate", "std_error", "beta_std_x", "significance"])
        for r in coefficient_rows(f):
            w.writerow([r["coef"], _fmt(r["estimate"]), _fmt(r["std_error"]),
                        _fmt(r["beta_std_x"]), r["significance"]])
        w.writerow([])
        w.writerow(["n_obs", f.n_obs])
        w.writerow(["n_individuals", f.n_obs_individuals])
        w.writerow(["ll_constants_only", _fmt(f.ll_constants_only)])
        w.writerow(["ll_convergence", _fmt(f.ll_convergence)])
        w.writerow(["pseudo_r2", _fmt(stats["pseudo_r2"])])
        w.writerow(["adj_pseudo_r2", _fmt(stats["adj_pseudo_r2"])])
        w.writerow(["aic", _fmt(stats["aic"])])
        w.writerow([f"bic (N = {stats['bic_n']} choice observations)", _fmt(stats["bic"])])
        w.writerow(["converged", f.converged])


class LogitPredictor:
    """Wide-row prediction contract for a fitted logit model."""

    def __init__(self, fit: FittedLogit, layout, col_min=None, col_max=None, n_draws=None):
        self.fit = fit
        self.layout = layout
        self.col_names = layout.col_names
        self.col_min = col_min
        self.col_max = col_max
        self.n_draws = n_draws

    def predict_proba(self, rows) -> np.ndarray:
        if isinstance(rows, WideMatrix):
            rows = rows.select(self.col_names).Z
        X = self.layout.to_X(rows)
        D = self.fit.spec.design(X, self.layout.feature_names, self.layout.alt_names)
        return _predict(self.fit, D, np.ones(D.shape[:2], dtype=bool), self.n_draws)
