"""BFGS maximization with backtracking line search, plus finite-difference tools."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class OptProblem:
    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # objective_and_gradient, when given, avoids evaluating shared work twice
    value_and_grad: Optional[Callable[[np.ndarray], tuple]] = None

    def evaluate(self, x):
        if self.value_and_grad is not None:
            f, g = self.value_and_grad(x)
            return float(f), np.asarray(g, dtype=float)
        f = float(self.objective(x))
        if self.gradient is not None:
            g = np.asarray(self.gradient(x), dtype=float)
        else:
            g = finite_diff_grad(self.objective, x, 1e-6)
        return f, g

    @property
    def has_gradient(self):
        return self.gradient is not None or self.value_and_grad is not None

    def grad(self, x):
        return self.evaluate(x)[1]


@dataclass
class OptResult:
    x_star: np.ndarray
    f_star: float
    n_iters: int
    converged: bool
    grad_norm: float
    message: str = ""
    trace: list = field(default_factory=list, repr=False)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "f", "grad_norm"])
            for row in self.trace:
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def maximize(p: OptProblem, x0, max_iters: int = 1000, grad_tol: float = 1e-6,
             step_tol: float = 1e-12, c1: float = 1e-4, contraction: float = 0.5,
             max_backtracks: int = 60) -> OptResult:
    """Quasi-Newton (BFGS) ascent.

    Converged when ``max|g| <= grad_tol * (1 + |f|)``. A failed line search
    or a vanishing step ends the run with ``converged=False`` and the best
    iterate found so far.
    """
    x = np.array(x0, dtype=float)
    f, g = p.evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective or gradient is not finite at the start point")
    n = x.size
    # inverse Hessian of -f
    H = np.eye(n) / max(1.0, np.max(np.abs(g)))
    trace = [(0, f, float(np.max(np.abs(g))) if n else 0.0)]
    message = "max_iters reached"
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        if gnorm <= grad_tol * (1.0 + abs(f)):
            converged = True
            message = "gradient tolerance met"
            it -= 1
            break
        d = H @ g
        slope = float(g @ d)
        if slope <= 0:
            H = np.eye(n) / max(1.0, gnorm)
            d = H @ g
            slope = float(g @ d)
        alpha = 1.0
        for _ in range(max_backtracks):
            x_new = x + alpha * d
            if np.array_equal(x_new, x):
                break
            f_new, g_new = p.evaluate(x_new)
            if np.isfinite(f_new) and f_new >= f + c1 * alpha * slope and np.all(np.isfinite(g_new)):
                break
            alpha *= contraction
        else:
            x_new = x
        if x_new is x or np.array_equal(x_new, x):
            message = "line search failed"
            break
        s = x_new - x
        y = g - g_new  # gradient change of -f
        x, f, g = x_new, f_new, g_new
        trace.append((it, f, float(np.max(np.abs(g)))))
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if it == 1:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s) \
                - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        if float(np.max(np.abs(s))) <= step_tol * (1.0 + float(np.max(np.abs(x)))):
            gnorm = float(np.max(np.abs(g)))
            converged = gnorm <= grad_tol * (1.0 + abs(f))
            message = "gradient tolerance met" if converged else "step tolerance reached"
            break
    gnorm = float(np.max(np.abs(g))) if n else 0.0
    return OptResult(x, f, it, converged, gnorm, message, trace)


def finite_diff_grad(objective, x, h: float = 1e-6) -> np.ndarray:
    """Central differences (f(x + h e_j) - f(x - h e_j)) / 2h."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (objective(x + e) - objective(x - e)) / (2 * h)
    return g


def check_gradient(p: OptProblem, x) -> float:
    """Max over components of |analytic - numeric| / max(1, |numeric|)."""
    if not p.has_gradient:
        raise ValueError("problem has no analytic gradient")
    x = np.asarray(x, dtype=float)
    analytic = p.grad(x)
    worst = 0.0
    for j in range(x.size):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        numeric = (p.evaluate(x + e)[0] - p.evaluate(x - e)[0]) / (2 * h)
        worst = max(worst, abs(analytic[j] - numeric) / max(1.0, abs(numeric)))
    return worst


def fd_hessian(grad, x, rel_step: float = 1e-5) -> np.ndarray:
    """Symmetrized central-difference Hessian from an analytic gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        H[:, j] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)
