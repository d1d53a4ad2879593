"""Single-equation Lasso by cyclic coordinate descent (covariance updates).

Solves ``(1/2N) ||y - X b||^2 + lam * sum_j w_j |b_j|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

STEP_TOL = 1e-7
KKT_TOL = 1e-6
MAX_ITER = 10000


@dataclass(frozen=True)
class LassoProblem:
    response: np.ndarray
    design: np.ndarray
    lam: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"penalty must be nonnegative, got {self.lam}")
        if self.weights is not None and np.any(np.asarray(self.weights) < 0):
            raise ValueError("penalty weights must be nonnegative")

    @property
    def N(self) -> int:
        return self.design.shape[0]

    @property
    def m(self) -> int:
        return self.design.shape[1]

    def penalty_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.m)
        return np.asarray(self.weights, dtype=float)

    def gram(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        return X.T @ X / self.N, X.T @ y / self.N


@dataclass(frozen=True)
class LassoSolution:
    coefficients: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    dual_gap_proxy: float
    objective_trace: np.ndarray


@njit(cache=True)
def _kkt_violation(G, c, beta, lam, w):
    m = beta.shape[0]
    worst = 0.0
    for j in range(m):
        if not np.isfinite(w[j]):
            continue
        r = c[j]
        for l in range(m):
            r -= G[j, l] * beta[l]
        pen = lam * w[j]
        if beta[j] == 0.0:
            v = abs(r) - pen
        elif beta[j] > 0.0:
            v = abs(r - pen)
        else:
            v = abs(r + pen)
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _smooth_part(G, c, beta):
    # objective minus the constant ||y||^2 / 2N
    m = beta.shape[0]
    val = 0.0
    for j in range(m):
        gb = 0.0
        for l in range(m):
            gb += G[j, l] * beta[l]
        val += beta[j] * (0.5 * gb - c[j])
    return val


@njit(cache=True)
def _cd_gram(G, c, lam, w, beta, step_tol, kkt_tol, max_iter):
    m = beta.shape[0]
    gb = G @ beta
    trace = np.empty(max_iter + 1)
    pen = 0.0
    for j in range(m):
        if beta[j] != 0.0:
            pen += lam * w[j] * abs(beta[j])
    trace[0] = _smooth_part(G, c, beta) + pen
    kkt = np.inf
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        max_step = 0.0
        for j in range(m):
            gjj = G[j, j]
            old = beta[j]
            if not np.isfinite(w[j]) or gjj <= 0.0:
                new = 0.0
            else:
                z = c[j] - gb[j] + gjj * old
                t = lam * w[j]
                if z > t:
                    new = (z - t) / gjj
                elif z < -t:
                    new = (z + t) / gjj
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for l in range(m):
                    gb[l] += G[l, j] * delta
                if abs(delta) > max_step:
                    max_step = abs(delta)
        pen = 0.0
        for j in range(m):
            if beta[j] != 0.0:
                pen += lam * w[j] * abs(beta[j])
        trace[it] = _smooth_part(G, c, beta) + pen
        if max_step < step_tol:
            kkt = _kkt_violation(G, c, beta, lam, w)
            if kkt < kkt_tol:
                converged = True
                break
            gb = G @ beta  # refresh accumulated drift before continuing
    if not converged:
        kkt = _kkt_violation(G, c, beta, lam, w)
    return beta, it, converged, kkt, trace[: it + 1]


@njit(cache=True)
def _cd_path(G, c, lams, w, step_tol, kkt_tol, max_iter):
    # warm-started sweep down a penalty path; rows of the result follow ``lams``
    m = c.shape[0]
    out = np.zeros((lams.shape[0], m))
    beta = np.zeros(m)
    for j in range(m):
        if not np.isfinite(w[j]):
            beta[j] = 0.0
    for a in range(lams.shape[0]):
        beta, _, _, _, _ = _cd_gram(G, c, lams[a], w, beta.copy(), step_tol, kkt_tol, max_iter)
        out[a] = beta
    return out


def solve_path(G: np.ndarray, c: np.ndarray, lams, weights: np.ndarray | None = None,
               step_tol: float = STEP_TOL, kkt_tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> np.ndarray:
    """Coefficients ``(len(lams), m)`` for each penalty, warm-starting in the given order."""
    m = G.shape[0]
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    return _cd_path(np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(c, dtype=float),
                    np.asarray(lams, dtype=float), w, step_tol, kkt_tol, max_iter)


def solve_gram(G: np.ndarray, c: np.ndarray, lam: float, weights: np.ndarray | None = None,
               warm_start: np.ndarray | None = None, yy: float = 0.0,
               step_tol: float = STEP_TOL, kkt_tol: float = KKT_TOL,
               max_iter: int = MAX_ITER) -> LassoSolution:
    """Coordinate descent from precomputed ``G = X'X/N`` and ``c = X'y/N``.

    ``yy`` is ``||y||^2 / N``; it only shifts the reported objective.
    """
    m = G.shape[0]
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    beta = np.zeros(m) if warm_start is None else np.array(warm_start, dtype=float)
    beta[~np.isfinite(w)] = 0.0
    beta, it, converged, kkt, trace = _cd_gram(
        np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(c, dtype=float), float(lam),
        w, beta, step_tol, kkt_tol, max_iter)
    trace = trace + 0.5 * yy
    return LassoSolution(beta, float(trace[-1]), int(it), bool(converged), float(kkt), trace)


def solve_lasso(problem: LassoProblem, warm_start: np.ndarray | None = None, **kw) -> LassoSolution:
    """Solve one Lasso problem; never raises on non-convergence (check ``converged``)."""
    G, c = problem.gram()
    y = np.asarray(problem.response, dtype=float)
    return solve_gram(G, c, problem.lam, problem.weights, warm_start, yy=float(y @ y) / problem.N, **kw)


def lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float,
                    weights: np.ndarray | None = None) -> float:
    N = X.shape[0]
    r = y - X @ beta
    w = np.ones(len(beta)) if weights is None else np.asarray(weights, dtype=float)
    nz = beta != 0
    return float(r @ r / (2 * N) + lam * np.sum(w[nz] * np.abs(beta[nz])))


def lambda_max(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> float:
    score = np.abs(X.T @ y) / X.shape[0]
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        free = (w > 0) & np.isfinite(w)
        score = np.where(free, score / np.where(free, w, 1.0), 0.0)
    return float(score.max()) if score.size else 0.0


def lambda_path(X: np.ndarray, y: np.ndarray, n_lambda: int = 20, ratio: float = 0.01,
                weights: np.ndarray | None = None) -> np.ndarray:
    """Geometric grid from ``lambda_max`` down to ``ratio * lambda_max`` (descending)."""
    if n_lambda < 2 or not 0 < ratio < 1:
        raise ValueError("need n_lambda >= 2 and 0 < ratio < 1")
    top = lambda_max(X, y, weights)
    return geometric_grid(top, n_lambda, ratio)


def geometric_grid(top: float, n_lambda: int, ratio: float) -> np.ndarray:
    if top <= 0:
        return np.array([0.0])
    return top * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def fallback_lambda(n_features: int, N: int) -> float:
    return math.sqrt(math.log(max(n_features, 2)) / N)


def holdout_errors(X: np.ndarray, y: np.ndarray, grid, holdout: float = 0.2,
                   weights: np.ndarray | None = None) -> np.ndarray:
    """One-step-ahead squared error on the final block for each grid value."""
    N = X.shape[0]
    n_test = int(math.floor(holdout * N))
    n_fit = N - n_test
    Xf, yf = X[:n_fit], y[:n_fit]
    Xt, yt = X[n_fit:], y[n_fit:]
    G, c = Xf.T @ Xf / n_fit, Xf.T @ yf / n_fit
    grid = np.asarray(grid, dtype=float)
    order = np.argsort(-grid, kind="stable")
    betas = solve_path(G, c, grid[order], weights)
    resid = yt[:, None] - Xt @ betas.T
    errs = np.empty(grid.size)
    errs[order] = np.einsum("ta,ta->a", resid, resid) / n_test
    return errs


def select_lambda_timeseries(X: np.ndarray, y: np.ndarray, grid, holdout: float = 0.2,
                             weights: np.ndarray | None = None, min_test: int = 5) -> float:
    """Pick the penalty minimising last-block holdout error; ties go to the larger penalty."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        return float(grid[0])
    N = X.shape[0]
    if int(math.floor(holdout * N)) < min_test:
        return fallback_lambda(X.shape[1], N)
    errs = holdout_errors(X, y, grid, holdout, weights)
    best = errs.min()
    # relative slack absorbs solver-level noise in exact ties
    tied = grid[errs <= best + 1e-12 * max(1.0, abs(best))]
    return float(tied.max())
