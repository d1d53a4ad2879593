"""Stacked stratified-Lasso baseline solved by FISTA, plus weighted-median identification.

The stacked design (first block-column repeats each subject's design, then a
block diagonal) is never materialised; products are formed per subject.
Coefficient blocks are arrays of shape ``(K + 1, d, dp)``: block 0 is the
common path, block ``k`` the unique path of subject ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .debias import fit_equations
from .fuse import _split_rows
from .panel import PathDecomposition, SubjectPanel, lagged_design


@dataclass(frozen=True)
class StackedProblem:
    Xs: list  # per-subject designs (N_k, dp)
    Ys: list  # per-subject responses (N_k, d)
    lam: float
    ratios: np.ndarray | None = None  # lambda_k / lambda_0, default ones
    weights: np.ndarray | None = None  # (K+1, d, dp), inf forces zero

    @property
    def K(self) -> int:
        return len(self.Xs)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.K + 1, self.Ys[0].shape[1], self.Xs[0].shape[1]

    def thresholds(self) -> np.ndarray:
        """Per-coefficient penalty levels (before multiplying by the step size)."""
        ratios = np.ones(self.K) if self.ratios is None else np.asarray(self.ratios, dtype=float)
        block = np.concatenate([[1.0], ratios])[:, None, None]
        w = np.ones(self.shape) if self.weights is None else np.asarray(self.weights, dtype=float)
        return self.lam * block * w

    def predict(self, theta: np.ndarray) -> list:
        return [X @ (theta[0] + theta[k + 1]).T for k, X in enumerate(self.Xs)]

    def apply(self, theta: np.ndarray) -> np.ndarray:
        """Stacked ``Z theta`` as one vector (subject-major, then equation, then time)."""
        return np.concatenate([pred.T.ravel() for pred in self.predict(theta)])

    def apply_adjoint(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        start = 0
        for k, X in enumerate(self.Xs):
            N, d = X.shape[0], self.Ys[k].shape[1]
            R = r[start: start + N * d].reshape(d, N)
            g = R @ X
            out[0] += g
            out[k + 1] = g
            start += N * d
        return out

    def response(self) -> np.ndarray:
        return np.concatenate([Y.T.ravel() for Y in self.Ys])

    def dense(self) -> np.ndarray:
        """Materialised stacked design; for checking on tiny problems only."""
        K1, d, dp = self.shape
        rows = []
        for k, X in enumerate(self.Xs):
            Zk = np.kron(np.eye(d), X)
            blocks = [Zk if b in (0, k + 1) else np.zeros_like(Zk) for b in range(K1)]
            rows.append(np.hstack(blocks))
        return np.vstack(rows)

    def loss_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        loss = 0.0
        grad = np.zeros(self.shape)
        for k, (X, Y) in enumerate(zip(self.Xs, self.Ys)):
            N = X.shape[0]
            R = Y - X @ (theta[0] + theta[k + 1]).T
            loss += float(np.sum(R * R)) / N
            g = -2.0 / N * (R.T @ X)
            grad[0] += g
            grad[k + 1] = g
        return loss, grad

    def loss(self, theta: np.ndarray) -> float:
        total = 0.0
        for k, (X, Y) in enumerate(zip(self.Xs, self.Ys)):
            R = Y - X @ (theta[0] + theta[k + 1]).T
            total += float(np.sum(R * R)) / X.shape[0]
        return total

    def penalty(self, theta: np.ndarray) -> float:
        thr = self.thresholds()
        nz = theta != 0
        return float(np.sum(thr[nz] * np.abs(theta[nz])))

    def objective(self, theta: np.ndarray) -> float:
        return self.loss(theta) + self.penalty(theta)

    def lambda_max(self) -> float:
        """Smallest ``lam`` at which ``theta = 0`` is optimal."""
        _, grad = self.loss_grad(np.zeros(self.shape))
        unit = StackedProblem(self.Xs, self.Ys, 1.0, self.ratios, self.weights).thresholds()
        free = np.isfinite(unit) & (unit > 0)
        if not free.any():
            return 0.0
        return float(np.max(np.abs(grad[free]) / unit[free]))


@dataclass(frozen=True)
class FistaResult:
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    trace: np.ndarray
    restarts: int


def _prox(v: np.ndarray, thr: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        out = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
    out[~np.isfinite(thr)] = 0.0
    return out


def fista_solve(problem: StackedProblem, theta0: np.ndarray | None = None, tol: float = 1e-8,
                max_iter: int = 5000, L0: float = 1.0) -> FistaResult:
    """FISTA with backtracking and function-value restart.

    Stops when the relative objective change drops below ``tol``.
    """
    thr = problem.thresholds()
    x = np.zeros(problem.shape) if theta0 is None else np.array(theta0, dtype=float)
    x[~np.isfinite(thr)] = 0.0
    F_x = problem.objective(x)
    y, t, L = x.copy(), 1.0, L0
    trace = [F_x]
    restarts = 0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        f_y, g_y = problem.loss_grad(y)
        while True:
            z = _prox(y - g_y / L, thr / L)
            diff = z - y
            f_z = problem.loss(z)
            if f_z <= f_y + float(np.sum(g_y * diff)) + 0.5 * L * float(np.sum(diff * diff)) + 1e-12 * abs(f_y):
                break
            L *= 2.0
        F_z = f_z + problem.penalty(z)
        if F_z > F_x and t > 1.0:
            # momentum overshoot: restart from the last accepted iterate
            y, t = x.copy(), 1.0
            restarts += 1
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        change = abs(F_x - F_z) / max(abs(F_x), 1e-300)
        x, F_x, t = z, F_z, t_next
        trace.append(F_x)
        if change < tol:
            converged = True
            break
    return FistaResult(x, F_x, it, converged, np.array(trace), restarts)


def weighted_median_interval(values, weights) -> tuple[float, float]:
    """Minimiser set ``[lo, hi]`` of ``|x| + sum_k w_k |v_k - x|``."""
    pts = np.concatenate([[0.0], np.asarray(values, dtype=float)])
    w = np.concatenate([[1.0], np.asarray(weights, dtype=float)])
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative and not all zero")
    order = np.argsort(pts, kind="stable")
    pts, w = pts[order], w[order]
    # merge duplicates so the cumulative weight is well defined
    uniq, inv = np.unique(pts, return_inverse=True)
    wu = np.bincount(inv, weights=w)
    cum = np.cumsum(wu)
    half = 0.5 * cum[-1]
    eps = 1e-12 * cum[-1]
    lo_i = int(np.searchsorted(cum, half - eps))
    if abs(cum[lo_i] - half) <= eps and lo_i + 1 < len(uniq):
        return float(uniq[lo_i]), float(uniq[lo_i + 1])
    return float(uniq[lo_i]), float(uniq[lo_i])


def weighted_median_identify(values, weights) -> float:
    """Weighted median of ``{0, v_1..v_K}`` with weights ``{1, w_1..w_K}``; ties go toward zero."""
    lo, hi = weighted_median_interval(values, weights)
    if lo <= 0.0 <= hi:
        return 0.0
    return lo if abs(lo) < abs(hi) else hi


def adaptive_weights(beta_hat: np.ndarray) -> np.ndarray:
    """Adaptive-Lasso weights from initial subject fits ``(K, d, dp)``; zero denominators give inf."""
    med = np.median(beta_hat, axis=0)
    denom = np.concatenate([np.abs(med)[None], np.abs(med[None] - beta_hat)])
    with np.errstate(divide="ignore"):
        return np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), np.inf)


@dataclass
class LegacyResult:
    decomposition: PathDecomposition
    lam: float
    fista: FistaResult
    weights: np.ndarray | None


def select_lambda_stacked(Xs, Ys, ratios=None, weights=None, n_lambda: int = 10, ratio: float = 0.01,
                          holdout: float = 0.2, tol: float = 1e-8, max_iter: int = 5000) -> float:
    """Last-block holdout choice of the stacked penalty; ties go to the larger penalty."""
    fit_X, fit_Y, tests = [], [], []
    for X, Y in zip(Xs, Ys):
        n_test = _split_rows(X.shape[0], holdout)
        n_fit = X.shape[0] - n_test
        fit_X.append(X[:n_fit])
        fit_Y.append(Y[:n_fit])
        tests.append((X[n_fit:], Y[n_fit:]))
    base = StackedProblem(fit_X, fit_Y, 1.0, ratios, weights)
    top = base.lambda_max()
    if top <= 0:
        return 0.0
    grid = top * ratio ** (np.arange(n_lambda) / (n_lambda - 1))
    theta = None
    errs = []
    for lam in grid:
        prob = StackedProblem(fit_X, fit_Y, float(lam), ratios, weights)
        theta = fista_solve(prob, theta, tol, max_iter).theta
        err = 0.0
        for k, (Xt, Yt) in enumerate(tests):
            R = Yt - Xt @ (theta[0] + theta[k + 1]).T
            err += float(np.mean(R * R))
        errs.append(err / len(tests))
    errs = np.array(errs)
    tied = grid[errs <= errs.min() * (1 + 1e-12)]
    return float(tied.max())


def legacy_fit(panels: list[SubjectPanel], p: int, center: bool = True, lam: float | None = None,
               ratios=None, adaptive: bool = False, n_lambda: int = 10, tol: float = 1e-8,
               max_iter: int = 5000) -> LegacyResult:
    """Fit the stacked stratified Lasso (plain or adaptive) and report it as a decomposition."""
    views = [lagged_design(panel.data, p, center) for panel in panels]
    Ys = [v[0] for v in views]
    Xs = [v[1] for v in views]
    weights = None
    if adaptive:
        beta_hat = np.stack([fit_equations(X, Y)[0] for X, Y in zip(Xs, Ys)])
        weights = adaptive_weights(beta_hat)
    if lam is None:
        lam = select_lambda_stacked(Xs, Ys, ratios, weights, n_lambda, tol=tol, max_iter=max_iter)
    res = fista_solve(StackedProblem(Xs, Ys, lam, ratios, weights), tol=tol, max_iter=max_iter)
    K = len(panels)
    d, dp = Ys[0].shape[1], Xs[0].shape[1]
    common = res.theta[0].ravel()
    unique = res.theta[1:].reshape(K, -1)
    decomp = PathDecomposition(
        d=d, p=p, common_raw=common.copy(), unique_raw=unique.copy(),
        inlier_mask=(res.theta[1:] == 0).transpose(1, 2, 0), eta=np.full((d, dp), np.nan),
        common_sparse=common.copy(), unique_sparse=unique.copy(),
        meta={"method": "legacy-adaptive" if adaptive else "legacy", "lam": lam,
              "converged": res.converged, "iterations": res.iterations},
    )
    return LegacyResult(decomp, lam, res, weights)


def adaptive_fit(panels: list[SubjectPanel], p: int, **kw) -> LegacyResult:
    return legacy_fit(panels, p, adaptive=True, **kw)
