"""Robust aggregation of debiased subject fits into common and unique paths."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .debias import DebiasedFit, fit_subject, residual_condition_number
from .panel import PathDecomposition, StudyConfig, SubjectPanel, ValidationError, lagged_design

MIN_HOLDOUT_ROWS = 10


@dataclass(frozen=True)
class FuseConfig:
    eta_grid: tuple[float, ...] | None = None  # None: equal steps over the spread of debiased values
    n_eta: int = 10
    c0_grid: tuple[float, ...] = tuple(np.round(np.linspace(0.1, 1.0, 10), 10))
    cK_grid: tuple[float, ...] = tuple(np.round(np.linspace(0.5, 1.0, 6), 10))
    threshold_kind: str = "hard"
    holdout: float = 0.2
    center: bool = True

    def __post_init__(self):
        if not self.c0_grid or not self.cK_grid or (self.eta_grid is not None and not len(self.eta_grid)):
            raise ValidationError("cross-validation grids must be non-empty")
        if self.eta_grid is None and self.n_eta < 1:
            raise ValidationError("n_eta must be positive")

    @classmethod
    def from_study(cls, config: StudyConfig, **overrides) -> "FuseConfig":
        kw = dict(n_eta=config.n_eta, c0_grid=config.c0_grid, cK_grid=config.cK_grid,
                  threshold_kind=config.threshold_kind, holdout=config.holdout, center=config.center)
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class ThresholdScales:
    delta0: float
    delta_k: np.ndarray
    q: int
    N_min: int


@dataclass
class CVResult:
    eta: float
    c0: float
    cK: float
    decomposition: PathDecomposition
    table: list = field(default_factory=list)  # (eta, c0, cK, error, nnz)


@njit(cache=True)
def _redescend_rows(values, eta):
    n, K = values.shape
    out = np.empty(n)
    W = K * (K + 1) // 2
    loss = np.empty(W)
    count = np.empty(W, dtype=np.int64)
    means = np.empty(W)
    for r in range(n):
        v = np.sort(values[r])
        e = eta[r]
        e2 = e * e
        w = 0
        best = np.inf
        for a in range(K):
            total = 0.0
            for b in range(a, K):
                total += v[b]
                m = total / (b - a + 1)
                means[w] = m
                if v[b] - m <= e and m - v[a] <= e:
                    s = 0.0
                    c = 0
                    for k in range(K):
                        dev = values[r, k] - m
                        sq = dev * dev
                        s += sq if sq < e2 else e2
                        if abs(dev) <= e:
                            c += 1
                    loss[w] = s
                    count[w] = c
                    if s < best:
                        best = s
                else:
                    loss[w] = np.inf
                    count[w] = -1
                w += 1
        tol = 1e-12 * max(1.0, best)
        pick = -1
        for i in range(W):
            if loss[i] <= best + tol:
                if pick < 0 or count[i] > count[pick] or (
                        count[i] == count[pick] and abs(means[i]) < abs(means[pick])):
                    pick = i
        out[r] = means[pick]
    return out


def redescend_batch(values: np.ndarray, eta) -> tuple[np.ndarray, np.ndarray]:
    """Exact minimisers of ``sum_k min((v_k - x)^2, eta^2)`` for each row of ``values``.

    Returns the minimisers ``(n,)`` and inlier masks ``(n, K)``. Candidates are the
    means of contiguous sorted windows whose points all lie within ``eta`` of the
    mean; the global minimiser is always one of them. Ties prefer more inliers,
    then the smaller magnitude.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n, K = values.shape
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
    if np.any(eta <= 0):
        raise ValidationError("eta must be positive")
    x = _redescend_rows(np.ascontiguousarray(values), eta)
    mask = np.abs(values - x[:, None]) <= eta[:, None]
    return x, mask


def redescend_minimize(values, eta: float) -> tuple[float, np.ndarray]:
    """Single-coordinate version of :func:`redescend_batch`; returns (minimiser, inlier indices)."""
    values = np.asarray(values, dtype=float).ravel()
    x, mask = redescend_batch(values[None, :], eta)
    return float(x[0]), np.flatnonzero(mask[0])


def redescend_loss(values, x, eta: float) -> np.ndarray:
    """Loss evaluated at each point in ``x``."""
    values = np.asarray(values, dtype=float).ravel()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.minimum((values[None, :] - x[:, None]) ** 2, eta * eta).sum(axis=1)


def _stack(fits: list[DebiasedFit]) -> np.ndarray:
    d, dp = fits[0].beta_tilde.shape
    for f in fits:
        if f.beta_tilde.shape != (d, dp):
            raise ValidationError("all subjects must share (d, p)")
    return np.stack([f.beta_tilde.ravel() for f in fits])  # (K, q)


def fuse_paths(fits: list[DebiasedFit], eta) -> PathDecomposition:
    B = _stack(fits)
    K, q = B.shape
    d, dp = fits[0].beta_tilde.shape
    eta_arr = np.broadcast_to(np.asarray(eta, dtype=float), (d, dp)).copy()
    common, mask = redescend_batch(B.T, eta_arr.ravel())
    unique = B - common[None, :]
    return PathDecomposition(d=d, p=dp // d, common_raw=common, unique_raw=unique,
                             inlier_mask=mask.reshape(d, dp, K), eta=eta_arr)


def hard_threshold(theta, delta):
    theta = np.asarray(theta, dtype=float)
    return np.where(np.abs(theta) >= delta, theta, 0.0)


def soft_threshold(theta, delta):
    theta = np.asarray(theta, dtype=float)
    return np.sign(theta) * np.maximum(np.abs(theta) - delta, 0.0)


def threshold_scales(fits: list[DebiasedFit], c0: float, cK: float, kappa: np.ndarray | None = None) -> ThresholdScales:
    """``kappa`` may be passed in to skip recomputing the residual condition numbers."""
    d, dp = fits[0].beta_tilde.shape
    q = d * dp
    K = len(fits)
    if kappa is None:
        kappa = np.array([residual_condition_number(f) for f in fits])
    Ns = np.array([f.N for f in fits])
    N_min = int(Ns.min())
    logq = math.log(q) if q > 1 else 1.0
    delta0 = float(kappa.max() * math.sqrt(logq / (c0 * K * N_min)))
    delta_k = cK * kappa * np.sqrt(logq / Ns)
    return ThresholdScales(delta0, delta_k, q, N_min)


def sparsify(decomp: PathDecomposition, scales: ThresholdScales, kind: str = "hard") -> PathDecomposition:
    op = {"hard": hard_threshold, "soft": soft_threshold}[kind]
    common = op(decomp.common_raw, scales.delta0)
    unique = op(decomp.unique_raw, np.asarray(scales.delta_k)[:, None])
    meta = dict(decomp.meta, delta0=scales.delta0, delta_k=np.asarray(scales.delta_k).tolist(),
                threshold_kind=kind)
    return dataclasses.replace(decomp, common_sparse=common, unique_sparse=unique, meta=meta)


def default_eta_grid(fits: list[DebiasedFit], n_eta: int = 10) -> np.ndarray:
    """``n_eta`` equal steps up to the spread (max - min) of all debiased coordinates."""
    B = _stack(fits)
    spread = float(B.max() - B.min())
    if spread <= 0:
        spread = 1.0
    return spread * np.arange(1, n_eta + 1) / n_eta


def _split_rows(N: int, holdout: float) -> int:
    n_test = max(int(math.floor(holdout * N)), MIN_HOLDOUT_ROWS)
    if N - n_test <= MIN_HOLDOUT_ROWS:
        raise ValidationError(f"series with N={N} rows too short for a {n_test}-row holdout")
    return n_test


def cross_validate(fits: list[DebiasedFit], panels: list[SubjectPanel], p: int,
                   config: FuseConfig = FuseConfig(), fit_kwargs: dict | None = None) -> CVResult:
    """Choose ``(eta, c0, cK)`` by last-block one-step prediction error averaged over subjects.

    Subjects are refitted on their initial block; the final decomposition uses ``fits``.
    """
    fit_kwargs = fit_kwargs or {}
    eta_grid = (np.asarray(config.eta_grid, dtype=float) if config.eta_grid is not None
                else default_eta_grid(fits, config.n_eta))
    c0_grid = np.asarray(config.c0_grid, dtype=float)
    cK_grid = np.asarray(config.cK_grid, dtype=float)

    block_fits, tests = [], []
    for panel in panels:
        data = panel.data - panel.data.mean(axis=0) if config.center else panel.data
        N = panel.T - p
        n_test = _split_rows(N, config.holdout)
        n_fit = N - n_test
        block_fits.append(fit_subject(data[: p + n_fit], p, center=False, **fit_kwargs))
        Y, X = lagged_design(data, p, center=False)
        Yt, Xt = Y[n_fit:], X[n_fit:]
        tests.append((Xt.T @ Xt, Xt.T @ Yt, float(np.sum(Yt * Yt)), Yt.size))

    K = len(panels)
    d, dp = fits[0].beta_tilde.shape
    # holdout error through sufficient statistics: ||Y - X B'||^2 = yy - 2<B', X'Y> + <B', X'X B'>
    XtX = np.stack([t[0] for t in tests])
    XtY = np.stack([t[1] for t in tests])
    yy = np.array([t[2] for t in tests])
    size = np.array([t[3] for t in tests], dtype=float)
    kappa = np.array([residual_condition_number(f) for f in block_fits])
    table = []
    for eta in eta_grid:
        raw = fuse_paths(block_fits, eta)
        for c0 in c0_grid:
            for cK in cK_grid:
                sp = sparsify(raw, threshold_scales(block_fits, c0, cK, kappa), config.threshold_kind)
                Bt = sp.individual_sparse().reshape(K, d, dp).transpose(0, 2, 1)  # (K, dp, d)
                quad = np.sum(Bt * (XtX @ Bt), axis=(1, 2))
                sse = yy - 2 * np.sum(Bt * XtY, axis=(1, 2)) + quad
                err = float(np.mean(sse / size))
                nnz = int(np.count_nonzero(sp.common_sparse) + np.count_nonzero(sp.unique_sparse))
                table.append((float(eta), float(c0), float(cK), err, nnz))

    best_err = min(row[3] for row in table)
    tol = 1e-12 * max(1.0, best_err)
    # ties: sparsest fit, then larger eta, smaller c0, larger cK (each gives a sparser or more robust fit)
    tied = [row for row in table if row[3] <= best_err + tol]
    eta, c0, cK, err, _ = min(tied, key=lambda r: (r[4], -r[0], r[1], -r[2]))

    final = sparsify(fuse_paths(fits, eta), threshold_scales(fits, c0, cK), config.threshold_kind)
    final.meta.update(eta=eta, c0=c0, cK=cK, cv_error=err)
    return CVResult(eta, c0, cK, final, table)
