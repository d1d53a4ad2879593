"""Wald-type tests of nullity and homogeneity, and the Z-test of common-path significance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .debias import DebiasedFit
from .panel import NumericalError, PathDecomposition, ValidationError

MAX_COND = 1e12


@dataclass
class TestReport:
    __test__ = False  # keep pytest from collecting this class

    kind: str
    statistic: np.ndarray  # (d, dp)
    df: int
    p_value: np.ndarray
    reject: np.ndarray
    alpha: float
    inliers: np.ndarray | None = None  # (d, dp, K), significance only
    N_pooled: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def rows(self):
        d, dp = self.statistic.shape
        for i in range(d):
            for j in range(dp):
                yield {"i": i, "j": j, "kind": self.kind, "statistic": float(self.statistic[i, j]),
                       "df": self.df, "p": float(self.p_value[i, j]), "reject": bool(self.reject[i, j])}

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "df": self.df, "alpha": self.alpha,
               "statistic": self.statistic.tolist(), "p_value": self.p_value.tolist(),
               "reject": self.reject.astype(int).tolist()}
        if self.inliers is not None:
            out["inliers"] = self.inliers.astype(int).tolist()
            out["N_pooled"] = self.N_pooled.tolist()
        return out

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["i", "j", "kind", "statistic", "df", "p", "reject"],
                               lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                row["reject"] = int(row["reject"])
                w.writerow(row)


def wald_contrast(beta, V, D, c, N) -> tuple[float, int, float]:
    """Wald statistic for ``D beta = c`` given per-subject asymptotic variances.

    ``V[k]`` is the variance of ``sqrt(N_k) * beta[k]``, so the covariance of
    ``beta`` is ``M^-1 diag(V) M^-1`` with ``M = diag(sqrt(N))``.
    """
    beta = np.asarray(beta, dtype=float)
    stat, df, p = wald_batch(beta[None, :], np.asarray(V, dtype=float)[None, :], D, c, N)
    return float(stat[0]), df, float(p[0])


def wald_batch(beta: np.ndarray, V: np.ndarray, D, c, N) -> tuple[np.ndarray, int, np.ndarray]:
    """Vectorised :func:`wald_contrast` over rows of ``beta`` and ``V`` (each ``(n, K)``)."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    a, K = D.shape
    if np.linalg.matrix_rank(D) != a:
        raise ValidationError(f"contrast must have full row rank {a}")
    N = np.asarray(N, dtype=float)
    if np.any(N <= 0):
        raise ValidationError("sample sizes must be positive")
    c = np.broadcast_to(np.asarray(c, dtype=float), (a,))
    w = V / N[None, :]  # variance of beta itself
    C = np.einsum("ak,nk,bk->nab", D, w, D)
    cond = np.linalg.cond(C)
    bad = np.flatnonzero(~np.isfinite(cond) | (cond >= MAX_COND))
    if bad.size:
        raise NumericalError(f"contrast covariance singular at coordinate {int(bad[0])}")
    r = beta @ D.T - c
    stat = np.einsum("na,na->n", r, np.linalg.solve(C, r[:, :, None])[:, :, 0])
    return stat, a, stats.chi2.sf(stat, a)


def _coordinates(fits: list[DebiasedFit]):
    d, dp = fits[0].beta_tilde.shape
    beta = np.stack([f.beta_tilde.ravel() for f in fits], axis=1)  # (q, K)
    V = np.stack([f.V.ravel() for f in fits], axis=1)
    N = np.array([f.N for f in fits], dtype=float)
    return d, dp, beta, V, N


def _report(kind, stat, df, p, alpha, d, dp, **kw) -> TestReport:
    stat = stat.reshape(d, dp)
    p = p.reshape(d, dp)
    return TestReport(kind, stat, df, p, p <= alpha, alpha, **kw)


def test_nullity(fits: list[DebiasedFit], alpha: float = 0.05) -> TestReport:
    """Joint test that a path is zero in every subject (chi-square, K df)."""
    d, dp, beta, V, N = _coordinates(fits)
    K = len(fits)
    stat, df, p = wald_batch(beta, V, np.eye(K), 0.0, N)
    return _report("nullity", stat, df, p, alpha, d, dp)


def first_difference(K: int) -> np.ndarray:
    D = np.zeros((K - 1, K))
    idx = np.arange(K - 1)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -1.0
    return D


def test_homogeneity(fits: list[DebiasedFit], alpha: float = 0.05) -> TestReport:
    """Test that a path takes the same value in every subject (chi-square, K-1 df)."""
    K = len(fits)
    if K < 2:
        raise ValidationError("homogeneity test needs at least two subjects")
    d, dp, beta, V, N = _coordinates(fits)
    stat, df, p = wald_batch(beta, V, first_difference(K), 0.0, N)
    return _report("homogeneity", stat, df, p, alpha, d, dp)


def test_significance(decomp: PathDecomposition, fits: list[DebiasedFit], alpha: float = 0.05,
                      screen: bool = False) -> TestReport:
    """Two-sided Z-test that the fused common path is zero, pooling inlier subjects.

    With ``screen`` a coordinate is rejected only if its thresholded common
    estimate is also nonzero; the unscreened decisions stay in ``extra["reject_raw"]``.
    """
    d, dp, beta, V, N = _coordinates(fits)
    mask = decomp.inlier_mask.reshape(d * dp, -1)
    n_in = mask.sum(axis=1)
    if np.any(n_in == 0):
        i, j = divmod(int(np.flatnonzero(n_in == 0)[0]), dp)
        raise NumericalError(f"no inliers at ({i},{j})")
    N_pooled = (mask * N[None, :]).sum(axis=1) / n_in
    var = (mask * V).sum(axis=1) / n_in ** 2
    z = np.sqrt(N_pooled) * decomp.common_raw / np.sqrt(var)
    p = 2 * stats.norm.sf(np.abs(z))
    report = _report("significance", z, 1, p, alpha, d, dp,
                     inliers=decomp.inlier_mask.copy(), N_pooled=N_pooled.reshape(d, dp))
    report.extra["reject_raw"] = report.reject.copy()
    report.extra["screened"] = screen
    if screen:
        report.reject = report.reject & (decomp.common_sparse.reshape(d, dp) != 0)
    return report


def benjamini_hochberg(p_values: np.ndarray, alpha: float = 0.05) -> np.ndarray:
    """Step-up BH rejections over all entries (optional post-processing)."""
    p = np.asarray(p_values, dtype=float)
    flat = p.ravel()
    m = flat.size
    order = np.argsort(flat)
    passed = flat[order] <= alpha * np.arange(1, m + 1) / m
    reject = np.zeros(m, dtype=bool)
    if passed.any():
        reject[order[: np.max(np.flatnonzero(passed)) + 1]] = True
    return reject.reshape(p.shape)
