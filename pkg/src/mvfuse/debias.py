"""Nodewise regression, approximate inverse Gram, and debiased per-subject fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lasso import lambda_path, select_lambda_timeseries, solve_gram
from .panel import NumericalError, SubjectPanel, lagged_design

TAU_FLOOR = 1e-10
C_NODE = 0.5


@dataclass(frozen=True)
class NodewiseFit:
    gamma: list  # gamma[j] has length dp - 1, columns in natural order with j removed
    tau_sq: np.ndarray
    Theta: np.ndarray
    lambda_node: np.ndarray


@dataclass(frozen=True)
class DebiasedFit:
    beta_hat: np.ndarray  # (d, dp)
    beta_tilde: np.ndarray  # (d, dp)
    sigma_sq: np.ndarray  # (d,)
    Sigma_hat: np.ndarray  # (dp, dp)
    V: np.ndarray  # (d, dp)
    N: int
    Theta: np.ndarray
    lambdas: np.ndarray  # per-equation Lasso penalties
    subject_id: str = ""

    @property
    def d(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def p(self) -> int:
        return self.beta_hat.shape[1] // self.beta_hat.shape[0]

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "N": self.N,
            "beta_hat": self.beta_hat.tolist(),
            "beta_tilde": self.beta_tilde.tolist(),
            "sigma_sq": self.sigma_sq.tolist(),
            "Sigma_hat": self.Sigma_hat.tolist(),
            "V": self.V.tolist(),
            "Theta": self.Theta.tolist(),
            "lambdas": self.lambdas.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DebiasedFit":
        arr = {k: np.asarray(obj[k], dtype=float)
               for k in ("beta_hat", "beta_tilde", "sigma_sq", "Sigma_hat", "V", "Theta", "lambdas")}
        return cls(N=int(obj["N"]), subject_id=obj.get("subject_id", ""), **arr)


def nodewise_lambda(n_cols: int, N: int, c_node: float = C_NODE) -> float:
    return c_node * math.sqrt(math.log(max(n_cols, 2)) / N)


def fit_nodewise(X: np.ndarray, lam: float | None = None, c_node: float = C_NODE) -> NodewiseFit:
    """Regress each design column on the others and assemble ``Theta = diag(1/tau^2) Gamma``.

    ``tau_j^2 = ||X_j - X_{-j} gamma_j||^2 / N + lam * ||gamma_j||_1``.
    """
    N, m = X.shape
    if lam is None:
        lam = nodewise_lambda(m, N, c_node)
    G = X.T @ X / N
    Theta = np.zeros((m, m))
    tau_sq = np.empty(m)
    gammas = []
    idx = np.arange(m)
    for j in range(m):
        rest = idx != j
        G_rest = G[np.ix_(rest, rest)]
        c = G[rest, j]
        if m > 1:
            g = solve_gram(G_rest, c, lam).coefficients
        else:
            g = np.zeros(0)
        tau = G[j, j] - 2 * g @ c + g @ G_rest @ g + lam * np.abs(g).sum()
        if tau < TAU_FLOOR:
            raise NumericalError(f"degenerate nodewise residual at column {j}")
        tau_sq[j] = tau
        Theta[j, j] = 1.0 / tau
        Theta[j, rest] = -g / tau
        gammas.append(g)
    return NodewiseFit(gammas, tau_sq, Theta, np.full(m, lam))


def debias_subject(X: np.ndarray, Y: np.ndarray, beta_hat: np.ndarray, nodewise: NodewiseFit,
                   lambdas: np.ndarray | None = None, subject_id: str = "") -> DebiasedFit:
    """Apply the one-step correction ``beta + Theta X'(y - X beta)/N`` to every equation.

    ``Y`` is ``(N, d)``; ``beta_hat`` is ``(d, dp)``.
    """
    N = X.shape[0]
    resid = Y - X @ beta_hat.T  # (N, d)
    Theta = nodewise.Theta
    beta_tilde = beta_hat + (Theta @ (X.T @ resid) / N).T
    sigma_sq = np.einsum("ti,ti->i", resid, resid) / N
    Sigma_hat = X.T @ X / N
    omega_diag = np.einsum("jk,jk->j", Theta @ Sigma_hat, Theta)
    V = sigma_sq[:, None] * omega_diag[None, :]
    if lambdas is None:
        lambdas = np.full(beta_hat.shape[0], np.nan)
    return DebiasedFit(beta_hat, beta_tilde, sigma_sq, Sigma_hat, V, N, Theta,
                       np.asarray(lambdas, dtype=float), subject_id)


def fit_equations(X: np.ndarray, Y: np.ndarray, n_lambda: int = 20, ratio: float = 0.01,
                  holdout: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Lasso for each column of ``Y`` with holdout-selected penalty. Returns (beta_hat, lambdas)."""
    N, m = X.shape
    G = X.T @ X / N
    d = Y.shape[1]
    beta_hat = np.zeros((d, m))
    lambdas = np.empty(d)
    for i in range(d):
        y = Y[:, i]
        grid = lambda_path(X, y, n_lambda, ratio)
        lam = select_lambda_timeseries(X, y, grid, holdout)
        sol = solve_gram(G, X.T @ y / N, lam)
        if not sol.converged:
            raise NumericalError(f"Lasso for equation {i} did not converge (KKT {sol.dual_gap_proxy:.2e})")
        beta_hat[i] = sol.coefficients
        lambdas[i] = lam
    return beta_hat, lambdas


def fit_subject(panel: SubjectPanel | np.ndarray, p: int, center: bool = True, c_node: float = C_NODE,
                n_lambda: int = 20, ratio: float = 0.01, holdout: float = 0.2) -> DebiasedFit:
    """Full per-subject estimation: Lasso per equation, nodewise regression, debiasing."""
    data = panel.data if isinstance(panel, SubjectPanel) else np.asarray(panel, dtype=float)
    sid = panel.subject_id if isinstance(panel, SubjectPanel) else ""
    Y, X = lagged_design(data, p, center)
    beta_hat, lambdas = fit_equations(X, Y, n_lambda, ratio, holdout)
    nodewise = fit_nodewise(X, c_node=c_node)
    return debias_subject(X, Y, beta_hat, nodewise, lambdas, sid)


def residual_condition_number(fit: DebiasedFit) -> float:
    s = fit.sigma_sq
    if s.min() < 1e-12:
        raise NumericalError("residual variance below 1e-12 (perfect fit); condition number undefined")
    return float(s.max() / s.min())
