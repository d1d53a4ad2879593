import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvfuse.debias import (
    DebiasedFit,
    debias_subject,
    fit_nodewise,
    fit_subject,
    nodewise_lambda,
    residual_condition_number,
)
from mvfuse.panel import NumericalError, lagged_design
from mvfuse.synth import simulate_var


def _fit_with_sigma(sigma_sq):
    d = len(sigma_sq)
    z = np.zeros((d, d))
    return DebiasedFit(z, z, np.asarray(sigma_sq, dtype=float), np.eye(d), np.ones((d, d)), 50, np.eye(d),
                       np.zeros(d))


class TestNodewise:
    def test_orthogonal_columns(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((40, 3)))
        X = Q * np.array([2.0, 1.0, 0.5]) * np.sqrt(40)
        nw = fit_nodewise(X, lam=0.0)
        for g in nw.gamma:
            np.testing.assert_allclose(g, 0, atol=1e-10)
        np.testing.assert_allclose(nw.tau_sq, np.sum(X ** 2, axis=0) / 40)
        np.testing.assert_allclose(nw.Theta, np.diag(1 / nw.tau_sq), atol=1e-10)

    def test_correlated_pair_inverse(self, rng):
        x = rng.standard_normal(200)
        X = np.column_stack([x, 0.95 * x + 0.2 * rng.standard_normal(200)])
        G = X.T @ X / 200
        a, b, c = G[0, 0], G[0, 1], G[1, 1]
        inverse = np.array([[c, -b], [-b, a]]) / (a * c - b * b)  # closed-form 2x2 inverse
        np.testing.assert_allclose(fit_nodewise(X, lam=0.0).Theta, inverse, atol=1e-8)

    def test_three_by_three_inverse(self, rng):
        X = rng.standard_normal((300, 3)) @ np.array([[1.0, 0.4, 0.0], [0.0, 1.0, 0.3], [0.0, 0.0, 1.0]])
        G = X.T @ X / 300
        np.testing.assert_allclose(fit_nodewise(X, lam=0.0).Theta, np.linalg.inv(G), atol=1e-6)

    def test_gamma_layout(self, rng):
        X = rng.standard_normal((100, 4))
        X[:, 2] += 0.8 * X[:, 0]
        nw = fit_nodewise(X)
        for j in range(4):
            rest = [k for k in range(4) if k != j]
            assert nw.Theta[j, j] == pytest.approx(1 / nw.tau_sq[j])
            np.testing.assert_allclose(nw.Theta[j, rest], -nw.gamma[j] / nw.tau_sq[j])

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_self_consistency(self, seed):
        rng = np.random.default_rng(seed)
        N, m = int(rng.integers(30, 200)), int(rng.integers(2, 15))
        X = rng.standard_normal((N, m)) @ (np.eye(m) + 0.3 * rng.standard_normal((m, m)))
        nw = fit_nodewise(X)
        assert np.all(nw.tau_sq > 0)
        diag = np.einsum("nj,nk,jk->j", X, X, nw.Theta) / N  # (1/N) X_j' X Theta_j'
        np.testing.assert_allclose(diag, 1.0, atol=1e-4)

    def test_penalty_default(self):
        assert nodewise_lambda(20, 199) == pytest.approx(0.5 * np.sqrt(np.log(20) / 199))

    def test_degenerate_column(self, rng):
        X = rng.standard_normal((50, 3))
        X[:, 1] = 0.0
        with pytest.raises(NumericalError, match="degenerate nodewise residual at column 1"):
            fit_nodewise(X)

    def test_single_column(self, rng):
        X = rng.standard_normal((50, 1))
        nw = fit_nodewise(X)
        assert nw.Theta[0, 0] == pytest.approx(50 / (X[:, 0] @ X[:, 0]))


class TestDebias:
    def test_identity(self, rng):
        data = simulate_var(np.array([[0.4, 0.1, 0], [0, 0.3, 0], [0.2, 0, -0.3]]), 150, rng)
        fit = fit_subject(data, 1)
        Y, X = lagged_design(data, 1)
        resid = Y - X @ fit.beta_hat.T
        np.testing.assert_allclose(fit.beta_tilde - fit.beta_hat, (fit.Theta @ X.T @ resid / fit.N).T,
                                   atol=1e-13)
        np.testing.assert_allclose(fit.sigma_sq, np.mean(resid ** 2, axis=0))
        omega = fit.Theta @ fit.Sigma_hat @ fit.Theta.T
        np.testing.assert_allclose(fit.V, fit.sigma_sq[:, None] * np.diag(omega)[None, :])
        assert np.all(np.isfinite(fit.V)) and np.all(fit.V > 0)

    def test_ols_fixed_point(self, rng):
        X = rng.standard_normal((80, 3))
        Y = X @ rng.standard_normal((3, 2)) + rng.standard_normal((80, 2))
        ols = np.linalg.lstsq(X, Y, rcond=None)[0].T
        nw = fit_nodewise(X, lam=0.0)
        fit = debias_subject(X, Y, ols, nw)
        np.testing.assert_allclose(fit.beta_tilde, ols, atol=1e-10)

    def test_zero_residuals(self, rng):
        X = rng.standard_normal((60, 3))
        B = rng.standard_normal((2, 3))
        fit = debias_subject(X, X @ B.T, B, fit_nodewise(X))
        np.testing.assert_allclose(fit.beta_tilde, B, atol=1e-12)
        np.testing.assert_allclose(fit.sigma_sq, 0, atol=1e-24)

    def test_ar1_within_three_se(self):
        hits = 0
        for r in range(200):
            x = simulate_var(np.array([[0.5]]), 5000, np.random.default_rng([21, r]))
            fit = fit_subject(x, 1)
            se = np.sqrt(fit.V[0, 0] / fit.N)
            hits += abs(fit.beta_tilde[0, 0] - 0.5) <= 3 * se
        assert hits / 200 >= 0.99

    def test_json_round_trip(self, rng):
        fit = fit_subject(rng.standard_normal((60, 3)), 1)
        back = DebiasedFit.from_dict(json.loads(json.dumps(fit.to_dict())))
        for name in ("beta_hat", "beta_tilde", "sigma_sq", "V", "Theta", "Sigma_hat"):
            np.testing.assert_array_equal(getattr(back, name), getattr(fit, name))
        assert back.N == fit.N and back.d == 3 and back.p == 1

    def test_lag_two_shapes(self, rng):
        fit = fit_subject(rng.standard_normal((80, 3)), 2)
        assert fit.beta_tilde.shape == (3, 6) and fit.Theta.shape == (6, 6) and fit.N == 78


class TestConditionNumber:
    def test_equal(self):
        assert residual_condition_number(_fit_with_sigma([2.0, 2.0, 2.0])) == 1.0

    def test_ratio(self):
        assert residual_condition_number(_fit_with_sigma([4.0, 1.0])) == 4.0

    def test_single_variable(self):
        assert residual_condition_number(_fit_with_sigma([0.7])) == 1.0

    def test_perfect_fit(self):
        with pytest.raises(NumericalError):
            residual_condition_number(_fit_with_sigma([1.0, 1e-14]))
