"""Independent brute-force reference solutions used by the tests."""

import itertools

import numpy as np


def lasso_grid_oracle(X, y, lam, weights=None, half_width=None, points=21, tol=1e-7):
    """Minimise the Lasso objective by exhaustive search on a box that zooms in around the best point.

    Only meant for m <= 3; the objective is convex, so keeping a few grid steps of margin
    around the incumbent never loses the minimiser.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    N, m = X.shape
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    G = X.T @ X / N
    c = X.T @ y / N

    def objective(B):  # rows of B are candidates
        quad = 0.5 * np.einsum("nj,jk,nk->n", B, G, B) - B @ c
        return quad + lam * np.abs(B) @ w

    if half_width is None:
        ls = np.linalg.lstsq(X, y, rcond=None)[0]
        half_width = 2.0 * (np.abs(ls).max() + 1.0)
    center = np.zeros(m)
    width = half_width
    while True:
        axes = [np.linspace(cj - width, cj + width, points) for cj in center]
        grid = np.array(list(itertools.product(*axes)))
        center = grid[np.argmin(objective(grid))]
        step = 2 * width / (points - 1)
        if step < tol:
            return center
        width = 3 * step


def lasso_enumeration_oracle(X, y, lam, weights=None):
    """Exact solution by enumerating every sign pattern and solving the stationarity equations."""
    X = np.asarray(X, dtype=float)
    N, m = X.shape
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    G = X.T @ X / N
    c = X.T @ np.asarray(y, dtype=float) / N
    best, best_val = None, np.inf
    for signs in itertools.product((-1, 0, 1), repeat=m):
        s = np.array(signs, dtype=float)
        act = s != 0
        beta = np.zeros(m)
        if act.any():
            try:
                beta[act] = np.linalg.solve(G[np.ix_(act, act)], c[act] - lam * w[act] * s[act])
            except np.linalg.LinAlgError:
                continue
            if np.any(np.sign(beta[act]) != s[act]):
                continue
        val = 0.5 * beta @ G @ beta - beta @ c + lam * np.abs(beta) @ w
        if val < best_val:
            best, best_val = beta, val
    return best


def redescend_grid_oracle(values, eta, step=1e-4):
    """Minimum of sum_k min((v_k - x)^2, eta^2) over a uniform grid covering all candidates."""
    values = np.asarray(values, dtype=float)
    xs = np.arange(values.min() - eta, values.max() + eta + step, step)
    best = np.inf
    for chunk in np.array_split(xs, max(1, xs.size // 20000)):
        loss = np.minimum((values[None, :] - chunk[:, None]) ** 2, eta * eta).sum(axis=1)
        best = min(best, float(loss.min()))
    return best


def weighted_median_oracle(values, weights, step=1e-5):
    """Brute-force minimiser of |x| + sum_k w_k |v_k - x| on a grid (ties: smallest |x|)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    lo, hi = min(0.0, values.min()), max(0.0, values.max())
    xs = np.concatenate([np.arange(lo, hi + step, step), values, [0.0]])
    obj = np.abs(xs) + np.abs(values[None, :] - xs[:, None]) @ weights
    best = obj.min()
    cands = xs[obj <= best + 1e-12 * max(1.0, best)]
    return cands[np.argmin(np.abs(cands))], best
