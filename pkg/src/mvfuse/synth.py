"""Ground-truthed multi-subject VAR simulator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .panel import SubjectPanel, ValidationError

PRESETS = {
    "high": (0.02, 0.04),
    "medium": (0.03, 0.03),
    "low": (0.04, 0.02),
}
BURN_IN = 200
MAX_RADIUS = 0.95
SET_NAMES = ("T0K", "T0cK", "T0Kc", "T0cKc")

_COEF_STREAM = 1
_NOISE_STREAM = 2


@dataclass(frozen=True)
class SimDesign:
    d: int
    K: int
    p: int
    T: tuple[int, ...]
    n_common: int
    n_unique: int
    seed: int
    coef_range: tuple[float, float] = (0.3, 0.8)
    noise_var: np.ndarray | None = None  # (K, d); unit variances when None
    preset: str = "custom"
    mean_T: int = 0

    def __post_init__(self):
        q = self.d * self.d * self.p
        if len(self.T) != self.K:
            raise ValidationError(f"need {self.K} sample lengths, got {len(self.T)}")
        if self.n_common < 0 or self.n_unique < 0:
            raise ValidationError("support sizes must be nonnegative")
        total = self.n_common + self.K * self.n_unique
        if total > q:
            raise ValidationError(
                f"infeasible density: {self.n_common} common + {self.K}x{self.n_unique} unique = {total} > {q} paths"
            )

    @property
    def q(self) -> int:
        return self.d * self.d * self.p


@dataclass(frozen=True)
class SimTruth:
    d: int
    p: int
    Phi: list  # Phi[k] is (d, dp) = (Phi_1 ... Phi_p) side by side
    alpha0: np.ndarray  # (q,)
    alpha: np.ndarray  # (K, q)
    sets: dict = field(default_factory=dict)  # name -> bool mask (d, dp)
    scale: float = 1.0

    @property
    def beta(self) -> np.ndarray:
        return self.alpha0[None, :] + self.alpha

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "p": self.p,
            "alpha0": self.alpha0.tolist(),
            "alpha": self.alpha.tolist(),
            "sets": {name: np.argwhere(mask).tolist() for name, mask in self.sets.items()},
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimTruth":
        d, p = int(obj["d"]), int(obj["p"])
        alpha0 = np.asarray(obj["alpha0"], dtype=float)
        alpha = np.asarray(obj["alpha"], dtype=float)
        beta = alpha0[None, :] + alpha
        return cls(d, p, [b.reshape(d, d * p) for b in beta], alpha0, alpha,
                   index_sets(alpha0, alpha, d, p), float(obj.get("scale", 1.0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def sample_lengths(mean_T: int, K: int, rng: np.random.Generator) -> tuple[int, ...]:
    half = max(5, int(round(0.05 * mean_T)))
    return tuple(int(t) for t in rng.integers(mean_T - half, mean_T + half + 1, size=K))


def draw_design(preset: str, d: int, K: int, mean_T: int, seed: int, p: int = 1) -> SimDesign:
    """Design for one of the heterogeneity presets (``high``, ``medium``, ``low``)."""
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    s0, sk = PRESETS[preset]
    q = d * d * p
    rng = np.random.default_rng([seed, 0])
    T = sample_lengths(mean_T, K, rng)
    return SimDesign(d=d, K=K, p=p, T=T, n_common=int(round(s0 * q)), n_unique=int(round(sk * q)),
                     seed=seed, preset=preset, mean_T=mean_T)


def companion_radius(Phi: np.ndarray) -> float:
    """Spectral radius of the companion matrix of ``Phi = (Phi_1 ... Phi_p)``."""
    d, dp = Phi.shape
    p = dp // d
    C = np.zeros((dp, dp))
    C[:d] = Phi
    if p > 1:
        C[d:, :-d] = np.eye(d * (p - 1))
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def index_sets(alpha0: np.ndarray, alpha: np.ndarray, d: int, p: int) -> dict:
    common = (alpha0 != 0).reshape(d, d * p)
    unique = np.any(alpha != 0, axis=0).reshape(d, d * p)
    return {
        "T0K": ~common & ~unique,
        "T0cK": common & ~unique,
        "T0Kc": ~common & unique,
        "T0cKc": common & unique,
    }


def draw_truth(design: SimDesign) -> SimTruth:
    rng = np.random.default_rng([design.seed, _COEF_STREAM])
    q, K = design.q, design.K
    lo, hi = design.coef_range
    n_total = design.n_common + K * design.n_unique
    cells = rng.choice(q, size=n_total, replace=False)

    def values(n):
        return rng.uniform(lo, hi, size=n) * rng.choice([-1.0, 1.0], size=n)

    alpha0 = np.zeros(q)
    alpha0[cells[: design.n_common]] = values(design.n_common)
    alpha = np.zeros((K, q))
    for k in range(K):
        start = design.n_common + k * design.n_unique
        alpha[k, cells[start: start + design.n_unique]] = values(design.n_unique)

    d, p = design.d, design.p
    scale = 1.0
    # global rescaling keeps beta = alpha0 + alpha exact for every subject
    for _ in range(100):
        radius = max(companion_radius((alpha0 + a).reshape(d, d * p)) for a in alpha)
        if radius < MAX_RADIUS:
            break
        factor = MAX_RADIUS / radius * (1 - 1e-9)
        alpha0 = alpha0 * factor
        alpha = alpha * factor
        scale *= factor
    beta = alpha0[None, :] + alpha
    Phi = [b.reshape(d, d * p) for b in beta]
    return SimTruth(d, p, Phi, alpha0, alpha, index_sets(alpha0, alpha, d, p), scale)


def simulate_var(Phi: np.ndarray, T: int, rng: np.random.Generator, noise_sd: np.ndarray | None = None,
                 burn_in: int = BURN_IN) -> np.ndarray:
    d, dp = Phi.shape
    p = dp // d
    sd = np.ones(d) if noise_sd is None else np.asarray(noise_sd, dtype=float)
    total = burn_in + T
    eps = rng.standard_normal((total, d)) * sd
    x = np.zeros((total + p, d))
    lags = [Phi[:, (l - 1) * d: l * d] for l in range(1, p + 1)]
    for t in range(p, total + p):
        val = eps[t - p].copy()
        for l, A in enumerate(lags, start=1):
            val += A @ x[t - l]
        x[t] = val
    return x[p + burn_in:]


def generate(design: SimDesign) -> tuple[list[SubjectPanel], SimTruth]:
    truth = draw_truth(design)
    panels = []
    for k in range(design.K):
        rng = np.random.default_rng([design.seed, _NOISE_STREAM, k])
        sd = None if design.noise_var is None else np.sqrt(np.asarray(design.noise_var)[k])
        data = simulate_var(truth.Phi[k], design.T[k], rng, sd)
        panels.append(SubjectPanel(f"s{k + 1:02d}", data))
    return panels, truth
