"""Estimation and testing metrics against simulation truth."""

from __future__ import annotations

import numpy as np

from .inference import TestReport
from .panel import PathDecomposition
from .synth import SimTruth

# null set for each test kind, as unions of the four truth index sets
NULL_SETS = {
    "nullity": ("T0K",),
    "homogeneity": ("T0K", "T0cK"),
    "significance": ("T0K", "T0Kc"),
}


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else float("nan")


def score_estimation(decomp: PathDecomposition, truth: SimTruth) -> dict:
    """Relative l2 error, sensitivity and specificity for common and unique paths."""
    a0_hat, a0 = decomp.common_sparse, truth.alpha0
    rmse0 = _ratio(np.linalg.norm(a0_hat - a0), np.linalg.norm(a0))
    sens0 = _ratio(np.sum((a0_hat != 0) & (a0 != 0)), np.sum(a0 != 0))
    spec0 = _ratio(np.sum((a0_hat == 0) & (a0 == 0)), np.sum(a0 == 0))
    rmse, sens, spec = [], [], []
    for ak_hat, ak in zip(decomp.unique_sparse, truth.alpha):
        rmse.append(_ratio(np.linalg.norm(ak_hat - ak), np.linalg.norm(ak)))
        sens.append(_ratio(np.sum((ak_hat != 0) & (ak != 0)), np.sum(ak != 0)))
        spec.append(_ratio(np.sum((ak_hat == 0) & (ak == 0)), np.sum(ak == 0)))

    def mean(xs):
        xs = np.asarray(xs, dtype=float)
        return float(np.mean(xs[~np.isnan(xs)])) if np.any(~np.isnan(xs)) else float("nan")

    return {"rmse0": rmse0, "rmseK": mean(rmse), "sens0": sens0, "sensK": mean(sens),
            "spec0": spec0, "specK": mean(spec)}


def null_mask(kind: str, sets: dict) -> np.ndarray:
    mask = np.zeros_like(next(iter(sets.values())), dtype=bool)
    for name in NULL_SETS[kind]:
        mask |= sets[name]
    return mask


def score_tests(report: TestReport, sets: dict) -> tuple[float, float]:
    """FDR (0 when nothing is rejected) and power (nan when there are no alternatives)."""
    null = null_mask(report.kind, sets)
    rej = report.reject
    n_rej = int(rej.sum())
    fdr = float(np.sum(rej & null) / n_rej) if n_rej else 0.0
    power = _ratio(np.sum(rej & ~null), np.sum(~null))
    return fdr, power


def sup_error(decomp: PathDecomposition, truth: SimTruth) -> float:
    return float(np.max(np.abs(decomp.common_sparse - truth.alpha0)))
