"""End-to-end estimation: per-subject debiased fits, fusion with cross-validation, tests."""

from __future__ import annotations

from dataclasses import dataclass

from .debias import DebiasedFit, fit_subject
from .fuse import CVResult, FuseConfig, cross_validate
from .inference import TestReport, test_homogeneity, test_nullity, test_significance
from .panel import StudyConfig, SubjectPanel


@dataclass
class StudyFit:
    fits: list
    cv: CVResult
    reports: dict  # kind -> TestReport

    @property
    def decomposition(self):
        return self.cv.decomposition


def fit_study(panels: list[SubjectPanel], config: StudyConfig, **fit_kwargs) -> list[DebiasedFit]:
    return [fit_subject(panel, config.p, config.center, **fit_kwargs) for panel in panels]


def run_tests(decomp, fits: list[DebiasedFit], alpha: float = 0.05, screen: bool = True) -> dict[str, TestReport]:
    return {
        "nullity": test_nullity(fits, alpha),
        "homogeneity": test_homogeneity(fits, alpha),
        "significance": test_significance(decomp, fits, alpha, screen=screen),
    }


def estimate(panels: list[SubjectPanel], config: StudyConfig, fuse_config: FuseConfig | None = None,
             fits: list[DebiasedFit] | None = None, screen: bool = True) -> StudyFit:
    """Fit every subject, choose fusion thresholds by cross-validation, and run all three tests."""
    if fits is None:
        fits = fit_study(panels, config)
    fuse_config = fuse_config or FuseConfig.from_study(config)
    cv = cross_validate(fits, panels, config.p, fuse_config)
    return StudyFit(fits, cv, run_tests(cv.decomposition, fits, config.alpha, screen))
