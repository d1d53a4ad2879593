import numpy as np
import pytest

from mvfuse.panel import StudyConfig
from mvfuse.synth import draw_design, generate

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_study():
    """Medium-heterogeneity study, d=5, K=4, T about 120."""
    design = draw_design("medium", d=5, K=4, mean_T=120, seed=3)
    panels, truth = generate(design)
    return panels, truth, StudyConfig(K=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
