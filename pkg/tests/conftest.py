import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from secure_estimation import (
    GaussianConvolvedUniform,
    GaussianMeanShift,
    GaussianPrior,
    ModelSpace,
    UniformPrior,
)

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def conjugate():
    """Scalar model ``Y | X ~ N(X, 1)``, ``X ~ N(0, 4)`` with a shifted alternative."""
    return ModelSpace.build([GaussianMeanShift(1.0, 1.0)], [GaussianMeanShift(1.0, 1.0, 2.0)],
                            GaussianPrior(0.0, 4.0), 1, eps0=0.5)


def case1_model(n=1):
    return ModelSpace.build(
        [GaussianMeanShift(1.0, 1.0), GaussianMeanShift(4.0, 1.0)],
        [GaussianConvolvedUniform(1.0, 1.0, -40.0, 40.0), GaussianMeanShift(4.0, 1.0)],
        GaussianPrior(0.0, 9.0), n, scenarios=[[0]], eps0=0.5)


def case2_model(n=1):
    return ModelSpace.build(
        [GaussianMeanShift(1.0, 1.0), GaussianMeanShift(2.0, 1.0)],
        [GaussianMeanShift(1.0, 5.0), GaussianMeanShift(2.0, 5.0)],
        UniformPrior(-2.0, 2.0), n, eps0=0.2, scenario_priors=[0.2, 0.6])


def case3_model(n=1, eps0=0.0):
    return ModelSpace.build(
        [GaussianMeanShift(1.0, 2.0), GaussianMeanShift(4.0, 2.0)],
        [GaussianMeanShift(1.0, 6.0), GaussianMeanShift(4.0, 6.0)],
        GaussianPrior(0.0, 4.0), n, eps0=eps0)


def reference_model(n=1):
    g0 = GaussianMeanShift(1.0, 1.0)
    g1 = GaussianConvolvedUniform(1.0, 1.0, -10.0, 10.0)
    return ModelSpace.build([g0, g0], [g1, g1], GaussianPrior(0.0, 3.0), n, eps0=0.5)


def six_bin_model():
    return ModelSpace.build([GaussianMeanShift(1.0, 1.0)], [GaussianMeanShift(1.0, 1.0, 2.0)],
                            GaussianPrior(0.0, 1.0), 1, eps0=0.5)


SIX_BIN_EDGES = (-np.inf, -1.0, 0.0, 1.0, 2.0, 3.0, np.inf)


# ---------------------------------------------------------- acceptance log

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are printed in the terminal summary."""
    def emit(criterion, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{criterion}] {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
