import numpy as np
import pytest

from racedc.datagen import CovarianceSpec, LinearModelSpec, gen_linear_batches


def make_batches(p=4, N=6, m=60, noise_var=1.0, seed=0, rho=0.3, kind="ar1", beta=None):
    beta = np.linspace(1.0, -1.0, p) if beta is None else np.asarray(beta, float)
    spec = LinearModelSpec(beta, noise_var, CovarianceSpec(kind, rho))
    return spec, gen_linear_batches(spec, N, m, seed)


@pytest.fixture
def small_linear():
    return make_batches()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
