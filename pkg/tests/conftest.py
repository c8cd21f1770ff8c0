import math

import pytest
from hypothesis import settings

from cwbnlw.lattice import ProblemParams

settings.register_profile("default", deadline=None)
settings.load_profile("default")

SQRT2 = math.sqrt(2.0)


@pytest.fixture
def ref_params():
    return ProblemParams(d=1, m0=(1,), rho=SQRT2, alpha=0.05, eps=1e-3)


@pytest.fixture
def params2d():
    return ProblemParams(d=2, m0=(1, 0), rho=SQRT2, alpha=0.05, eps=1e-3)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(terminalreporter.config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
