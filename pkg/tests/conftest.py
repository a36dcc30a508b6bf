import numpy as np
import pytest

from rotwave.continuation import alpha_grid, continue_in_alpha
from rotwave.lattice import build_wedge
from rotwave.model import PolynomialModel
from rotwave.phase import solve_phase

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def model():
    return PolynomialModel()


@pytest.fixture(scope="session")
def wedge20():
    return build_wedge(20)


@pytest.fixture(scope="session")
def theta20(wedge20):
    return solve_phase(wedge20)


@pytest.fixture(scope="session")
def run20(model, wedge20, theta20):
    return continue_in_alpha(alpha_grid(0.1, 1e-3), model, wedge20, theta_bar=theta20)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
