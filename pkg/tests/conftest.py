import numpy as np
import pytest

from corlmc.gaussian import CovarianceSpec, SpatialDesign
from corlmc.margins import FactorLoadings


# loadings of the recovery experiment, in packed (a10, a1, a20, a2) order
RECOVERY_UPPER = (1.1, 0.9, 0.9, 0.8)
RECOVERY_LOWER = (0.7, 1.1, 0.7, 0.4)
RECOVERY_THETA = (2.2, 0.8, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pair_design():
    return SpatialDesign.line(1, p=2)


@pytest.fixture
def recovery_loadings():
    return FactorLoadings.from_vectors(RECOVERY_UPPER, RECOVERY_LOWER)


@pytest.fixture
def recovery_spec():
    return CovarianceSpec.two_factor(RECOVERY_THETA)


# acceptance outcomes, printed once at the end of the session
_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """``acceptance(number, ok, detail)`` records one criterion outcome."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
