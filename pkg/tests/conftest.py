import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kerrcomb.params import default_params, dispersion_detuning

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

KAPPA = 2 * np.pi * 630e6


@pytest.fixture(scope="session")
def params2():
    return default_params(M=2)


@pytest.fixture(scope="session")
def params1():
    return default_params(M=1)


@pytest.fixture(scope="session")
def bistable_params():
    """Single pair, pump detuned by 2 kappa: the pump-only cubic has three roots."""
    return default_params(M=1, detuning=dispersion_detuning(1, 2 * KAPPA, 20 * KAPPA))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
