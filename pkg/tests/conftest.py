import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridshield.attackgen import simulate_clean
from gridshield.gridmodel import bundled_case, default_profile

settings.register_profile(
    "gridshield", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("gridshield")


@pytest.fixture(scope="session")
def case14():
    return bundled_case("ieee14")


@pytest.fixture(scope="session")
def case3():
    return bundled_case("tiny3")


@pytest.fixture(scope="session")
def clean_day(case14):
    """One desk-scale day of clean streams at the default network settings."""
    return simulate_clean(case14, default_profile(), 21600, seed=11)


@pytest.fixture(scope="session")
def clean_short(case14):
    return simulate_clean(case14, default_profile(), 4000, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, k, cond=50.0):
    """Random SPD matrix with eigenvalues spread over ``[1, cond]``."""
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    eig = np.exp(rng.uniform(0, np.log(cond), k))
    return (q * eig) @ q.T


# acceptance criteria record their verdicts here; printed at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, text = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
