import numpy as np
import pytest

from tracewalk.walk import Layer, family_weights, validate_distribution


def family(d, k, gamma, layer):
    return validate_distribution(family_weights(d, k, gamma), layer)


@pytest.fixture
def p0_family():
    """d=2, k0=1, gamma0=4: weights (4/7, 1/7, 1/7, 1/7)."""
    return family(2, 1, 4.0, Layer.ZERO)


@pytest.fixture
def p0_line():
    return validate_distribution([0.7, 0.3], Layer.ZERO)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def acceptance():
    """Record one acceptance line: record(label, passed, detail, gating=True)."""

    def record(label, passed, detail, gating=True):
        status = ("PASS" if passed else "FAIL") if gating else ("INFO-PASS" if passed else "INFO-FAIL")
        _ACCEPTANCE.append((status, label, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, label, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:9s} {label}: {detail}")
