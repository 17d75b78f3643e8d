import pytest

from pumpline.bands import certify_gap, common_gap
from pumpline.potential import FermiPoint, sliding_cosine, static_cosine, two_harmonic_pump


class Case:
    def __init__(self, spec, n):
        self.spec = spec
        self.n = n
        top, bottom = common_gap(spec, n)
        self.E_F = 0.5 * (top + bottom)
        self.fermi = FermiPoint(self.E_F)
        self.cert = certify_gap(spec, self.E_F)


@pytest.fixture(scope="session")
def sliding():
    return Case(sliding_cosine(), 1)


@pytest.fixture(scope="session")
def two_harmonic():
    return Case(two_harmonic_pump(), 2)


@pytest.fixture(scope="session")
def static():
    return Case(static_cosine(), 1)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for the acceptance summary, then assert."""

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
