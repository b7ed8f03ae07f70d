import numpy as np
import pytest

from scalarforge import spectral_core as sc

# acceptance lines collected during the session, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_bandlimited(rng, n, kmax, real=True):
    """Random coefficients with |k_i| <= kmax, conjugate-symmetric when real."""
    v = rng.normal(size=(n, n))
    c = sc.fft(v)
    k = np.abs(sc.grid(n).K).max(axis=0)
    c[k > kmax] = 0
    if not real:
        c = c + 1j * sc.fft(rng.normal(size=(n, n))) * (k <= kmax)
    return c
