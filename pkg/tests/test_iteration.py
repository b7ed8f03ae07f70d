from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scalarforge import spectral_core as sc
from scalarforge.errors import ConfigError, NonzeroMean
from scalarforge.iteration import (K1_, ONE, Mono, Z_, bump_seed, build_schedule,
                                   init_from_function, ipm_demo_seed, n_formula, n_table,
                                   next_e_J, seed_e_J, symbolic_levels)
from scalarforge.multipliers import builtin_symbol, select_direction_pair

IPM = builtin_symbol("ipm2d")
PAIR = select_direction_pair(IPM)


def test_symbolic_levels_follow_rules():
    ev, eR, eJ = symbolic_levels(0)
    assert (ev, eR, eJ) == (K1_, K1_, ONE)
    for k in range(4):
        a, b, c = symbolic_levels(k)
        a1, b1, c1 = symbolic_levels(k + 1)
        assert a1 == b and b1 == K1_ * c and c1 == c / Z_


@pytest.mark.parametrize("k", [0, 1, 2, 3, 5])
def test_n_table_matches_formula(k):
    assert n_formula(*symbolic_levels(k)) == n_table(k)
    ev, eR, eJ = symbolic_levels(k)
    assert next_e_J(ev, eR, n_table(k)) == eJ / Z_


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(1, 16))
def test_mono_exact_values(k1, z):
    Z = Fraction(z * z)     # perfect square so Z^(9/2) is rational
    K1 = Fraction(k1)
    assert n_table(2).exact(K1, Z) == K1 ** 2 * Z ** 4 * z
    assert n_table(0).exact(K1, Z) == K1 ** 2 * Z ** 2


def test_mono_pow_and_roots():
    m = Mono(Fraction(4), Fraction(2), Fraction(1))
    assert m ** Fraction(1, 2) == Mono(Fraction(2), Fraction(1), Fraction(1, 2))
    with pytest.raises(ValueError):
        Mono(Fraction(2)) ** Fraction(1, 2)


def test_schedule_values_and_intervals():
    s = build_schedule(0.1, 1.0, 0.05, 4.0, Xi_bar=24.0, k_max=2)
    assert s.N == [16.0, 256.0, 512.0]
    assert s.levels[1][3] == pytest.approx(0.1 / 4)
    for k in range(2):
        lo, hi = s.intervals[k]
        lo1, hi1 = s.intervals[k + 1]
        assert isinstance(lo1, Fraction)
        assert lo - lo1 == 4 * Fraction(s.tau_hat[k]) and hi1 - hi == 4 * Fraction(s.tau_hat[k])
    assert s.holder_ratio < 1


def test_schedule_rejects_alpha_and_small_Z():
    with pytest.raises(ConfigError):
        build_schedule(0.1, 1.0, 0.2, 4.0)
    with pytest.raises(ConfigError):
        build_schedule(0.1, 2.0, 0.05, 1.5)
    with pytest.raises(ConfigError):
        build_schedule(0.1, 1.0, 0.1, 1.01, C0=0.01)


def test_seed_zero_function():
    f, df, iv = bump_seed(lambda m: np.zeros((m, m)), amplitude=0.0, mean=0.0)
    st_ = init_from_function(f, df, IPM, PAIR, 16, iv)
    assert seed_e_J(st_, samples=9, m=16) == 0


def test_seed_defect():
    # d_l R^l reproduces d_t f + d_l(f u^l)
    n = 32
    f, df, iv = ipm_demo_seed(n)
    st_ = init_from_function(f, df, IPM, PAIR, n, iv)
    g = sc.grid(n)
    for t in (-0.6, 0.0, 0.35):
        c = f(t, n)
        u = sc.ifft_real(IPM.on_grid(g) * c[None])
        src = df(t, n) + sc.div_coeffs(sc.fft(sc.ifft_real(c)[None] * u), g)
        d = sc.div_coeffs(st_.R_at(t), g) - src
        assert np.abs(d).max() <= 1e-11
    assert 0 < seed_e_J(st_, samples=17, m=32) < 1


def test_seed_time_constant_stationary():
    # a shear cos(x2) is stationary for ipm2d (u = 0), so R vanishes
    n = 16
    g = sc.grid(n)

    def f(t, m):
        return sc.fft(np.cos(sc.grid(m).X[1]))

    def df(t, m):
        return np.zeros((m, m), dtype=complex)

    st_ = init_from_function(f, df, IPM, PAIR, n, (-1, 1))
    assert np.abs(st_.R_at(0.2)).max() < 1e-15
    assert np.abs(IPM.on_grid(g) * f(0, n)[None]).max() < 1e-15


def test_seed_mean_drift_rejected():
    def f(t, m):
        c = np.zeros((m, m), dtype=complex)
        c[0, 0] = t
        return c
    with pytest.raises(NonzeroMean):
        init_from_function(f, f, IPM, PAIR, 8, (-1, 1))
