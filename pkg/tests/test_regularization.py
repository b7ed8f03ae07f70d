import numpy as np
import pytest

from scalarforge import spectral_core as sc
from scalarforge.errors import BandUnresolved
from scalarforge.levels import FrequencyEnergyLevels
from scalarforge.multipliers import builtin_symbol
from scalarforge.regularization import (compute_scales, effective_q, lowpass_level,
                                        mollification_error, mollify_state, q_cap_for)


def test_scales_example():
    s = compute_scales(FrequencyEnergyLevels(16, 1, 1, 0.5), 8, B=10)
    assert s.eps_theta == pytest.approx(1 / (10 * np.sqrt(8) * 16), rel=1e-15)
    assert s.eps_t == pytest.approx(1 / (10 * 128), rel=1e-15)
    assert s.eps_u == s.eps_theta == s.eps_x


def test_scales_need_large_N():
    with pytest.raises(ValueError):
        compute_scales(FrequencyEnergyLevels(16, 4, 1, 0.5), 2)


def test_levels_validation():
    with pytest.raises(ValueError):
        FrequencyEnergyLevels(1, 1, 1, 1)
    with pytest.raises(ValueError):
        FrequencyEnergyLevels(4, 1, 2, 1)
    assert FrequencyEnergyLevels(4, 4, 1, 1).tau_hat == pytest.approx(1 / 8)


def test_lowpass_level():
    assert lowpass_level(1 / 8) == 3 and lowpass_level(0.1) == 4


def test_q_clamping():
    assert q_cap_for(64) == 3
    assert effective_q(2, 64, False) == (2, False)
    assert effective_q(9, 64, True) == (3, True)
    with pytest.raises(BandUnresolved):
        effective_q(9, 64, False)


def test_mollify_keeps_low_modes_and_velocity():
    n = 64
    X = sc.grid(n).X
    th = sc.fft(np.cos(X[0]) + np.cos(20 * X[1]))
    sym = builtin_symbol("ipm2d")
    s = compute_scales(FrequencyEnergyLevels(2, 1, 1, 1), 1, B=2)
    te, ue, info = mollify_state(th, s, sym, clamp=True)
    assert abs(te[1, 0] - 0.5) < 1e-15 and abs(te[0, 20]) == 0
    assert np.allclose(ue, sym.on_grid(sc.grid(n)) * te[None])
    assert info["theta_minus_theta_eps_c0"] == pytest.approx(1.0, abs=1e-12)


def test_mollification_error_zero_when_unmollified():
    z = np.zeros((4, 4))
    v = np.ones((2, 4, 4))
    R = mollification_error(z + 1, z + 1, v, v, z, z, v, v, z + 2, v, (1.0, 0.0))
    assert np.abs(R).max() == 0
