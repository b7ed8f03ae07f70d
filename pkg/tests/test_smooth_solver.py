import warnings

import numpy as np
import pytest

from scalarforge import spectral_core as sc
from scalarforge.diagnostics import energy_series, hamiltonian_series, residual_defect
from scalarforge.errors import BlowUp
from scalarforge.multipliers import builtin_symbol
from scalarforge.smooth_solver import SolverConfig, evolve, evolve_window

SQG = builtin_symbol("sqg")


def _theta0(n):
    X = sc.grid(n).X
    return np.cos(X[0]) + 0.5 * np.sin(X[0] + 2 * X[1])


def test_sqg_conservation_short():
    tr = evolve(_theta0(32), SQG, SolverConfig(dt=1e-2, t_end=0.2, save_every=5))
    E = energy_series(tr.coeffs)
    H = hamiltonian_series(tr.coeffs, SQG)
    assert np.ptp(E) / E[0] < 1e-8 and np.ptp(H) / abs(H[0]) < 1e-8
    assert np.ptp(tr.coeffs[:, 0, 0].real) < 1e-15


def test_single_mode_is_stationary():
    X = sc.grid(16).X
    tr = evolve(np.cos(X[0]), SQG, SolverConfig(dt=0.1, t_end=1.0, save_every=10))
    assert np.abs(tr.coeffs[-1] - tr.coeffs[0]).max() < 1e-14


def test_residual_of_trajectory():
    tr = evolve(_theta0(32), SQG, SolverConfig(dt=1e-3, t_end=0.01, save_every=1))
    assert residual_defect(tr.times, tr.coeffs, SQG)["defect"] < 1e-5


def test_window_and_save(tmp_path):
    tr = evolve_window(_theta0(16), SQG, 0.05, dt=0.01)
    assert tr.times[0] == pytest.approx(-0.05) and tr.times[-1] == pytest.approx(0.05)
    assert len(tr.save(tmp_path)) == len(tr.times)
    assert np.allclose(sc.read_sfld(tmp_path / "theta_00005.sfld"), _theta0(16), atol=1e-14)


def test_input_checks():
    X = sc.grid(16).X
    with pytest.raises(ValueError):
        evolve(np.cos(7 * X[0]), SQG, SolverConfig(dt=0.1, t_end=1.0))
    with pytest.raises(ValueError):
        evolve(_theta0(16), SQG, SolverConfig(dt=0.3, t_end=1.0))


def test_blowup_and_cfl_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(BlowUp):
            evolve(50 * _theta0(32), SQG, SolverConfig(dt=0.5, t_end=20.0, save_every=1))
    with pytest.warns(RuntimeWarning):
        evolve(_theta0(16), SQG, SolverConfig(dt=0.5, t_end=0.5, blowup_factor=1e300))
