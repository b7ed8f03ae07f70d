import numpy as np
import pytest
from scipy.integrate import solve_ivp

from scalarforge import spectral_core as sc
from scalarforge.errors import PhaseEscape
from scalarforge.transport import (ConstantField, FunctionField, TimeSeries, advance_flow,
                                   flow_average, solve_phase)


def _steady_shear(n=16):
    X = sc.grid(n).X
    return ConstantField.from_values(np.stack([-np.sin(X[1]), 0 * X[1]]))


def test_flow_zero_velocity():
    u = ConstantField.uniform([0.0, 0.0], 8)
    p = advance_flow(u, (0.3, np.array([1.0, 2.0])), 0.5)
    assert p.t_image == pytest.approx(0.8) and np.array_equal(p.x_image, [1.0, 2.0])


def test_flow_constant_velocity():
    u = ConstantField.uniform([0.7, -0.2], 8)
    p = advance_flow(u, (0.0, np.array([6.0, 0.1])), 1.0)
    assert np.allclose(p.x_mod, np.mod([6.7, -0.1], 2 * np.pi), atol=1e-14)


def test_flow_shear_against_adaptive_reference():
    u = _steady_shear()
    x0 = np.array([0.4, 1.3])
    p = advance_flow(u, (0.0, x0), 0.1, steps=16)
    ref = solve_ivp(lambda s, y: [-np.sin(y[1]), 0.0], (0, 0.1), x0, rtol=1e-13, atol=1e-14).y[:, -1]
    assert np.abs(p.x_image - ref).max() < 1e-8


def test_flow_rk4_order():
    X = sc.grid(16).X
    u = ConstantField.from_values(np.stack([-np.sin(X[1]), np.cos(X[0])]))
    x0 = np.array([0.4, 1.3])
    ref = advance_flow(u, (0.0, x0), 1.0, steps=512).x_image
    e1 = np.abs(advance_flow(u, (0.0, x0), 1.0, steps=8).x_image - ref).max()
    e2 = np.abs(advance_flow(u, (0.0, x0), 1.0, steps=16).x_image - ref).max()
    assert 3.5 < np.log2(e1 / e2) < 4.5


def test_phase_zero_velocity():
    u = ConstantField.uniform([0.0, 0.0], 16)
    ph = solve_phase(u, (0, 1), (1, 0), tau=0.3)
    assert np.abs(ph.coeffs).max() == 0


def test_phase_constant_velocity_closed_form():
    c = np.array([0.4, 0.3])
    u = ConstantField.uniform(c, 16)
    tau = 0.3
    ph = solve_phase(u, (1, -1), (1, 1), tau=tau)
    scale = -10
    for t in [tau - 0.15, tau, tau + 0.17]:
        per = ph.periodic_at(t)
        want = -scale * (c[0] + c[1]) * (t - tau)
        assert per[0, 0].real == pytest.approx(want, abs=1e-12)
        assert np.abs(per[1:, :]).max() + np.abs(per[0, 1:]).max() < 1e-14


def test_phase_transport_residual():
    n = 32
    u = _steady_shear(n)
    ph = solve_phase(u, (0, 1), (1, 0), tau=0.3, dt=0.3 / 200)
    g = sc.grid(n)
    uv = sc.ifft_real(u.data)
    t, h = 0.05, 1e-4
    # (d_t + u . grad) xi = 0 with xi = x1 + periodic part
    dper = (ph.periodic_at(t + h) - ph.periodic_at(t - h)) / (2 * h)
    grad = sc.ifft_real(sc.grad_coeffs(ph.periodic_at(t), g))
    res = sc.ifft_real(dper) + uv[0] * (1 + grad[0]) + uv[1] * grad[1]
    assert np.abs(res).max() <= 1e-6 * np.abs(uv).max()


def test_phase_negation():
    u = _steady_shear()
    ph = solve_phase(u, (0, 1), (1, 0), tau=0.2)
    neg = ph.negate()
    assert np.array_equal(neg.coeffs, -ph.coeffs) and neg.lin == (-1.0, -0.0)


def test_phase_escape():
    u = ConstantField.from_values(30 * np.stack([np.sin(sc.grid(16).X[1]), 0 * sc.grid(16).X[1]]))
    with pytest.raises(PhaseEscape):
        solve_phase(u, (0, 1), (1, 0), tau=2.0)


def test_flow_average_preserves_constants():
    n = 16
    u = _steady_shear(n)
    one = np.zeros((n, n), dtype=complex)
    one[0, 0] = 1
    out = flow_average(lambda t: one, u, 3, 0.05, 0.0, n_eval=16)
    assert np.abs(sc.ifft_real(out) - 1).max() < 1e-13


def test_flow_average_zero_velocity_is_mollification():
    n = 16
    u = ConstantField.uniform([0.0, 0.0], n)
    X = sc.grid(n).X
    c = sc.fft(np.cos(X[0]) + np.cos(7 * X[1]))
    out = flow_average(lambda t: c, u, 1, 0.05, 0.0, n_eval=16)
    want = c * sc.BandSpec.lowpass(1).on_grid(sc.grid(n))
    assert np.abs(out - want).max() < 1e-14


def test_flow_average_commutes_with_advective_derivative():
    # steady u: for f(t, x) = g(Phi_{-t} x) the advective derivative vanishes, so the
    # average is again advected and its advective derivative stays at quadrature level
    n = 16
    u = _steady_shear(n)
    X = sc.grid(n).X

    def field(t):
        return sc.fft(np.cos(X[0] + np.sin(X[1]) * t))

    h, t = 1e-3, 0.2
    a = [flow_average(field, u, 3, 0.05, t + s, n_eval=16) for s in (-h, 0, h)]
    dt = sc.ifft_real((a[2] - a[0]) / (2 * h))
    grad = sc.ifft_real(sc.grad_coeffs(a[1], sc.grid(16)))
    adv = dt - np.sin(X[1]) * grad[0]
    assert np.abs(adv).max() < 1e-5


def test_time_series_interpolation_and_outside():
    ts = TimeSeries.sample(lambda t: np.full((4, 4), t ** 3, dtype=complex), 0.0, 1.0, 0.1)
    assert ts.coeffs_at(0.55)[0, 0].real == pytest.approx(0.55 ** 3, abs=1e-12)
    with pytest.raises(ValueError):
        ts.coeffs_at(1.5)
    z = TimeSeries(ts.t0, ts.dt, ts.data, outside="zero")
    assert np.all(z.coeffs_at(-1.0) == 0)


def test_function_field_cache():
    calls = []
    f = FunctionField(lambda t: calls.append(t) or np.zeros((4, 4)), 4, cache=2)
    f.coeffs_at(0.1), f.coeffs_at(0.1), f.coeffs_at(0.2), f.coeffs_at(0.3), f.coeffs_at(0.1)
    assert calls == [0.1, 0.2, 0.3, 0.1]
