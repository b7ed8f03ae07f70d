"""Measurements: norms, residual defects, conserved quantities, the commutator
form of the nonlinearity, weak pairings and the degenerate-constraint functional."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from . import spectral_core as sc
from .errors import NotOdd
from .multipliers import Symbol, even_odd_split

AREA = sc.TWO_PI ** 2


# ---------------------------------------------------------------- norms

def holder_estimate(values, alpha, levels=None):
    """sup |f(x + h) - f(x)| / |h|^alpha over dyadic grid shifts h along the axes and diagonal.

    A lower estimate of the true seminorm (only grid separations are probed)."""
    v = np.asarray(values)
    n = v.shape[-1]
    dx = sc.TWO_PI / n
    levels = levels or int(np.log2(n)) - 1
    best = 0.0
    for j in range(levels):
        s = 2 ** j
        for sh, length in (((s, 0), s * dx), ((0, s), s * dx), ((s, s), s * dx * np.sqrt(2))):
            d = np.abs(np.roll(v, sh, axis=(-2, -1)) - v).max()
            best = max(best, d / length ** alpha)
    return float(best)


@dataclass
class NormsReport:
    c0: float
    grad_c0: float
    holder: dict
    interpolation_bound: dict
    advective_c0: float | None = None

    def to_dict(self):
        return asdict(self)


def norms(coeffs, alphas=(0.1,), u=None, dcoeffs=None):
    """C0, gradient C0, Holder estimates and (if u and d/dt are given) the advective derivative."""
    c = np.asarray(coeffs)
    g = sc.grid(c.shape[-1])
    vals = sc.ifft_real(c)
    gr = sc.ifft_real(sc.grad_coeffs(c, g))
    c0, g0 = sc.c0(vals), sc.c0(gr)
    hold = {str(a): holder_estimate(vals, a) for a in alphas}
    interp = {str(a): c0 ** (1 - a) * g0 ** a for a in alphas}
    adv = None
    if u is not None and dcoeffs is not None:
        adv = sc.c0(sc.ifft_real(dcoeffs) + u[0] * gr[0] + u[1] * gr[1])
    return NormsReport(c0, g0, hold, interp, adv)


# ---------------------------------------------------------------- defects

def hminus1_sup(c):
    """sup over k != 0 of |c_k| / |k| and the worst mode."""
    g = sc.grid(c.shape[-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(g.ksq > 0, np.abs(c) / g.kabs, 0.0)
    i = np.unravel_index(np.argmax(r), r.shape)
    return float(r[i]), (int(g.K[0][i]), int(g.K[1][i]))


def _flux(theta_c, sym):
    g = sc.grid(theta_c.shape[-1])
    u = sc.ifft_real(sym.on_grid(g) * theta_c[None])
    return sc.fft(sc.ifft_real(theta_c)[None] * u)


def residual_defect(times, thetas, sym: Symbol, stresses=None):
    """Weak residual of d_t theta + div(theta u) = div(S) on stored time slices.

    thetas: (T, n, n) coefficients at uniform `times`; stresses: (T, 2, n, n)
    coefficients of S = c V + R (zero when omitted).  Interior slices use the
    centred difference.  Returns dict with the H^-1 sup defect, the worst mode
    and the raw L2 defect."""
    times = np.asarray(times, dtype=float)
    thetas = np.asarray(thetas)
    if len(times) < 3:
        raise ValueError("residual_defect needs at least three time slices")
    g = sc.grid(thetas.shape[-1])
    worst, mode, l2, at = 0.0, (0, 0), 0.0, None
    for j in range(1, len(times) - 1):
        dth = (thetas[j + 1] - thetas[j - 1]) / (times[j + 1] - times[j - 1])
        D = dth + sc.div_coeffs(_flux(thetas[j], sym), g)
        if stresses is not None:
            D = D - sc.div_coeffs(np.asarray(stresses[j]), g)
        d, m = hminus1_sup(D)
        l2 = max(l2, float(np.sqrt((np.abs(D) ** 2).sum())))
        if d >= worst:
            worst, mode, at = d, m, float(times[j])
    return {"defect": worst, "mode": mode, "time": at, "raw_l2": l2}


def state_defect(state, t, h=1e-4):
    """H^-1 sup defect of a CompoundState at time t (fourth-order difference in t)."""
    g = state.grid
    f = state.theta_at
    dth = (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)
    D = dth + sc.div_coeffs(_flux(f(t), state.sym), g) - sc.div_coeffs(state.stress_at(t), g)
    d, m = hminus1_sup(D)
    return {"defect": d, "mode": m, "raw_l2": float(np.sqrt((np.abs(D) ** 2).sum()))}


def divergence_check(u_coeffs):
    """max_k |k . u_k| / ||u||_C0 (0 for a zero field)."""
    u = np.asarray(u_coeffs)
    g = sc.grid(u.shape[-1])
    top = sc.c0(sc.ifft_real(u))
    if top == 0:
        return 0.0
    return float(np.abs(g.K[0] * u[0] + g.K[1] * u[1]).max() / top)


# ---------------------------------------------------------------- conserved quantities

def energy_series(thetas):
    """E(t) = int theta^2 for each coefficient slice (Parseval)."""
    c = np.asarray(thetas)
    return AREA * (np.abs(c) ** 2).sum(axis=(-2, -1)).real


def mean_series(thetas):
    return np.asarray(thetas)[..., 0, 0].real.copy()


def odd_part_profile(sym: Symbol, tol=1e-10):
    """l(xi) with m(xi) = i l(xi) xi_perp / |xi|; raises NotOdd unless m is odd."""
    if sym.dim != 2:
        raise NotOdd(f"{sym.name} is not a 2D symbol")
    even_part, _ = sym.parity_defects()
    if even_part > tol:
        raise NotOdd(f"{sym.name} is not odd (relative even part {even_part:.2e})")

    def ell(xi):
        m = sym(xi)
        r = np.hypot(xi[0], xi[1])
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, (-1j * (m[0] * -xi[1] + m[1] * xi[0]) / r).real, 0.0)
        return out

    return ell


def hamiltonian_series(thetas, sym: Symbol):
    """H(t) = int theta L theta = (2 pi)^2 sum_{k != 0} |theta_k|^2 l(k) / |k|."""
    ell = odd_part_profile(sym)
    c = np.asarray(thetas)
    g = sc.grid(c.shape[-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(g.ksq > 0, ell(g.K) / g.kabs, 0.0)
    return AREA * (np.abs(c) ** 2 * w).sum(axis=(-2, -1)).real


def _padded_product(a_c, b_c):
    """Exact coefficients of a*b for bandlimited a, b (computed on a doubled grid)."""
    n = a_c.shape[-1]
    m = 2 * n
    p = sc.ifft_real(sc.resample(a_c, m)) * sc.ifft_real(sc.resample(b_c, m))
    return sc.fft(p)


def _pair(a_c, b_c):
    """int a b for real fields."""
    return float(AREA * np.real(np.sum(np.conj(a_c) * b_c)))


def commutator_check(theta_c, phi_c, sym: Symbol):
    """Direct N = int theta u . grad phi against the commutator form.

    For odd m the operators T^l are skew-adjoint, so
    N = 1/2 sum_l int theta (d_l phi T^l[theta] - T^l[d_l phi theta]),
    four terms in total.  Inputs are coefficient arrays of bandlimited fields;
    products are formed on a doubled grid so both sides are exact."""
    odd_part_profile(sym)
    n = theta_c.shape[-1]
    m2 = 2 * n
    g2 = sc.grid(m2)
    th = sc.resample(theta_c, m2)
    ph = sc.resample(phi_c, m2)
    M = sym.on_grid(g2)
    u = M * th[None]
    dphi = sc.grad_coeffs(ph, g2)
    direct = sum(_pair(th, sc.fft(sc.ifft_real(u[l]) * sc.ifft_real(dphi[l]))) for l in range(2))
    # on the doubled grid every product of two n-bandlimited fields is exact
    terms = []
    for l in range(2):
        a = _pair(th, sc.fft(sc.ifft_real(dphi[l]) * sc.ifft_real(u[l])))
        inner = sc.fft(sc.ifft_real(dphi[l]) * sc.ifft_real(th))
        b = _pair(th, M[l] * inner)
        terms += [0.5 * a, -0.5 * b]
    rewritten = float(sum(terms))
    diff = abs(direct - rewritten)
    scale = max(abs(direct), abs(rewritten), 1e-300)
    return {"direct": direct, "rewritten": rewritten, "abs_diff": diff, "rel_diff": diff / scale,
            "terms": terms}


# ---------------------------------------------------------------- constraint / pairing

def degenerate_constraint(f, phi, dphi_dt, sym: Symbol, xi0, t_span, n=64, tol=1e-12,
                          epsabs=1e-14, epsrel=1e-13):
    """int int f d_t phi + f T0^l[f] d_l phi dx dt, T0 with symbol (m(xi) - m(-xi))/2.

    The even part of m drops out when its image is orthogonal to xi0, since
    grad phi is parallel to xi0.  f, phi, dphi_dt: callables t -> coefficients
    on an n grid.  grad phi must be parallel to xi0 at every probed time.  The
    time integral is adaptive (scipy quad); the space integral is exact
    (Parseval / padded products)."""
    _, odd = even_odd_split(sym)
    g = sc.grid(n)
    d = np.asarray(xi0, dtype=float)
    d = d / np.hypot(*d)
    for t in np.linspace(t_span[0], t_span[1], 9):
        gp = sc.ifft_real(sc.grad_coeffs(phi(t), g))
        perp = np.abs(-d[1] * gp[0] + d[0] * gp[1]).max()
        if perp > tol * max(np.abs(gp).max(), 1.0):
            raise ValueError(f"grad phi is not parallel to xi0 (residue {perp:.2e} at t={t:.3g})")

    def lin(t):
        return _pair(f(t), dphi_dt(t))

    def quad(t):
        fc = f(t)
        Tf = odd.on_grid(g) * fc[None]
        dph = sc.grad_coeffs(phi(t), g)
        return sum(_pair(fc, sc.resample(_padded_product(Tf[l], dph[l]), n)) for l in range(2))

    L, _ = integrate.quad(lin, *t_span, epsabs=epsabs, epsrel=epsrel, limit=200)
    Q, _ = integrate.quad(quad, *t_span, epsabs=epsabs, epsrel=epsrel, limit=200)
    return {"linear": L, "quadratic": Q, "value": L + Q}


def weak_pairing(f, theta, phi, times, W=None, grad_phi_l1=None):
    """int (theta - f) phi dx dt by the trapezoid rule on `times`.

    f, theta, phi: callables t -> coefficients.  When the potentials' C0 norms
    W (one per stage) are given, also returns the bound sum(W_k) * ||grad phi||_L1."""
    times = np.asarray(times, dtype=float)
    vals = [_pair(theta(t) - f(t), phi(t)) for t in times]
    out = {"pairing": float(integrate.trapezoid(vals, times))}
    if W is not None:
        if grad_phi_l1 is None:
            def gl1(t):
                c = phi(t)
                gp = sc.ifft_real(sc.grad_coeffs(c, sc.grid(c.shape[-1])))
                return AREA * float(np.abs(gp).sum(axis=0).mean())
            grad_phi_l1 = float(integrate.trapezoid([gl1(t) for t in times], times))
        out["bound"] = float(sum(W)) * grad_phi_l1
    return out


# ---------------------------------------------------------------- output

def write_series_csv(path, columns: dict):
    keys = list(columns)
    rows = zip(*(np.asarray(columns[k]).tolist() for k in keys))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def write_json(path, obj):
    from .wave_step import _jsonable
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1)
