"""Coarse-scale flow, transported phase functions and flow averaging.

Time-dependent fields are handled as objects with a ``coeffs_at(t)`` method
returning Fourier coefficients on a (usually coarse) grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral_core as sc
from .errors import PhaseEscape
from .microlocal import PhaseSnapshot


# ---------------------------------------------------------------- time fields

class TimeSeries:
    """Coefficients sampled on a uniform time grid, 4-point Lagrange in t.

    Outside [t0, t_end] the field is either zero (``outside='zero'``) or an
    error (``outside='raise'``)."""

    def __init__(self, t0, dt, data, outside="raise"):
        self.t0, self.dt = float(t0), float(dt)
        self.data = np.asarray(data)
        self.outside = outside
        self.kmax = None

    @classmethod
    def sample(cls, fn, t0, t1, dt, outside="raise"):
        m = max(3, int(np.ceil((t1 - t0) / dt - 1e-9)))
        dt = (t1 - t0) / m
        data = np.stack([fn(t0 + j * dt) for j in range(m + 1)])
        return cls(t0, dt, data, outside)

    @property
    def t_end(self):
        return self.t0 + self.dt * (len(self.data) - 1)

    @property
    def n(self):
        return self.data.shape[-1]

    def coeffs_at(self, t):
        x = (t - self.t0) / self.dt
        m = len(self.data) - 1
        if x < -1e-9 or x > m + 1e-9:
            if self.outside == "zero":
                return np.zeros(self.data.shape[1:], dtype=self.data.dtype)
            raise ValueError(f"time {t:.6g} outside [{self.t0:.6g}, {self.t_end:.6g}]")
        j = int(np.clip(np.floor(x), 1, m - 2)) if m >= 3 else 0
        nodes = np.arange(j - 1, j + 3) if m >= 3 else np.arange(m + 1)
        out = 0.0
        for a in nodes:
            w = 1.0
            for b in nodes:
                if b != a:
                    w *= (x - b) / (a - b)
            out = out + w * self.data[a]
        return out

    def active_radius(self):
        if self.kmax is None:
            self.kmax = sc.active_radius(self.data, 1e-15)
        return self.kmax


class ConstantField:
    """Time-independent coefficients."""

    def __init__(self, coeffs):
        self.data = np.asarray(coeffs, dtype=complex)

    @classmethod
    def from_values(cls, values):
        return cls(sc.fft(np.asarray(values, dtype=float)))

    @classmethod
    def uniform(cls, vec, n):
        c = np.zeros((len(vec), n, n), dtype=complex)
        c[:, 0, 0] = vec
        return cls(c)

    @property
    def n(self):
        return self.data.shape[-1]

    def coeffs_at(self, t):
        return self.data

    def active_radius(self):
        return sc.active_radius(self.data, 1e-15)


class FunctionField:
    """Coefficients computed on demand by fn(t); recent times are cached."""

    def __init__(self, fn, n, cache=64):
        self.fn = fn
        self._n = n
        self._cache = {}
        self._order = []
        self._size = cache
        self.kmax = None

    @property
    def n(self):
        return self._n

    def coeffs_at(self, t):
        key = float(t)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = self.fn(key)
            self._order.append(key)
            if len(self._order) > self._size:
                self._cache.pop(self._order.pop(0), None)
        return hit

    def active_radius(self):
        return self.kmax


def _eval_velocity(u, t, pts):
    c = u.coeffs_at(t)
    k = u.active_radius() if hasattr(u, "active_radius") else None
    return sc.eval_points(c, pts, k).real.T           # (P, 2)


# ---------------------------------------------------------------- flow

@dataclass
class FlowPoint:
    t: float
    x: np.ndarray
    s: float
    t_image: float
    x_image: np.ndarray          # unwrapped positions

    @property
    def x_mod(self):
        return np.mod(self.x_image, 2 * np.pi)


def _rk4_flow(u, t, X, s, steps):
    h = s / steps
    tt = t
    for _ in range(steps):
        k1 = _eval_velocity(u, tt, X)
        k2 = _eval_velocity(u, tt + h / 2, X + h / 2 * k1)
        k3 = _eval_velocity(u, tt + h / 2, X + h / 2 * k2)
        k4 = _eval_velocity(u, tt + h, X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tt += h
    return X


def advance_flow(u, start, s, steps=16) -> FlowPoint:
    """Phi_s(t, x) for d/ds Phi = (1, u(Phi)); x may be a (P, 2) array of points."""
    t, x = start
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = _rk4_flow(u, t, X, s, max(1, int(steps))) if s != 0 else X.copy()
    if np.ndim(x) == 1:
        X, Y = X[0], Y[0]
    return FlowPoint(t, X, s, t + s, Y)


# ---------------------------------------------------------------- phases

class PhaseFunction:
    """xi_I(t, x) = sign * 10^[k] * direction . x + periodic part.

    The periodic part is a cubic Hermite interpolant in time of RK4 nodes; the
    stored node derivatives are the transport right-hand sides."""

    def __init__(self, index, direction, scale, times, coeffs, dcoeffs, birth):
        self.index = index
        self.direction = tuple(direction)
        self.scale = scale                       # sign * 10^[k]
        self.times = np.asarray(times)
        self.coeffs = np.asarray(coeffs)
        self.dcoeffs = np.asarray(dcoeffs)
        self.birth = birth

    @property
    def lin(self):
        return (self.scale * self.direction[0], self.scale * self.direction[1])

    @property
    def n(self):
        return self.coeffs.shape[-1]

    def _locate(self, t):
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"phase {self.index} not available at t={t:.6g}")
        j = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        h = ts[j + 1] - ts[j]
        return j, h, (t - ts[j]) / h

    def periodic_at(self, t):
        j, h, x = self._locate(t)
        h00 = 2 * x ** 3 - 3 * x ** 2 + 1
        h10 = x ** 3 - 2 * x ** 2 + x
        h01 = -2 * x ** 3 + 3 * x ** 2
        h11 = x ** 3 - x ** 2
        c, d = self.coeffs, self.dcoeffs
        return h00 * c[j] + h10 * h * d[j] + h01 * c[j + 1] + h11 * h * d[j + 1]

    def dt_periodic_at(self, t):
        j, h, x = self._locate(t)
        g00 = (6 * x ** 2 - 6 * x) / h
        g10 = 3 * x ** 2 - 4 * x + 1
        g01 = (-6 * x ** 2 + 6 * x) / h
        g11 = 3 * x ** 2 - 2 * x
        c, d = self.coeffs, self.dcoeffs
        return g00 * c[j] + g10 * d[j] + g01 * c[j + 1] + g11 * d[j + 1]

    def at(self, t, n=None) -> PhaseSnapshot:
        c = self.periodic_at(t)
        if n is not None and n != self.n:
            c = sc.resample(c, n)
        return PhaseSnapshot(self.lin, c)

    def negate(self):
        k, f = self.index
        return PhaseFunction((k, -f), self.direction, -self.scale, self.times,
                             -self.coeffs, -self.dcoeffs, self.birth)

    def max_gradient_offset(self):
        g = sc.grid(self.n)
        return max(np.abs(sc.ifft_real(sc.grad_coeffs(c, g))).max() for c in self.coeffs)


def _phase_rhs(psi, uc, direction, scale, g):
    """-(u . grad psi) - scale (u . direction), products dealiased by the 2/3 rule."""
    u = sc.ifft_real(uc)
    gp = sc.ifft_real(sc.grad_coeffs(psi, g))
    adv = sc.fft(u[0] * gp[0] + u[1] * gp[1])
    src = direction[0] * uc[0] + direction[1] * uc[1]
    return -(adv + scale * src) * g.dealias_mask


def solve_phase(u, index, direction, tau, dt=None, t_span=None, store_dt=None,
                check_plateau=True) -> PhaseFunction:
    """Transport the periodic part of xi_I by the coarse velocity u.

    index = (k, sign); linear part sign * 10^(k mod 2) * direction; the phase
    is born linear at t = k tau and solved over k tau +- 2 tau / 3."""
    k, sign = index
    scale = sign * 10 ** (k % 2)
    birth = k * tau
    lo, hi = t_span if t_span is not None else (birth - 2 * tau / 3, birth + 2 * tau / 3)
    dt = dt or tau / 40
    store_dt = store_dt or tau / 64
    g = sc.grid(u.n)
    limit = abs(scale) * float(np.hypot(*direction)) / 4

    def march(t_end):
        span = t_end - birth
        if span == 0:
            return [], [], []
        steps = max(1, int(np.ceil(abs(span) / dt)))
        h = span / steps
        every = max(1, int(round(store_dt / abs(h))))
        psi = np.zeros(g.shape, dtype=complex)
        t = birth
        ts, cs, ds = [], [], []
        for i in range(1, steps + 1):
            k1 = _phase_rhs(psi, u.coeffs_at(t), direction, scale, g)
            k2 = _phase_rhs(psi + h / 2 * k1, u.coeffs_at(t + h / 2), direction, scale, g)
            k3 = _phase_rhs(psi + h / 2 * k2, u.coeffs_at(t + h / 2), direction, scale, g)
            k4 = _phase_rhs(psi + h * k3, u.coeffs_at(t + h), direction, scale, g)
            psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = birth + i * h
            if i % every == 0 or i == steps:
                if check_plateau:
                    off = np.abs(sc.ifft_real(sc.grad_coeffs(psi, g))).max()
                    if off > limit:
                        raise PhaseEscape(
                            f"phase {index}: |grad xi - grad xi_hat| = {off:.3g} > {limit:.3g} "
                            f"at t = {t:.4g}; tau too large")
                ts.append(t)
                cs.append(psi.copy())
                ds.append(_phase_rhs(psi, u.coeffs_at(t), direction, scale, g))
        return ts, cs, ds

    zero = np.zeros(g.shape, dtype=complex)
    d0 = _phase_rhs(zero, u.coeffs_at(birth), direction, scale, g)
    tb, cb, db = march(lo)
    tf, cf, df = march(hi)
    times = tb[::-1] + [birth] + tf
    coeffs = cb[::-1] + [zero] + cf
    dco = db[::-1] + [d0] + df
    return PhaseFunction(index, direction, scale, times, coeffs, dco, birth)


# ---------------------------------------------------------------- averaging

def _s_rule(eps_t, nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    w = w * sc.bump(x)
    return eps_t * x, w / w.sum()


def flow_average(field, u, q, eps_t, t, n_eval=32, s_nodes=8, max_sub=None):
    """int (P_<=q field)(t + s, Phi_s(t, x)) eta_eps_t(s) ds on an n_eval grid.

    `field(t)` returns coefficients (scalar or stacked vector) on any grid;
    the result is returned as coefficients on the n_eval grid.  The s-rule is
    Gauss-Legendre weighted by the standard bump, normalized to total mass 1."""
    g = sc.grid(n_eval)
    pts = g.X.reshape(2, -1).T
    svals, sw = _s_rule(eps_t, s_nodes)
    max_sub = max_sub or eps_t / 2
    acc = None

    def add(j, X, tt):
        nonlocal acc
        c = field(tt)
        if not np.any(c):
            return
        c = c * sc.BandSpec.lowpass(q).on_grid(sc.grid(c.shape[-1]))
        vals = sw[j] * sc.eval_points(c, X).real
        acc = vals if acc is None else acc + vals

    for j in np.where(svals == 0)[0]:
        add(j, pts, t)
    for direction in (1, -1):
        sel = np.where(np.sign(svals) == direction)[0]
        sel = sel[np.argsort(np.abs(svals[sel]))]
        X, s_prev = pts.copy(), 0.0
        for j in sel:
            s = svals[j]
            steps = max(1, int(np.ceil(abs(s - s_prev) / max_sub)))
            X = _rk4_flow(u, t + s_prev, X, s - s_prev, steps)
            s_prev = s
            add(j, X, t + s)
    shape = (n_eval, n_eval)
    if acc is None:
        return np.zeros(np.shape(field(t))[:-2] + shape, dtype=complex)
    return sc.fft(acc.reshape(acc.shape[:-1] + shape))
