"""Expansion of a convolution operator acting on an oscillating packet:

    T[e^{i lam xi} theta] = e^{i lam xi} (theta * K^(lam grad xi) + delta).

delta is computed by exact spectral conjugation and, as an independent check,
by quadrature of its integral representation over (r, h)."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import spectral_core as sc
from .errors import BandUnresolved
from .multipliers import Symbol


# ---------------------------------------------------------------- phases

@dataclass
class PhaseSnapshot:
    """xi(x) = lin . x + periodic(x) at one time; `per` holds coefficients."""
    lin: tuple
    per: np.ndarray

    @classmethod
    def linear(cls, lin, n):
        return cls(tuple(float(v) for v in lin), np.zeros((n, n), dtype=complex))

    @classmethod
    def from_function(cls, lin, n, f):
        g = sc.grid(n)
        return cls(tuple(float(v) for v in lin), sc.fft(f(g.X[0], g.X[1])))

    @property
    def grid(self):
        return sc.grid(self.per.shape[-1])

    def periodic_values(self):
        return sc.ifft_real(self.per)

    def grad(self):
        g = self.grid
        lin = np.asarray(self.lin)[:, None, None]
        return lin + sc.ifft_real(sc.grad_coeffs(self.per, g))

    def factor(self, lam):
        """e^{i lam xi(x)}; needs lam * lin integral so the factor is periodic."""
        ll = lam * np.asarray(self.lin)
        if np.abs(ll - np.round(ll)).max() > 1e-12:
            raise ValueError("lam * linear part must be integral for a periodic packet")
        g = self.grid
        arg = ll[0] * g.X[0] + ll[1] * g.X[1] + lam * self.periodic_values()
        return np.exp(1j * arg)

    def negate(self):
        return PhaseSnapshot(tuple(-v for v in self.lin), -self.per)

    def resample(self, n):
        return PhaseSnapshot(self.lin, sc.resample(self.per, n))


@dataclass
class WavePacket:
    phase: PhaseSnapshot
    amplitude: np.ndarray   # complex values of theta on the grid
    lam: int

    def __post_init__(self):
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError("packet frequency must be a positive integer")
        self.lam = int(self.lam)
        self.amplitude = np.asarray(self.amplitude, dtype=complex)

    @property
    def grid(self):
        return self.phase.grid

    def values(self):
        return self.phase.factor(self.lam) * self.amplitude

    def conjugate(self):
        return WavePacket(self.phase.negate(), np.conj(self.amplitude), self.lam)

    def amplitude_bandwidth(self, tol=1e-12):
        return sc.active_radius(sc.fft(self.amplitude), tol)


@dataclass
class MicrolocalExpansion:
    leading: np.ndarray
    error: np.ndarray
    method: str
    factor: np.ndarray | None = None

    def reconstruct(self):
        return self.factor * (self.leading + self.error)


# ---------------------------------------------------------------- operators

class GaussianKernel:
    """K^(xi) = exp(-|xi - c|^2 / (2 sigma^2)); K(h) = sigma^2/(2 pi) e^{-sigma^2 |h|^2/2} e^{i c.h}.

    Convention: T f(x) = int K(h) f(x - h) dh, K^(xi) = int K(h) e^{-i xi.h} dh."""

    def __init__(self, center, sigma):
        self.center = np.asarray(center, dtype=float)
        self.sigma = float(sigma)

    def symbol(self, xi):
        d0 = xi[0] - self.center[0]
        d1 = xi[1] - self.center[1]
        return np.exp(-(d0 * d0 + d1 * d1) / (2 * self.sigma ** 2))

    def spatial(self, h):
        s = self.sigma
        r2 = h[0] ** 2 + h[1] ** 2
        return s * s / (2 * np.pi) * np.exp(-0.5 * s * s * r2) * np.exp(1j * (self.center[0] * h[0] + self.center[1] * h[1]))

    def support_radius(self, rel=1e-14):
        return np.sqrt(-2.0 * np.log(rel)) / self.sigma


def _symbol_of(op):
    """(callable xi -> multiplier, is_vector) for a Symbol, BandSpec or kernel."""
    if isinstance(op, Symbol):
        return op, True
    if isinstance(op, sc.BandSpec):
        return op.profile, False
    if hasattr(op, "symbol"):
        return op.symbol, False
    raise TypeError(f"unsupported operator {op!r}")


def _check_resolved(c, tol=1e-13):
    """Abort when a packet's spectrum reaches the Nyquist region."""
    n = c.shape[-1]
    g = sc.grid(n)
    edge = (np.abs(g.K[0]) >= n / 2 - 2) | (np.abs(g.K[1]) >= n / 2 - 2)
    top = np.abs(c).max()
    if top > 0 and np.abs(c[..., edge]).max() > tol * top:
        raise BandUnresolved(f"packet spectrum reaches the grid edge (n={n})")


def apply_operator(op, values, check=True):
    g = sc.grid(values.shape[-1])
    c = sc.fft(values)
    if check:
        _check_resolved(c)
    if isinstance(op, sc.BandSpec):
        op.check_resolved(g)
    fn, vec = _symbol_of(op)
    if vec:
        return sc.ifft(op.on_grid(g) * c[None])
    return sc.ifft(fn(g.K) * c)


def expand_exact(op, packet: WavePacket) -> MicrolocalExpansion:
    """delta = e^{-i lam xi} T[e^{i lam xi} theta] - theta K^(lam grad xi), spectrally."""
    fac = packet.phase.factor(packet.lam)
    big = fac * packet.amplitude
    out = apply_operator(op, big)
    fn, vec = _symbol_of(op)
    freq = packet.lam * packet.phase.grad()
    leading = fn(freq) * packet.amplitude
    error = np.conj(fac) * out - leading
    return MicrolocalExpansion(leading, error, "exact-conjugation", fac)


# ---------------------------------------------------------------- quadrature

@dataclass
class QuadSpec:
    r_nodes: int = 8
    s_nodes: int = 8
    points: int = 64
    rel_cut: float = 1e-14
    seed: int = 0


def _hessian_coeffs(per, g):
    K = g.K
    return np.stack([-K[0] * K[0] * per, -K[0] * K[1] * per, -K[1] * K[1] * per])


def expand_quadrature(kernel, packet: WavePacket, quad: QuadSpec | None = None):
    """delta(x) = int K(h) e^{-i lam grad xi(x).h} int_0^1 d/dr[e^{i Z} theta(x - r h)] dr dh

    with Z(r, x, h) = r lam int_0^1 h^a h^b d_a d_b xi(x - s h)(1 - s) ds.  Evaluated
    at `quad.points` grid points; returns (point indices, delta at those points)."""
    quad = quad or QuadSpec()
    g = packet.grid
    lam = packet.lam
    rng = np.random.default_rng(quad.seed)
    flat = rng.choice(g.n * g.n, size=min(quad.points, g.n * g.n), replace=False)
    idx = np.unravel_index(flat, g.shape)
    xs = np.stack([g.x[idx[0]], g.x[idx[1]]], axis=1)

    grad = packet.phase.grad()[:, idx[0], idx[1]].T          # (P, 2)
    hess_c = _hessian_coeffs(packet.phase.per, g)
    kxi = sc.active_radius(packet.phase.per) if np.any(packet.phase.per) else 0
    th_c = sc.fft(packet.amplitude)
    kth = sc.active_radius(th_c)
    dth_c = sc.grad_coeffs(th_c, g)

    # h lattice: trapezoid spacing from the integrand bandwidth, truncated
    # where the kernel envelope drops below rel_cut of its peak
    R = kernel.support_radius(quad.rel_cut)
    hess_max = np.abs(sc.ifft_real(hess_c)).max() if kxi else 0.0
    fhat = lam * grad - kernel.center[None, :]
    omega = np.abs(fhat).max() + kth + lam * hess_max * R
    dh = 2 * np.pi / (omega + 9.0 * kernel.sigma)
    m = int(np.ceil(R / dh))
    hv = dh * np.arange(-m, m + 1)
    H = np.stack(np.meshgrid(hv, hv, indexing="ij")).reshape(2, -1)
    keep = H[0] ** 2 + H[1] ** 2 <= R * R
    H = H[:, keep]
    w_h = kernel.spatial(H) * dh * dh                          # (NH,)

    r_x, r_w = np.polynomial.legendre.leggauss(quad.r_nodes)
    r_x, r_w = 0.5 * (r_x + 1), 0.5 * r_w
    s_x, s_w = np.polynomial.legendre.leggauss(quad.s_nodes)
    s_x, s_w = 0.5 * (s_x + 1), 0.5 * s_w

    out = np.zeros(len(xs), dtype=complex)
    for p, x in enumerate(xs):
        # Q(x, h) = int_0^1 h^a h^b d_a d_b xi(x - s h)(1 - s) ds
        Q = np.zeros(H.shape[1])
        if kxi:
            for s, ws in zip(s_x, s_w):
                pts = (x[:, None] - s * H).T
                hh = sc.eval_points(hess_c, pts, kxi).real
                Q += ws * (1 - s) * (H[0] ** 2 * hh[0] + 2 * H[0] * H[1] * hh[1] + H[1] ** 2 * hh[2])
        base = w_h * np.exp(-1j * lam * (grad[p, 0] * H[0] + grad[p, 1] * H[1]))
        acc = np.zeros(H.shape[1], dtype=complex)
        for r, wr in zip(r_x, r_w):
            pts = (x[:, None] - r * H).T
            th = sc.eval_points(th_c, pts, kth)
            dth = sc.eval_points(dth_c, pts, kth)
            dr = np.exp(1j * r * lam * Q) * (1j * lam * Q * th - (H[0] * dth[0] + H[1] * dth[1]))
            acc += wr * dr
        out[p] = np.sum(base * acc)
    return idx, out


# ---------------------------------------------------------------- decay

def _fit_slope(lams, norms, floor=1e-13):
    lams, norms = np.asarray(lams, float), np.asarray(norms, float)
    if np.all(norms <= floor):    # round-off only: the expansion is exact
        return "exact"
    if np.any(norms <= 0):
        return float("nan")
    return float(np.polyfit(np.log(lams), np.log(norms), 1)[0])


def decay_study(phase: PhaseSnapshot, amplitude, lam_list, sym: Symbol | None = None,
                band=None, csv_path=None, workers=1):
    """Slope of log ||delta theta||_C0 against log lam.

    delta theta is the error of the band projection centred at lam * lin with
    radius lam |lin| / 2 (or `band(lam)` when given); delta u uses the drift
    symbol when `sym` is given.  Returns dict with rows and fitted slopes."""
    if len(lam_list) < 3:
        raise ValueError("decay_study needs at least three lam values")
    lin = np.asarray(phase.lin)

    def one(lam):
        b = band(lam) if band else sc.BandSpec.ball(lam * lin, 0.5 * lam * np.hypot(*lin))
        pk = WavePacket(phase, amplitude, lam)
        dth = sc.c0(expand_exact(b, pk).error)
        du = sc.c0(expand_exact(sym, pk).error) if sym is not None else float("nan")
        return lam, dth, du

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(one, lam_list))
    else:
        rows = [one(l) for l in lam_list]
    lams = [r[0] for r in rows]
    slope = _fit_slope(lams, [r[1] for r in rows])
    slope_u = _fit_slope(lams, [r[2] for r in rows]) if sym is not None else None
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "delta_theta_c0", "delta_u_c0", "slope"])
            for lam, a, b in rows:
                w.writerow([lam, repr(a), repr(b), slope])
    return {"rows": rows, "slope": slope, "slope_u": slope_u}
