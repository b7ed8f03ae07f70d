"""Periodic grids on the 2-torus, transforms, band projections, multipliers
and the inverse divergence.

Conventions
-----------
Arrays are indexed ``a[i1, i2]`` with ``x1 = 2*pi*i1/n`` and ``x2 = 2*pi*i2/n``.
Fourier coefficients are normalized so that ``f(x) = sum_k c_k exp(i k.x)``,
i.e. ``coeffs = fft2(values) / n**2``; ``cos(x1)`` has coefficient 1/2 at
``k = (+-1, 0)``.  C0 norms are grid maxima; for vector fields the C0 norm is
the maximum over points and components.
"""
from __future__ import annotations

import functools
import os
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .errors import BandUnresolved, NonzeroMean

TWO_PI = 2.0 * np.pi

_workers = {"n": None}


def set_threads(n: int | None):
    """Number of threads handed to scipy.fft; None means scipy's default."""
    _workers["n"] = None if n is None else max(1, int(n))


def get_threads():
    if _workers["n"] is None:
        env = os.environ.get("SCALARFORGE_THREADS")
        if env:
            return max(1, int(env))
    return _workers["n"]


# ---------------------------------------------------------------- bumps

def bump(t):
    """Standard mollifier profile exp(-1/(1-t^2)) on (-1, 1), zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_CDF_CELLS = 512
_CDF_NODES = np.linspace(-1.0, 1.0, _CDF_CELLS + 1)


def _cell_integrals():
    a, b = _CDF_NODES[:-1], _CDF_NODES[1:]
    half = 0.5 * (b - a)
    pts = a[:, None] + half[:, None] * (_GL_X[None, :] + 1.0)
    return (bump(pts) * _GL_W[None, :]).sum(axis=1) * half


_CUM = np.concatenate([[0.0], np.cumsum(_cell_integrals())])
BUMP_MASS = float(_CUM[-1])


def bump_cdf(t):
    """Normalized cumulative integral of `bump` from -1 to t (0 below, 1 above)."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    h = 2.0 / _CDF_CELLS
    j = np.minimum(np.floor((t + 1.0) / h).astype(int), _CDF_CELLS - 1)
    a = _CDF_NODES[j]
    half = 0.5 * (t - a)
    pts = a[..., None] + half[..., None] * (_GL_X + 1.0)
    local = (bump(pts) * _GL_W).sum(axis=-1) * half
    return (_CUM[j] + local) / BUMP_MASS


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, built from the bump CDF."""
    return bump_cdf(2.0 * np.asarray(x, dtype=float) - 1.0)


def smooth_step_deriv(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * bump(2.0 * x - 1.0) / BUMP_MASS


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class Grid:
    n: int
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise ValueError("only d = 2 grids are supported")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def max_freq(self):
        return self.n // 2 - 1

    @property
    def shape(self):
        return (self.n, self.n)

    @functools.cached_property
    def k(self):
        return np.fft.fftfreq(self.n, 1.0 / self.n)

    @functools.cached_property
    def K(self):
        k1, k2 = np.meshgrid(self.k, self.k, indexing="ij")
        return np.stack([k1, k2])

    @functools.cached_property
    def ksq(self):
        return self.K[0] ** 2 + self.K[1] ** 2

    @functools.cached_property
    def kabs(self):
        return np.sqrt(self.ksq)

    @functools.cached_property
    def x(self):
        return TWO_PI * np.arange(self.n) / self.n

    @functools.cached_property
    def X(self):
        x1, x2 = np.meshgrid(self.x, self.x, indexing="ij")
        return np.stack([x1, x2])

    @functools.cached_property
    def dealias_mask(self):
        """2/3 rule: keep |k_i| < n/3 in each direction."""
        cut = self.n / 3.0
        return (np.abs(self.K[0]) < cut) & (np.abs(self.K[1]) < cut)

    @property
    def cell_area(self):
        return (TWO_PI / self.n) ** 2


@functools.lru_cache(maxsize=None)
def grid(n: int) -> Grid:
    return Grid(int(n))


# ---------------------------------------------------------------- transforms

def fft(a):
    """Normalized forward transform over the last two axes."""
    n = a.shape[-1]
    return sfft.fft2(a, axes=(-2, -1), workers=get_threads()) / (n * n)


def ifft(c):
    n = c.shape[-1]
    return sfft.ifft2(c, axes=(-2, -1), workers=get_threads()) * (n * n)


def ifft_real(c):
    return ifft(c).real


def grad_coeffs(c, g: Grid):
    return 1j * g.K * c[None]


def div_coeffs(v, g: Grid):
    return 1j * (g.K[0] * v[0] + g.K[1] * v[1])


def invdiv_coeffs(c, g: Grid):
    """Coefficients of d^l Delta^{-1} f: symbol -i xi_l / |xi|^2, zero at xi = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(g.ksq > 0, 1.0 / g.ksq, 0.0)
    return -1j * g.K * (c * s)[None]


def resample(c, n_new: int):
    """Zero-pad or truncate coefficients to another grid size.

    Modes |k_i| <= min(n, n_new)/2 - 1 are kept; the Nyquist line is dropped."""
    n = c.shape[-1]
    if n_new == n:
        return c.copy()
    m = min(n, n_new) // 2 - 1
    idx_old = np.r_[0:m + 1, n - m:n]
    idx_new = np.r_[0:m + 1, n_new - m:n_new]
    out = np.zeros(c.shape[:-2] + (n_new, n_new), dtype=complex)
    out[..., idx_new[:, None], idx_new[None, :]] = c[..., idx_old[:, None], idx_old[None, :]]
    return out


def active_radius(c, tol=1e-14):
    """Largest |k_i| carrying a coefficient above tol * max|c|."""
    n = c.shape[-1]
    a = np.abs(c).reshape(-1, n, n).max(axis=0)
    top = a.max()
    if top == 0:
        return 0
    k = np.abs(np.fft.fftfreq(n, 1.0 / n)).astype(int)
    mask = a > tol * top
    k1 = np.broadcast_to(k[:, None], a.shape)[mask]
    k2 = np.broadcast_to(k[None, :], a.shape)[mask]
    return int(max(k1.max(), k2.max()))


def eval_points(c, pts, kmax=None):
    """Evaluate the trigonometric polynomial with coefficients c at points.

    pts has shape (P, 2).  Only modes with |k_i| <= kmax enter (detected
    automatically when kmax is None), so low-bandwidth fields are cheap."""
    n = c.shape[-1]
    if kmax is None:
        kmax = active_radius(c)
    kmax = min(kmax, n // 2 - 1)
    ks = np.arange(-kmax, kmax + 1)
    idx = ks % n
    sub = c[..., idx[:, None], idx[None, :]]
    pts = np.asarray(pts, dtype=float)
    e1 = np.exp(1j * pts[:, 0:1] * ks[None, :])
    e2 = np.exp(1j * pts[:, 1:2] * ks[None, :])
    if sub.ndim == 2:
        return np.einsum("pa,ab,pb->p", e1, sub, e2, optimize=True)
    return np.stack([np.einsum("pa,ab,pb->p", e1, s, e2, optimize=True) for s in sub])


def shift_coeffs(c, v, g: Grid):
    """Coefficients of f(x - v) for a real translation vector v."""
    return c * np.exp(-1j * (g.K[0] * v[0] + g.K[1] * v[1]))


# ---------------------------------------------------------------- fields

class SpectralField:
    """Scalar field on a grid with lazily synchronized values/coefficients."""

    def __init__(self, g: Grid, values=None, coeffs=None):
        if values is None and coeffs is None:
            raise ValueError("need values or coeffs")
        self.grid = g
        self._values = None if values is None else np.asarray(values)
        self._coeffs = None if coeffs is None else np.asarray(coeffs, dtype=complex)
        for a in (self._values, self._coeffs):
            if a is not None and a.shape != g.shape:
                raise ValueError(f"array shape {a.shape} does not match grid {g.shape}")

    @classmethod
    def from_function(cls, g: Grid, f):
        return cls(g, values=f(g.X[0], g.X[1]))

    @classmethod
    def zeros(cls, g: Grid):
        return cls(g, values=np.zeros(g.shape))

    @property
    def values(self):
        if self._values is None:
            self._values = ifft(self._coeffs)
        return self._values

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = fft(self._values)
        return self._coeffs

    def is_real(self, tol=1e-12):
        v = self.values
        if not np.iscomplexobj(v):
            return True
        scale = max(np.abs(v).max(), 1e-300)
        return np.abs(v.imag).max() <= tol * scale

    def real(self):
        return SpectralField(self.grid, values=np.real(self.values))

    def mean(self):
        return self.coeffs[0, 0]

    def c0(self):
        return float(np.abs(self.values).max())

    def l2(self):
        """(integral |f|^2 dx)^(1/2) over the torus, computed from coefficients."""
        return float(np.sqrt(TWO_PI ** 2 * (np.abs(self.coeffs) ** 2).sum()))

    def __add__(self, other):
        return SpectralField(self.grid, values=self.values + other.values)

    def __sub__(self, other):
        return SpectralField(self.grid, values=self.values - other.values)

    def __mul__(self, s):
        return SpectralField(self.grid, values=self.values * s)

    __rmul__ = __mul__


class VectorField:
    """Two-component vector field; components are SpectralFields."""

    def __init__(self, components, divergence_free=False):
        self.components = tuple(components)
        if len(self.components) != 2:
            raise ValueError("2D vector fields need two components")
        self.grid = self.components[0].grid
        self.divergence_free = divergence_free

    @classmethod
    def from_coeffs(cls, g: Grid, c, divergence_free=False):
        return cls([SpectralField(g, coeffs=c[0]), SpectralField(g, coeffs=c[1])],
                   divergence_free)

    @classmethod
    def from_values(cls, g: Grid, v, divergence_free=False):
        return cls([SpectralField(g, values=v[0]), SpectralField(g, values=v[1])],
                   divergence_free)

    def __getitem__(self, i):
        return self.components[i]

    @property
    def values(self):
        return np.stack([c.values for c in self.components])

    @property
    def coeffs(self):
        return np.stack([c.coeffs for c in self.components])

    def divergence(self):
        return SpectralField(self.grid, coeffs=div_coeffs(self.coeffs, self.grid))

    def c0(self):
        return float(np.abs(self.values).max())

    def check_divergence(self, rtol=1e-10):
        d = self.divergence().c0()
        return d <= rtol * max(self.c0(), 1e-300)


def c0(a):
    """Grid-maximum norm of an array (max over points and components)."""
    return float(np.abs(a).max()) if np.size(a) else 0.0


# ---------------------------------------------------------------- transform op

def transform(f: SpectralField, direction="forward", g: Grid | None = None):
    """Synchronize one representation from the other.

    forward: values -> coeffs; inverse: coeffs -> values.  A grid may be
    passed to assert sizes; a mismatch raises ValueError."""
    g = g or f.grid
    if g.n != f.grid.n:
        raise ValueError(f"grid size mismatch: field n={f.grid.n}, requested n={g.n}")
    if direction == "forward":
        v = np.asarray(f.values)
        if v.shape != g.shape:
            raise ValueError("values do not match grid")
        return SpectralField(g, values=v, coeffs=fft(v))
    if direction == "inverse":
        c = f.coeffs
        if c.shape != g.shape:
            raise ValueError("coeffs do not match grid")
        return SpectralField(g, values=ifft(c), coeffs=c)
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------- bands

@dataclass(frozen=True)
class BandSpec:
    """Frequency band.

    kind = 'lowpass': profile eta(2^-q xi), 1 on |xi| <= 2^q, support |xi| <= 2^(q+1).
    kind = 'ball': rescaled wave cutoff, 1 on |xi - c| <= r/2, support |xi - c| < r.
    kind = 'annulus': sharp indicator of lo <= |xi| <= hi.
    """
    kind: str
    q: int | None = None
    center: tuple = dc_field(default=(0.0, 0.0))
    radius: float = 0.0
    lo: float = 0.0
    hi: float = 0.0

    @classmethod
    def lowpass(cls, q):
        return cls("lowpass", q=int(q))

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", center=(float(center[0]), float(center[1])), radius=float(radius))

    @classmethod
    def wave(cls, lam, xi1, sign=1, parity=0):
        """P^I_{~lambda}: center sign*10^parity*lam*xi1, support radius half its length."""
        s = sign * 10 ** parity * lam
        c = (s * xi1[0], s * xi1[1])
        return cls.ball(c, 0.5 * abs(s) * float(np.hypot(*xi1)))

    @classmethod
    def annulus(cls, lo, hi):
        return cls("annulus", lo=float(lo), hi=float(hi))

    @property
    def outer_radius(self):
        if self.kind == "lowpass":
            return 2.0 ** (self.q + 1)
        if self.kind == "ball":
            return float(np.hypot(*self.center)) + self.radius
        return self.hi

    def profile(self, xi):
        """Evaluate the cutoff at continuous frequencies xi of shape (2, ...)."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "lowpass":
            r = np.hypot(xi[0], xi[1]) * 2.0 ** (-self.q)
            return 1.0 - smooth_step(r - 1.0)
        if self.kind == "ball":
            r = np.hypot(xi[0] - self.center[0], xi[1] - self.center[1]) / self.radius
            return 1.0 - smooth_step(2.0 * r - 1.0)
        if self.kind == "annulus":
            r = np.hypot(xi[0], xi[1])
            return ((r >= self.lo) & (r <= self.hi)).astype(float)
        raise ValueError(f"unknown band kind {self.kind!r}")

    def on_grid(self, g: Grid):
        return _band_on_grid(self, g.n)

    def plateau_mask(self, g: Grid):
        K = g.K
        if self.kind == "lowpass":
            return g.kabs <= 2.0 ** self.q
        if self.kind == "ball":
            return np.hypot(K[0] - self.center[0], K[1] - self.center[1]) <= 0.5 * self.radius
        return self.on_grid(g) > 0

    def support_mask(self, g: Grid):
        return self.on_grid(g) > 0

    def check_resolved(self, g: Grid):
        if self.outer_radius >= g.n / 2:
            raise BandUnresolved(
                f"band outer radius {self.outer_radius:.4g} >= n/2 = {g.n // 2}")


@functools.lru_cache(maxsize=16)
def _band_on_grid(band: BandSpec, n: int):
    g = grid(n)
    return band.profile(g.K)


def project_band(f: SpectralField, band: BandSpec) -> SpectralField:
    band.check_resolved(f.grid)
    return SpectralField(f.grid, coeffs=f.coeffs * band.on_grid(f.grid))


def project_coeffs(c, band: BandSpec, g: Grid):
    band.check_resolved(g)
    return c * band.on_grid(g)


# ---------------------------------------------------------------- operators

def apply_multiplier(f: SpectralField, sym) -> VectorField:
    """u^l = T^l[f]: hat u^l(xi) = m^l(xi) hat f(xi), with the xi = 0 mode set to 0."""
    if not f.is_real():
        raise ValueError("apply_multiplier expects a real field")
    m = sym.on_grid(f.grid)
    c = m * f.coeffs[None]
    return VectorField.from_coeffs(f.grid, c, divergence_free=sym.is_divergence_free)


def inverse_divergence(f: SpectralField, band: BandSpec | None = None, rtol=1e-12):
    """R = d^l Delta^{-1} f for zero-mean f, so that div R = f.

    When `band` is given the input must live in it (relative tolerance rtol)."""
    g = f.grid
    c = f.coeffs
    scale = max(np.abs(c).max(), 1e-300)
    if abs(c[0, 0]) > rtol * scale:
        raise NonzeroMean(f"inverse_divergence input has mean {c[0, 0]:.3e}")
    if band is not None:
        outside = np.abs(c[band.on_grid(g) == 0]).max(initial=0.0)
        if outside > rtol * scale:
            raise ValueError(f"input not supported in band (leak {outside / scale:.2e})")
    return VectorField.from_coeffs(g, invdiv_coeffs(c, g))


def inverse_divergence_gain(f: SpectralField, lam):
    """Measured C in ||R||_C0 <= C lam^-1 ||f||_C0."""
    r = inverse_divergence(f)
    return r.c0() * lam / max(f.c0(), 1e-300)


# ---------------------------------------------------------------- snapshots

SFLD_MAGIC = b"SFLD"
SFLD_VERSION = 1


def write_sfld(path, values):
    """Write an (n, n) scalar or (c, n, n) vector field as an SFLD snapshot."""
    a = np.asarray(values)
    if np.iscomplexobj(a):
        if np.abs(a.imag).max(initial=0.0) > 1e-12 * max(np.abs(a).max(initial=0.0), 1e-300):
            raise ValueError("SFLD stores real fields only")
        a = a.real
    a = np.ascontiguousarray(a, dtype="<f8")
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ValueError("SFLD fields must be square")
    with open(path, "wb") as fh:
        fh.write(SFLD_MAGIC)
        fh.write(struct.pack("<III", SFLD_VERSION, n, 2))
        fh.write(a.tobytes(order="C"))


def read_sfld(path):
    """Read an SFLD snapshot; returns (n, n) or (components, n, n) array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SFLD_MAGIC:
        raise ValueError(f"{path}: not an SFLD file")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != SFLD_VERSION:
        raise ValueError(f"{path}: unsupported SFLD version {version}")
    if d != 2:
        raise ValueError(f"{path}: only d = 2 snapshots are supported")
    data = np.frombuffer(raw[16:], dtype="<f8")
    per = n ** d
    if data.size % per:
        raise ValueError(f"{path}: payload is not a whole number of fields")
    ncomp = data.size // per
    a = data.reshape((ncomp, n, n)).copy()
    return a[0] if ncomp == 1 else a
