"""Reference pseudo-spectral evolution of smooth active scalars,
d_t theta + div(T[theta] theta) = 0, RK4 in time with 2/3 dealiasing."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spectral_core as sc
from .errors import BlowUp
from .multipliers import Symbol


@dataclass
class SolverConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    t_start: float = 0.0
    save_every: int = 10
    nu_h: float = 0.0            # hyperviscosity coefficient
    order: int = 4               # hyperviscosity order: -nu_h (-Delta)^order
    blowup_factor: float = 1e6
    cfl_limit: float = 0.5


@dataclass
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray           # (T, n, n)
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.coeffs.shape[-1]

    def values(self, j):
        return sc.ifft_real(self.coeffs[j])

    def save(self, out_dir, stem="theta"):
        """SFLD snapshot per saved slice plus a times file."""
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        names = []
        for j in range(len(self.times)):
            name = f"{stem}_{j:05d}.sfld"
            sc.write_sfld(p / name, self.values(j))
            names.append(name)
        np.savetxt(p / f"{stem}_times.txt", self.times)
        return names


def _rhs(c, M, mask, g):
    u = sc.ifft_real(M * c[None])
    th = sc.ifft_real(c)
    flux = sc.fft(th[None] * u)
    return -sc.div_coeffs(flux, g) * mask


def evolve(theta0, sym: Symbol, cfg: SolverConfig | None = None) -> Trajectory:
    """theta0: real values or coefficients (complex) on an n grid."""
    cfg = cfg or SolverConfig()
    th0 = np.asarray(theta0)
    c = th0.astype(complex) if np.iscomplexobj(th0) else sc.fft(th0)
    n = c.shape[-1]
    g = sc.grid(n)
    mask = g.dealias_mask
    if np.abs(c * ~mask).max() > 1e-12 * max(np.abs(c).max(), 1e-300):
        raise ValueError("initial data must be bandlimited below the 2/3 cutoff")
    M = sym.on_grid(g)
    span = cfg.t_end - cfg.t_start
    steps = int(round(abs(span) / cfg.dt))
    if steps == 0 or abs(steps * cfg.dt - abs(span)) > 1e-9 * max(1.0, abs(span)):
        raise ValueError("t_end - t_start must be a positive multiple of dt")
    h = np.sign(span) * cfg.dt
    damp = None
    if cfg.nu_h:
        damp = np.exp(-cfg.nu_h * g.ksq ** cfg.order * abs(h))

    umax = sc.c0(sc.ifft_real(M * c[None]))
    cfl = abs(h) * umax * g.max_freq
    if cfl > cfg.cfl_limit:
        warnings.warn(f"CFL number {cfl:.3g} exceeds {cfg.cfl_limit}", RuntimeWarning, stacklevel=2)

    ref = max(np.sqrt((np.abs(c) ** 2).sum()), 1e-300)
    times, out = [cfg.t_start], [c.copy()]
    t = cfg.t_start
    for i in range(1, steps + 1):
        k1 = _rhs(c, M, mask, g)
        k2 = _rhs(c + h / 2 * k1, M, mask, g)
        k3 = _rhs(c + h / 2 * k2, M, mask, g)
        k4 = _rhs(c + h * k3, M, mask, g)
        c = c + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if damp is not None:
            c = c * damp
        t = cfg.t_start + i * h
        if i % cfg.save_every == 0 or i == steps:
            size = np.sqrt((np.abs(c) ** 2).sum())
            if not np.isfinite(size) or size > cfg.blowup_factor * ref:
                raise BlowUp(f"norm grew by more than {cfg.blowup_factor:g} at t = {t:.4g}")
            times.append(t)
            out.append(c.copy())
    return Trajectory(np.array(times), np.stack(out),
                      {"sym": sym.name, "n": n, "dt": cfg.dt, "cfl": cfl, "nu_h": cfg.nu_h})


def evolve_window(theta0, sym: Symbol, T, dt=1e-3, save_every=1, **kw) -> Trajectory:
    """Trajectory on [-T, T] through theta0 at t = 0 (backward and forward runs)."""
    fw = evolve(theta0, sym, SolverConfig(dt=dt, t_end=T, save_every=save_every, **kw))
    bw = evolve(theta0, sym, SolverConfig(dt=dt, t_end=-T, save_every=save_every, **kw))
    times = np.concatenate([bw.times[::-1], fw.times[1:]])
    coeffs = np.concatenate([bw.coeffs[::-1], fw.coeffs[1:]])
    return Trajectory(times, coeffs, dict(fw.meta, window=[-T, T]))
