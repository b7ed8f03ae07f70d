"""Mollification scales, the mollified state (theta_eps, u_eps), flow-averaged
stresses and the mollification error R_M."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import spectral_core as sc
from .errors import BandUnresolved
from .levels import FrequencyEnergyLevels
from .transport import flow_average


@dataclass(frozen=True)
class MollificationScales:
    eps_theta: float
    eps_u: float
    eps_x: float
    eps_t: float
    B: float
    N: float

    @property
    def q(self):
        """Low-pass level with 2^-q <= eps."""
        return lowpass_level(self.eps_u)

    @property
    def q_x(self):
        return lowpass_level(self.eps_x)

    def to_dict(self):
        d = asdict(self)
        d.update(q=self.q, q_x=self.q_x)
        return d


def lowpass_level(eps):
    return int(math.ceil(math.log2(1.0 / eps) - 1e-12))


def compute_scales(levels: FrequencyEnergyLevels, N, B=10.0) -> MollificationScales:
    """eps_theta = eps_u = eps_x = (B N^(1/L) Xi)^-1 and eps_t = (B N Xi e_R^(1/2))^-1."""
    lv = levels
    need = (lv.e_v / lv.e_R) ** 1.5
    if N < need * (1 - 1e-12):
        raise ValueError(f"N = {N} below (e_v/e_R)^(3/2) = {need}")
    eps = 1.0 / (B * N ** (1.0 / lv.L) * lv.Xi)
    eps_t = 1.0 / (B * N * lv.Xi * lv.e_R ** 0.5)
    if not eps_t < 1.0 / (lv.Xi * lv.e_v ** 0.5):
        raise ValueError("eps_t must be below Xi^-1 e_v^-1/2")
    return MollificationScales(eps, eps, eps, eps_t, float(B), float(N))


def q_cap_for(n):
    """Largest q whose low-pass support 2^(q+1) stays inside the 2/3-rule band of an n grid."""
    return int(math.floor(math.log2(n / 3.0))) - 1


def effective_q(q, n, clamp):
    """Clamp q to the grid; returns (q_used, clamped flag)."""
    cap = q_cap_for(n)
    if q <= cap:
        return q, False
    if not clamp:
        raise BandUnresolved(f"low-pass level q = {q} (support {2 ** (q + 1)}) exceeds the n = {n} grid")
    return cap, True


def double_lowpass(c, q):
    g = sc.grid(c.shape[-1])
    p = sc.BandSpec.lowpass(q).on_grid(g)
    return c * p * p


def mollify_state(theta_c, scales: MollificationScales, sym, n_out=None, clamp=False):
    """theta_eps = P_<=q^2 theta, u_eps = T[theta_eps] (multipliers commute).

    theta_c are coefficients on the fine grid; results live on an n_out grid
    (default: the same grid).  With clamp=True a q beyond the n_out grid is
    lowered to the grid limit and flagged.  Returns (theta_eps, u_eps, info)."""
    n = theta_c.shape[-1]
    n_out = n_out or n
    q, clamped = effective_q(scales.q, n_out, clamp)
    th_fine = double_lowpass(theta_c, q)
    th_eps = sc.resample(th_fine, n_out)
    u_eps = sym.on_grid(sc.grid(n_out)) * th_eps[None]
    err = sc.c0(sc.ifft_real(theta_c - th_fine))
    return th_eps, u_eps, {"q": q, "q_clamped": clamped, "theta_minus_theta_eps_c0": err}


def regularize_stress(c_fn, R_fn, u, scales: MollificationScales, t, n_eval=32, q=None,
                      s_nodes=8):
    """(c~, R_eps) at time t: flow averages of c and R_J on an n_eval grid."""
    q = scales.q_x if q is None else q
    ct = flow_average(c_fn, u, q, scales.eps_t, t, n_eval, s_nodes)
    Rt = flow_average(R_fn, u, q, scales.eps_t, t, n_eval, s_nodes)
    return ct, Rt


def mollification_error(theta, theta_eps, u, u_eps, c, c_tilde, R, R_eps, Theta, U, V):
    """R_M = (u - u_eps) Theta + (theta - theta_eps) U + (c - c~) V + (R_J - R_eps), as values."""
    V = np.asarray(V, dtype=float)[:, None, None]
    return ((u - u_eps) * Theta[None] + (theta - theta_eps)[None] * U
            + (c - c_tilde)[None] * V + (R - R_eps))
