"""One step of the construction.

Given a compound state (theta, c V + R_J) the step adds waves
Theta = sum_I P_I[e^{i lam xi_I} theta_I] and returns theta_1 = theta + Theta
with a new compound stress c_W W + R_1, where W is the other vector of the
direction pair.  All fields are evaluated lazily in time."""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import spectral_core as sc
from .errors import BandUnresolved, DefectTooLarge, EpsilonTooLarge, PhaseEscape
from .levels import FrequencyEnergyLevels
from .multipliers import DirectionPair, Symbol, decomposition_constants
from .regularization import compute_scales, double_lowpass, effective_q
from .transport import FunctionField, TimeSeries, flow_average, solve_phase

__all__ = [
    "FrequencyEnergyLevels", "CompoundState", "FunctionState", "SteppedState",
    "EnergyProfile", "build_energy_profile", "time_partition", "solve_amplitudes",
    "StepConfig", "StepReport", "main_lemma_step", "glue_solution",
]


# ---------------------------------------------------------------- states

class CompoundState:
    """theta, c V + R_J on an n grid; lazily evaluated in time.

    Subclasses provide theta_at / c_at / R_at returning coefficients on a grid
    of size m (default the fine grid)."""

    cheap = True

    def __init__(self, n, sym: Symbol, pair: DirectionPair, tag, interval, levels=None,
                 stage=0, window=None):
        if tag not in ("A", "B"):
            raise ValueError("vector tag must be 'A' or 'B'")
        if sym.dim != 2:
            raise ValueError(f"{sym.name} is not a 2D symbol; the construction is 2D only")
        self.n = n
        self.sym = sym
        self.pair = pair
        self.tag = tag
        self.interval = (float(interval[0]), float(interval[1]))
        self.levels = levels
        self.stage = stage
        self.window = window

    @property
    def grid(self):
        return sc.grid(self.n)

    @property
    def vector(self):
        return self.pair.vector(self.tag)

    def theta_at(self, t, m=None):
        raise NotImplementedError

    def c_at(self, t, m=None):
        raise NotImplementedError

    def R_at(self, t, m=None):
        raise NotImplementedError

    def u_at(self, t, m=None):
        m = m or self.n
        return self.sym.on_grid(sc.grid(m)) * self.theta_at(t, m)[None]

    def stress_at(self, t, m=None):
        """c V + R_J as coefficients (2, m, m)."""
        V = np.asarray(self.vector)[:, None, None]
        return self.c_at(t, m)[None] * V + self.R_at(t, m)


class FunctionState(CompoundState):
    """State given by functions (t, m) -> coefficients on an m grid."""

    def __init__(self, n, sym, pair, tag, interval, theta_fn, c_fn=None, R_fn=None,
                 dtheta_fn=None, **kw):
        super().__init__(n, sym, pair, tag, interval, **kw)
        self._theta = theta_fn
        self._c = c_fn
        self._R = R_fn
        self._dtheta = dtheta_fn
        self._cache = OrderedDict()

    def _get(self, name, fn, t, m):
        key = (name, float(t), m)
        v = self._cache.get(key)
        if v is None:
            v = self._cache[key] = fn(t, m)
            if len(self._cache) > 48:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return v

    def theta_at(self, t, m=None):
        return self._get("theta", self._theta, t, m or self.n)

    def c_at(self, t, m=None):
        m = m or self.n
        if self._c is None:
            return np.zeros((m, m), dtype=complex)
        return self._get("c", self._c, t, m)

    def R_at(self, t, m=None):
        m = m or self.n
        if self._R is None:
            return np.zeros((2, m, m), dtype=complex)
        return self._get("R", self._R, t, m)

    def dtheta_at(self, t, m=None):
        if self._dtheta is None:
            return None
        return self._get("dtheta", self._dtheta, t, m or self.n)


class SteppedState(CompoundState):
    """theta_1 = theta + Theta with stress c_W W + R_1 from a finished step."""

    cheap = False

    def __init__(self, prev: CompoundState, ctx: "StepContext", levels=None):
        tag = "B" if prev.tag == "A" else "A"
        lo, hi = ctx.profile.support
        super().__init__(prev.n, prev.sym, prev.pair, tag, (lo, hi), levels,
                         prev.stage + 1, prev.window)
        self.prev = prev
        self.ctx = ctx
        self.R_table = ctx.R_table()

    def theta_at(self, t, m=None):
        m = m or self.n
        th = self.prev.theta_at(t, m)
        return th + sc.resample(self.ctx.Theta_coeffs(t), m)

    def c_at(self, t, m=None):
        m = m or self.n
        return sc.resample(self.ctx.averages(t)["c_W"], m)

    def R_at(self, t, m=None):
        m = m or self.n
        if m != self.n:
            return sc.resample(self.R_table.coeffs_at(t), m)
        return self.ctx.stress_at(t)["R1"]


# ---------------------------------------------------------------- profile

def _rho(x):
    return sc.bump(x) / sc.BUMP_MASS


def _rho_dx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = np.abs(x) < 1
    xm = x[m]
    out[m] = sc.bump(xm) * (-2 * xm / (1 - xm ** 2) ** 2) / sc.BUMP_MASS
    return out


@dataclass
class EnergyProfile:
    """e(t) with e^{1/2} = (2 K e_J)^{1/2} (eta_tau_hat * chi_{I +- 3 tau_hat})(t)."""
    interval: tuple
    tau_hat: float
    e_J: float
    K: float

    @property
    def amp(self):
        return 2.0 * self.K * self.e_J

    @property
    def _ab(self):
        return self.interval[0] - 3 * self.tau_hat, self.interval[1] + 3 * self.tau_hat

    @property
    def support(self):
        a, b = self._ab
        return a - self.tau_hat, b + self.tau_hat

    @property
    def plateau(self):
        a, b = self._ab
        return a + self.tau_hat, b - self.tau_hat

    def sqrt(self, t):
        a, b = self._ab
        th = self.tau_hat
        return math.sqrt(self.amp) * (sc.bump_cdf((t - a) / th) - sc.bump_cdf((t - b) / th))

    def sqrt_dt(self, t):
        a, b = self._ab
        th = self.tau_hat
        return math.sqrt(self.amp) / th * (_rho((t - a) / th) - _rho((t - b) / th))

    def sqrt_dt2(self, t):
        a, b = self._ab
        th = self.tau_hat
        return math.sqrt(self.amp) / th ** 2 * (_rho_dx((t - a) / th) - _rho_dx((t - b) / th))

    def value(self, t):
        return self.sqrt(t) ** 2

    def dt(self, t):
        return 2 * self.sqrt(t) * self.sqrt_dt(t)

    def measured_M(self, levels: FrequencyEnergyLevels, samples=4001):
        lo, hi = self.support
        ts = np.linspace(lo, hi, samples)
        rate = levels.Xi * levels.e_v ** 0.5
        base = levels.e_R ** 0.5
        return max(np.abs(self.sqrt(ts)).max() / base,
                   np.abs(self.sqrt_dt(ts)).max() / (rate * base),
                   np.abs(self.sqrt_dt2(ts)).max() / (rate ** 2 * base))

    def lower_bound_holds(self, e_R):
        """e >= K e_R on I +- tau_hat (which sits inside the plateau I +- 2 tau_hat)."""
        return self.amp >= self.K * e_R * (1 - 1e-12)

    def to_dict(self):
        return {"interval": list(self.interval), "tau_hat": self.tau_hat, "e_J": self.e_J,
                "K": self.K, "plateau_value": self.amp, "support": list(self.support)}


def build_energy_profile(interval, tau_hat, e_J, K) -> EnergyProfile:
    if tau_hat <= 0:
        raise ValueError("tau_hat must be positive")
    return EnergyProfile((float(interval[0]), float(interval[1])), float(tau_hat), float(e_J), float(K))


# ---------------------------------------------------------------- partition

def _chi(s):
    return 1.0 - sc.bump_cdf(6 * np.abs(s) - 3)


def _chi_ds(s):
    s = np.asarray(s, dtype=float)
    return -np.sign(s) * 6 * _rho(6 * np.abs(s) - 3)


def time_partition(s, k):
    """(eta_k(s), d eta_k / ds) for eta = chi / sqrt(sum_j chi^2(. - j)); s = t / tau."""
    s = np.asarray(s, dtype=float)
    base = np.floor(s)
    S = np.zeros_like(s)
    dS = np.zeros_like(s)
    for off in (-1, 0, 1, 2):
        c = _chi(s - base - off)
        S += c * c
        dS += 2 * c * _chi_ds(s - base - off)
    c, dc = _chi(s - k), _chi_ds(s - k)
    return c / np.sqrt(S), dc / np.sqrt(S) - 0.5 * c * dS / S ** 1.5


# ---------------------------------------------------------------- amplitudes

@dataclass
class AmplitudeSet:
    theta: dict          # k -> real values of theta_(k,+)
    eps: np.ndarray
    gamma: np.ndarray
    e: float

    def sum_sq(self):
        out = np.zeros_like(self.gamma)
        for v in self.theta.values():
            out = out + v * v
        return out


def solve_amplitudes(profile: EnergyProfile, c_tilde, c_J, tau, t, ks=None) -> AmplitudeSet:
    """theta_I = e^{1/2}(t) eta_k(t) gamma with gamma = (1 + eps)^{1/2}, eps = -(c~ + c_J) / e.

    c_tilde, c_J are grid values at time t.  Raises EpsilonTooLarge if
    |eps| > 1/2 anywhere, or if stress is present where e vanishes."""
    e = float(profile.value(t))
    w = np.real(c_tilde + c_J)
    if e <= 0:
        if np.abs(w).max(initial=0.0) > 0:
            raise EpsilonTooLarge(f"stress present at t={t:.4g} where e(t) = 0")
        eps = np.zeros_like(w)
    else:
        eps = -w / e
    top = np.abs(eps).max(initial=0.0)
    if top > 0.5:
        raise EpsilonTooLarge(f"|eps| = {top:.3g} > 1/2 at t = {t:.4g}; K too small")
    gamma = np.sqrt(1.0 + eps)
    s = t / tau
    if ks is None:
        ks = range(int(math.ceil(s - 2 / 3)), int(math.floor(s + 2 / 3)) + 1)
    amps = {}
    for k in ks:
        eta, _ = time_partition(s, k)
        if eta > 0:
            amps[k] = float(profile.sqrt(t)) * float(eta) * gamma
    return AmplitudeSet(amps, eps, gamma, e)


# ---------------------------------------------------------------- config / report

@dataclass
class StepConfig:
    B: float = 10.0
    B_lambda: float = 1.0
    K: float | None = None
    n_phase: int = 64
    n_eval: int = 32
    s_nodes: int = 8
    phase_dt: float | None = None
    max_doublings: int = 8
    clamp: bool = True
    strict: bool = False
    sample_spacing: float = 0.25       # in units of tau
    velocity_spacing: float = 1 / 16   # in units of tau (tables for stepped states)
    fd_h: float | None = None          # amplitude time derivative step
    defect_h: float | None = None      # defect time derivative step
    defect_every: int = 1
    defect_tol: float = 1e-6
    raise_on_defect: bool = False

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown step options: {sorted(bad)}")
        return cls(**d)


@dataclass
class StepReport:
    data: dict = field(default_factory=dict)

    def __getitem__(self, k):
        return self.data[k]

    def to_json(self, **kw):
        return json.dumps(_jsonable(self.data), **kw)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


# ---------------------------------------------------------------- context

_CACHE_SIZES = {"lin": 2, "avg": 64, "amp": 12, "waves": 6, "Theta": 24, "stress": 4}

def _hm1(c, g):
    """sup_k |c_k| / |k| over k != 0 (H^-1 type sup norm) and the worst mode."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(g.ksq > 0, np.abs(c) / g.kabs, 0.0)
    i = np.unravel_index(np.argmax(r), r.shape)
    return float(r[i]), (int(g.K[0][i]), int(g.K[1][i]))


def _outside_fraction(c, g, lo, hi):
    tot = (np.abs(c) ** 2).sum()
    if tot == 0:
        return 0.0
    out = (g.kabs < lo) | (g.kabs > hi)
    return float((np.abs(c[out]) ** 2).sum() / tot)


class StepContext:
    """Everything needed to evaluate one step's fields at any time."""

    def __init__(self, state: CompoundState, profile: EnergyProfile, N, lam, tau,
                 cfg: StepConfig, info):
        self.state = state
        self.profile = profile
        self.N = N
        self.lam = int(lam)
        self.tau = tau
        self.cfg = cfg
        self.info = info
        lv = state.levels
        self.scales = compute_scales(lv, N, cfg.B)
        self.q, qc = effective_q(self.scales.q, cfg.n_phase, cfg.clamp)
        self.q_x, qxc = effective_q(self.scales.q_x, cfg.n_phase, cfg.clamp)
        info.update(q_formula=self.scales.q, q=self.q, q_clamped=qc, q_x=self.q_x, q_x_clamped=qxc)
        self.direction = state.pair.direction(state.tag)
        self.V = np.asarray(state.vector, dtype=float)
        self.g = state.grid
        self.np_ = cfg.n_phase
        self.fd_h = cfg.fd_h or tau / 200
        self._cache = {kind: OrderedDict() for kind in _CACHE_SIZES}
        self._coarse_R = {}
        lo, hi = profile.support
        self.ks = list(range(int(math.ceil(lo / tau - 2 / 3)), int(math.floor(hi / tau + 2 / 3)) + 1))
        self._build_velocity()
        self._build_phases()

    # -- velocity and phases
    def _u_eps_coarse(self, t):
        th = self.state.theta_at(t, self.np_)
        th = double_lowpass(th, self.q)
        return self.state.sym.on_grid(sc.grid(self.np_)) * th[None]

    def _build_velocity(self):
        lo, hi = self.profile.support
        pad = self.tau + self.scales.eps_t
        t0, t1 = min(lo, self.ks[0] * self.tau) - pad, max(hi, self.ks[-1] * self.tau) + pad
        if self.state.cheap:
            self.u = FunctionField(self._u_eps_coarse, self.np_, cache=256)
        else:
            self.u = TimeSeries.sample(self._u_eps_coarse, t0, t1,
                                       self.cfg.velocity_spacing * self.tau)

    def _build_phases(self):
        # time step from the velocity's own time scale, capped by a transport CFL
        dt = self.cfg.phase_dt or min(self.tau, self.state.levels.tau_hat) / 40
        umax = max(float(np.abs(sc.ifft_real(self.u.coeffs_at(k * self.tau))).max()) for k in self.ks)
        if umax > 0:
            dt = min(dt, 1.0 / (umax * self.np_ / 3))
        self.phases = {}
        for k in self.ks:
            self.phases[k] = solve_phase(self.u, (k, 1), self.direction, self.tau, dt=dt)
        self.info["phase_dt"] = dt
        self.info["phase_max_gradient_offset"] = max(
            (p.max_gradient_offset() / abs(p.scale) for p in self.phases.values()), default=0.0)

    def active(self, t):
        s = t / self.tau
        return [k for k in self.ks if abs(s - k) < 2 / 3]

    def band(self, k):
        return sc.BandSpec.wave(self.lam, self.direction, 1, k % 2)

    def _lin_factor(self, k):
        def go():
            s = self.lam * 10 ** (k % 2)
            X = self.g.X
            return np.exp(1j * s * (self.direction[0] * X[0] + self.direction[1] * X[1]))
        return self._memo(("lin", k % 2), go)

    # -- averages and amplitudes
    def _memo(self, key, fn):
        """Per-kind LRU cache; fine-grid arrays are large, so the sizes stay small."""
        cache = self._cache[key[0]]
        v = cache.get(key)
        if v is None:
            v = cache[key] = fn()
            if len(cache) > _CACHE_SIZES[key[0]]:
                cache.popitem(last=False)
        else:
            cache.move_to_end(key)
        return v

    def averages(self, t):
        def go():
            st = self.state
            c_fn = lambda tt: st.c_at(tt, self.np_)
            R_fn = lambda tt: st.R_at(tt, self.np_)
            lo, hi = st.interval
            e_t = self.scales.eps_t
            ne = self.cfg.n_eval
            if t < lo - e_t or t > hi + e_t:
                z = np.zeros((ne, ne), dtype=complex)
                ct, Re = z, np.zeros((2, ne, ne), dtype=complex)
            else:
                ct = flow_average(c_fn, self.u, self.q_x, e_t, t, ne, self.cfg.s_nodes)
                Re = flow_average(R_fn, self.u, self.q_x, e_t, t, ne, self.cfg.s_nodes)
            cJ, cW = st.pair.decompose(Re, st.tag)
            return {"c_tilde": ct, "R_eps": Re, "c_J": cJ, "c_W": cW}
        return self._memo(("avg", float(t)), go)

    def w_coeffs(self, t):
        a = self.averages(t)
        return a["c_tilde"] + a["c_J"]

    def w_dt(self, t):
        h = self.fd_h
        f = self.w_coeffs
        return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)

    def amplitudes(self, t):
        def go():
            w = sc.ifft_real(sc.resample(self.w_coeffs(t), self.g.n))
            return solve_amplitudes(self.profile, w, 0 * w, self.tau, t, self.active(t))
        return self._memo(("amp", float(t)), go)

    def amplitude_dt(self, t):
        """d theta_k / dt = (e^1/2)' eta gamma + e^1/2 eta' gamma + e^1/2 eta gamma'."""
        A = self.amplitudes(t)
        if not A.theta:
            return {}
        e = A.e
        de = float(self.profile.dt(t))
        w = sc.ifft_real(sc.resample(self.w_coeffs(t), self.g.n))
        dw = sc.ifft_real(sc.resample(self.w_dt(t), self.g.n))
        if e > 0:
            dgamma = (-dw / e + w * de / e ** 2) / (2 * A.gamma)
        else:
            dgamma = np.zeros_like(w)
        sq, dsq = float(self.profile.sqrt(t)), float(self.profile.sqrt_dt(t))
        out = {}
        for k in A.theta:
            eta, deta = time_partition(t / self.tau, k)
            eta, deta = float(eta), float(deta) / self.tau
            out[k] = dsq * eta * A.gamma + sq * deta * A.gamma + sq * eta * dgamma
        return out

    # -- waves
    def phase_values(self, k, t):
        ph = self.phases[k]
        return sc.ifft_real(sc.resample(ph.periodic_at(t), self.g.n))

    def waves(self, t, with_dt=False):
        def go():
            A = self.amplitudes(t)
            out = {}
            for k, th in A.theta.items():
                ph = self.phase_values(k, t)
                fac = self._lin_factor(k) * np.exp(1j * self.lam * ph)
                band = self.band(k).on_grid(self.g)
                out[k] = {"Theta": band * sc.fft(fac * th), "fac": fac, "theta": th}
            return out
        W = self._memo(("waves", float(t)), go)
        if with_dt:
            dA = self.amplitude_dt(t)
            for k, wv in W.items():
                if "dTheta" not in wv:
                    ph = self.phases[k]
                    dxi = sc.ifft_real(sc.resample(ph.dt_periodic_at(t), self.g.n))
                    band = self.band(k).on_grid(self.g)
                    wv["dTheta"] = band * sc.fft(wv["fac"] * (1j * self.lam * dxi * wv["theta"] + dA[k]))
        return W

    def Theta_coeffs(self, t):
        """Coefficients of Theta = sum over I+ of 2 Re Theta_I."""
        def go():
            W = self.waves(t)
            n = self.g.n
            tot = np.zeros((n, n), dtype=complex)
            for wv in W.values():
                tot = tot + wv["Theta"]
            return tot + _conj_reflect(tot)
        return self._memo(("Theta", float(t)), go)

    # -- stress
    def stress_at(self, t):
        return self._memo(("stress", float(t)), lambda: self._stress(t))

    def _stress(self, t):
        st, g, m = self.state, self.g, self.state.sym.on_grid(self.g)
        th_c = st.theta_at(t)
        u_c = m * th_c[None]
        the_c = double_lowpass(th_c, self.q)
        ue_c = m * the_c[None]
        W = self.waves(t, with_dt=True)
        av = self.averages(t)
        n = g.n
        V = self.V[:, None, None]

        Th_c = self.Theta_coeffs(t)
        Th = sc.ifft_real(Th_c)
        U_c = m * Th_c[None]
        U = sc.ifft_real(U_c)
        gTh = sc.ifft_real(sc.grad_coeffs(Th_c, g))
        ue = sc.ifft_real(ue_c)
        u = sc.ifft_real(u_c)
        th = sc.ifft_real(th_c)
        the = sc.ifft_real(the_c)
        gthe = sc.ifft_real(sc.grad_coeffs(the_c, g))

        dTh_c = np.zeros((n, n), dtype=complex)
        low = np.zeros((2, n, n))
        hh = np.zeros((n, n))
        sumsq = np.zeros((n, n))
        for k, wv in W.items():
            dTh_c = dTh_c + wv["dTheta"]
            Tk = sc.ifft(wv["Theta"])
            Uk = sc.ifft(m * wv["Theta"][None])
            gTk = sc.ifft(sc.grad_coeffs(wv["Theta"], g))
            low += 2 * np.real(Tk[None] * np.conj(Uk))
            hh += 2 * np.real(np.conj(Uk[0]) * gTk[0] + np.conj(Uk[1]) * gTk[1])
            sumsq += wv["theta"] ** 2
        dTh_c = dTh_c + _conj_reflect(dTh_c)

        fT = dTh_c + sc.fft(ue[0] * gTh[0] + ue[1] * gTh[1])
        fL = sc.fft(U[0] * gthe[0] + U[1] * gthe[1])
        fH = sc.fft(U[0] * gTh[0] + U[1] * gTh[1] - hh)
        R_T = sc.ifft_real(sc.invdiv_coeffs(fT, g))
        R_L = sc.ifft_real(sc.invdiv_coeffs(fL, g))
        R_H = sc.ifft_real(sc.invdiv_coeffs(fH, g))
        R_S = low - sumsq[None] * V

        c_v = sc.ifft_real(st.c_at(t))
        R_J = sc.ifft_real(st.R_at(t))
        ct = sc.ifft_real(sc.resample(av["c_tilde"], n))
        Re = sc.ifft_real(sc.resample(av["R_eps"], n))
        R_M = (u - ue) * Th[None] + (th - the)[None] * U + (c_v - ct)[None] * V + (R_J - Re)
        R1 = R_T + R_L + R_H + R_S + R_M
        self._coarse_R[float(t)] = sc.resample(sc.fft(R1), self.np_)
        cW = sc.resample(av["c_W"], n)

        lam = self.lam
        lo, hi = lam / 3, 40 * lam
        # advective derivative of Theta along the full drift
        DtTh = sc.ifft_real(dTh_c) + u[0] * gTh[0] + u[1] * gTh[1]
        return {
            "R1": sc.fft(R1), "c_W": cW, "Theta_c": Th_c,
            "norms": {
                "R_T": sc.c0(R_T), "R_L": sc.c0(R_L), "R_H": sc.c0(R_H),
                "R_S": sc.c0(R_S), "R_M": sc.c0(R_M), "R1": sc.c0(R1),
                "c_W": sc.c0(sc.ifft_real(cW)), "R_J": sc.c0(R_J), "c": sc.c0(c_v),
                "Theta": sc.c0(Th), "grad_Theta": sc.c0(gTh), "Dt_Theta": sc.c0(DtTh),
                "W": sc.c0(sc.ifft_real(sc.invdiv_coeffs(Th_c, g))),
                "U": sc.c0(U),
                "eps": float(np.abs(self.amplitudes(t).eps).max(initial=0.0)),
            },
            "outside_annulus": max(_outside_fraction(f, g, lo, hi) for f in (fT, fL, fH)),
            "mean_Theta": abs(Th_c[0, 0]),
            "energy": {
                "half_Theta_sq": 0.5 * sc.TWO_PI ** 2 * float(np.mean(Th ** 2)),
                "e": sc.TWO_PI ** 2 * float(self.profile.value(t)),
                "sum_theta_sq_all": sc.TWO_PI ** 2 * 2 * float(np.mean(sumsq)),
                "two_e_one_plus_eps": sc.TWO_PI ** 2 * 2 * float(
                    np.mean(self.amplitudes(t).e * (1 + self.amplitudes(t).eps))) if W else 0.0,
            },
            "self_interference": self._self_interference(t, W),
        }

    def _self_interference(self, t, W):
        top = 0.0
        for k in W:
            ph = self.phases[k]
            gx = np.asarray(ph.lin)[:, None, None] + sc.ifft_real(
                sc.grad_coeffs(ph.periodic_at(t), sc.grid(ph.n)))
            mv = self.state.sym(gx)
            top = max(top, float(np.abs((mv * gx).sum(axis=0)).max() / max(np.abs(gx).max(), 1e-300)))
        return top

    # -- new state pieces
    def theta1_at(self, t):
        return self.state.theta_at(t) + self.Theta_coeffs(t)

    def defect_at(self, t, h=None):
        """H^-1 sup norm of d_t theta_1 + div(theta_1 u_1) - div(c_W W + R_1)."""
        g = self.g
        h = h or self.cfg.defect_h or self.tau / 400
        f = self.theta1_at
        dth = (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)
        th1 = f(t)
        m = self.state.sym.on_grid(g)
        u1 = sc.ifft_real(m * th1[None])
        flux = sc.fft(sc.ifft_real(th1)[None] * u1)
        S = self.stress_at(t)
        Wv = np.asarray(self.state.pair.vector("B" if self.state.tag == "A" else "A"))[:, None, None]
        new = S["c_W"][None] * Wv + S["R1"]
        D = dth + sc.div_coeffs(flux, g) - sc.div_coeffs(new, g)
        dR, _ = _hm1(sc.div_coeffs(S["R1"], g), g)
        d, mode = _hm1(D, g)
        l2 = float(np.sqrt((np.abs(D) ** 2).sum()))
        return {"defect": d, "div_R1": dR, "mode": mode, "raw_l2": l2, "mean": abs(D[0, 0])}

    def sample_times(self):
        lo, hi = self.profile.support
        dt = self.cfg.sample_spacing * self.tau
        m = max(2, int(math.ceil((hi - lo) / dt)))
        return lo + (hi - lo) * np.arange(m + 1) / m

    def R_table(self):
        ts = self.sample_times()
        data = []
        for t in ts:
            c = self._coarse_R.get(float(t))
            if c is None:
                c = sc.resample(self.stress_at(t)["R1"], self.np_)
            data.append(c)
        return TimeSeries(ts[0], ts[1] - ts[0], np.stack(data), outside="zero")


def _conj_reflect(c):
    """Coefficients of conj(f) given those of f: c(-k)^*."""
    return np.conj(np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1)))


# ---------------------------------------------------------------- step

def _resolution_limit(n, direction):
    """Largest integer lam with 40 lam |direction|_inf < n / 2."""
    d = max(abs(direction[0]), abs(direction[1]))
    lam = int(math.ceil(n / (80 * d))) - 1
    while 40 * lam * d >= n / 2:
        lam -= 1
    return lam


def _run_trial(state, profile, N, lam, tau, cfg, info):
    ctx = StepContext(state, profile, N, lam, tau, cfg, info)
    ts = ctx.sample_times()
    rows = []
    defects = []
    for i, t in enumerate(ts):
        S = ctx.stress_at(t)
        row = {"t": float(t), **S["norms"], "outside_annulus": S["outside_annulus"],
               "mean_Theta": S["mean_Theta"], "self_interference": S["self_interference"],
               **{f"energy_{k}": v for k, v in S["energy"].items()}}
        if cfg.defect_every and i % cfg.defect_every == 0 and 0 < i < len(ts) - 1:
            d = ctx.defect_at(t)
            row.update(defect=d["defect"], defect_div_R1=d["div_R1"], defect_l2=d["raw_l2"])
            defects.append(d)
        rows.append(row)
    return ctx, rows, defects


def _summarize(ctx, rows, defects, state, N, b, eJ_new, cfg):
    lv = state.levels
    key = lambda name: max((r[name] for r in rows), default=0.0)
    dt = ctx.sample_times()[1] - ctx.sample_times()[0]
    integ = lambda name: float(integrate.trapezoid([r[name] for r in rows], dx=dt))
    E_half = integ("energy_half_Theta_sq")
    E_e = integ("energy_e")
    pre_lhs = integ("energy_sum_theta_sq_all")
    pre_rhs = integ("energy_two_e_one_plus_eps")
    dmax = max((d["defect"] for d in defects), default=0.0)
    dref = max((d["div_R1"] for d in defects), default=0.0)
    rel = dmax / dref if dref > 0 else (0.0 if dmax == 0 else float("inf"))
    K1 = decomposition_constants(state.pair).K1
    R1 = key("R1")
    RJ = key("R_J")
    rep = {
        "stage": state.stage, "tag_in": state.tag, "tag_out": "B" if state.tag == "A" else "A",
        "lambda": ctx.lam, "tau": ctx.tau, "tau_hat": lv.tau_hat, "N": N, "b": b,
        "levels": lv.to_dict(), "scales": ctx.scales.to_dict(),
        "indices": ctx.ks, "interval_in": list(state.interval),
        "support_out": list(ctx.profile.support),
        "norms": {k: key(k) for k in ("R_T", "R_L", "R_H", "R_S", "R_M", "R1", "c_W", "R_J", "c",
                                      "Theta", "grad_Theta", "Dt_Theta", "W", "U", "eps")},
        "targets": {"e_J_new": eJ_new, "c_W_bound": K1 * lv.e_J},
        "ratios": {
            "R1_over_RJ": R1 / RJ if RJ > 0 else None,
            "R1_over_target": R1 / eJ_new if eJ_new > 0 else None,
            "target_ratio": eJ_new / lv.e_J,
            "Theta": key("Theta") / lv.e_R ** 0.5,
            "grad_Theta": key("grad_Theta") / (N * lv.Xi * lv.e_R ** 0.5),
            "Dt_Theta": key("Dt_Theta") / (lv.Xi * lv.e_v ** 0.5 * lv.e_R ** 0.5 / b),
            "W": key("W") / (lv.e_R ** 0.5 / (lv.Xi * N)),
        },
        "defect": {"max": dmax, "div_R1": dref, "relative": rel, "tol": cfg.defect_tol,
                   "pass": bool(rel <= cfg.defect_tol), "samples": len(defects)},
        "energy": {"int_half_Theta_sq": E_half, "int_e": E_e,
                   "bound": 0.5 * E_e + lv.e_R / N,
                   "pass": bool(abs(E_half - E_e) <= 0.5 * E_e + lv.e_R / N),
                   "pre_delta_lhs": pre_lhs, "pre_delta_rhs": pre_rhs,
                   "pre_delta_rel": abs(pre_lhs - pre_rhs) / max(abs(pre_rhs), 1e-300)},
        "mean_Theta_max": key("mean_Theta"),
        "self_interference_max": key("self_interference"),
        "outside_annulus_max": key("outside_annulus"),
        "c_W_within_bound": bool(key("c_W") <= K1 * lv.e_J * (1 + 1e-9)),
        "target_met": bool(R1 <= eJ_new),
        "samples": rows,
    }
    rep.update(ctx.info)
    return rep


def main_lemma_step(state: CompoundState, profile: EnergyProfile, N, cfg: StepConfig | None = None,
                    B_lambda=None):
    """One step; returns (new state, StepReport).

    B_lambda doubles (at most cfg.max_doublings times) until ||R_1|| <= e_J'.
    When the first lambda is not resolvable and cfg.clamp is set, lambda is
    lowered to the resolution limit and flagged; when a later doubling is not
    resolvable the last resolved trial is returned (or BandUnresolved is raised
    with cfg.strict)."""
    cfg = cfg or StepConfig()
    lv = state.levels
    if lv is None:
        raise ValueError("state has no frequency-energy levels")
    if N < (lv.e_v / lv.e_R) ** 1.5 * (1 - 1e-12):
        raise ValueError("N below (e_v/e_R)^(3/2)")
    if profile.e_J == 0:
        new = state
        return new, StepReport({"stage": state.stage, "identity": True, "target_met": True,
                                "norms": {"R1": 0.0, "Theta": 0.0}})
    b = (lv.e_v ** 0.5 / (lv.e_R ** 0.5 * N)) ** 0.5
    eJ_new = b * lv.e_R
    direction = state.pair.direction(state.tag)
    lam_max = _resolution_limit(state.n, direction)
    if lam_max < 1:
        raise BandUnresolved(f"grid n={state.n} cannot resolve any lambda")
    # consecutive parities must sit in disjoint bands
    b0, b1 = sc.BandSpec.wave(1, direction, 1, 0), sc.BandSpec.wave(1, direction, 1, 1)
    assert b0.outer_radius < float(np.hypot(*b1.center)) - b1.radius

    B_lam = cfg.B_lambda if B_lambda is None else B_lambda
    best = None
    trials = []
    clamped = False
    stop = "target_met"
    for attempt in range(cfg.max_doublings + 1):
        lam = int(math.ceil(B_lam * N * lv.Xi - 1e-9))
        if lam > lam_max:
            if best is None and cfg.clamp:
                lam, clamped = lam_max, True
                B_lam = lam / (N * lv.Xi)
            else:
                stop = "BandUnresolved"
                if cfg.strict or best is None:
                    raise BandUnresolved(f"lambda = {lam} exceeds resolution limit {lam_max} (n={state.n})")
                break
        B_eff = lam / (N * lv.Xi)
        tau = B_eff ** -0.5 * b * lv.tau_hat
        info = {"B_lambda": B_eff, "lambda_clamped": clamped, "lambda_max": lam_max}
        ctx, rows, defects = _run_trial(state, profile, N, lam, tau, cfg, info)
        rep = _summarize(ctx, rows, defects, state, N, b, eJ_new, cfg)
        trials.append({"lambda": lam, "B_lambda": B_eff, "R1": rep["norms"]["R1"]})
        best = (ctx, rep)
        if rep["target_met"]:
            stop = "target_met"
            break
        if clamped:
            stop = "BandUnresolved"
            break
        B_lam = 2 * B_eff
    else:
        stop = "max_doublings"
    ctx, rep = best
    rep["trials"] = trials
    rep["stop_reason"] = stop
    rep["profile"] = profile.to_dict()
    rep["profile"]["M"] = profile.measured_M(lv)
    rep["profile"]["lower_bound_holds"] = profile.lower_bound_holds(lv.e_R)
    if cfg.raise_on_defect and not rep["defect"]["pass"]:
        raise DefectTooLarge(f"step defect {rep['defect']['relative']:.3e} exceeds {cfg.defect_tol}")
    new = SteppedState(state, ctx)
    return new, StepReport(rep)


# ---------------------------------------------------------------- gluing

def _psi(t, T):
    """1 on |t| <= 5T/8, 0 for |t| >= 3T/4, smooth in between."""
    s = (np.abs(t) - 5 * T / 8) / (T / 8)
    return 1.0 - sc.smooth_step(s)


def _psi_dt(t, T):
    s = (np.abs(t) - 5 * T / 8) / (T / 8)
    return -np.sign(t) * sc.smooth_step_deriv(s) / (T / 8)


def glue_solution(traj, T, sym, pair, n=None):
    """Cut a smooth trajectory off in time: theta_0 = psi theta + (1 - psi) mean.

    traj: object with .times (uniform) and .coeffs (T, n, n) from smooth_solver.
    Stress R = d Delta^-1 [psi'(theta - mean) + (psi^2 - psi) div(theta u)], supported
    in 5T/8 <= |t| <= 3T/4."""
    times = np.asarray(traj.times)
    if times[0] > -T * 3 / 4 or times[-1] < T * 3 / 4:
        raise ValueError("trajectory must cover |t| <= 3T/4")
    table = TimeSeries(times[0], times[1] - times[0], np.asarray(traj.coeffs))
    n = n or table.n

    def theta(t):
        return table.coeffs_at(t)

    def theta_fn(t, m):
        c = theta(t).copy()
        mean = c[0, 0]
        c = _psi(t, T) * c
        c[0, 0] = mean
        return sc.resample(c, m)

    def R_fn(t, m):
        g = sc.grid(table.n)
        c = theta(t)
        p, dp = float(_psi(t, T)), float(_psi_dt(t, T))
        if dp == 0 and (p == 0 or p == 1):
            return np.zeros((2, m, m), dtype=complex)
        fl = c.copy()
        fl[0, 0] = 0
        u = sc.ifft_real(sym.on_grid(g) * c[None])
        flux = sc.fft(sc.ifft_real(c)[None] * u) * g.dealias_mask
        src = dp * fl + (p * p - p) * sc.div_coeffs(flux, g)
        return sc.resample(sc.invdiv_coeffs(src, g), m)

    st = FunctionState(n, sym, pair, "A", (-3 * T / 4, 3 * T / 4), theta_fn, None, R_fn,
                       window=(float(times[0]), float(times[-1])))
    st.psi = lambda t: _psi(t, T)
    return st
