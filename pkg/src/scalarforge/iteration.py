"""The outer loop: seed state from a conserved f, level schedule, and staged runs."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import spectral_core as sc
from .errors import ConfigError, NonzeroMean, ScalarForgeError
from .levels import FrequencyEnergyLevels
from .multipliers import DirectionPair, Symbol, decomposition_constants
from .wave_step import FunctionState, StepConfig, build_energy_profile, main_lemma_step

__all__ = ["init_from_function", "bump_seed", "ipm_demo_seed", "expression_seed", "snapshot_seed", "measure_xi_bar", "seed_e_J", "Mono", "IterationSchedule",
           "build_schedule", "run"]


# ---------------------------------------------------------------- seed

def _zeta(t):
    """Smooth time bump with support [-1, 1] and peak 1 at t = 0."""
    return np.e * sc.bump(t)


def _zeta_dt(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(np.abs(t) < 1, _zeta(t) * (-2 * t / (1 - t * t) ** 2), 0.0)
    return d


def bump_seed(shape, amplitude=0.05, mean=0.3):
    """f = mean + a zeta(t) g(x) as (f(t, m), df/dt(t, m), support) coefficient maps.

    shape(m) returns the coefficients of g on an m grid; its mean is removed."""
    cache = {}

    def g(m):
        if m not in cache:
            c = np.array(shape(m), dtype=complex)
            c[0, 0] = 0
            cache[m] = c
        return cache[m]

    def f(t, m):
        c = amplitude * float(_zeta(t)) * g(m)
        c[0, 0] += mean
        return c

    def df(t, m):
        return amplitude * float(_zeta_dt(t)) * g(m)

    return f, df, (-1.0, 1.0)


def ipm_demo_seed(n=None, amplitude=0.05, mean=0.3):
    """zeta(t) (cos x1 + 0.5 cos(x1 + x2)) scaled by `amplitude` around `mean`."""
    def shape(m):
        X = sc.grid(m).X
        return sc.fft(np.cos(X[0]) + 0.5 * np.cos(X[0] + X[1]))
    return bump_seed(shape, amplitude, mean)


def expression_seed(expr, amplitude=0.05, mean=0.3):
    from .multipliers import parse_expression
    fn = parse_expression(expr, variables=("x1", "x2"))

    def shape(m):
        X = sc.grid(m).X
        v = np.real(np.broadcast_to(fn(X[0], X[1]), X[0].shape))
        return sc.fft(v)
    return bump_seed(shape, amplitude, mean)


def snapshot_seed(path, amplitude=1.0, mean=0.0):
    vals = sc.read_sfld(path)
    base = sc.fft(np.asarray(vals, dtype=float))
    return bump_seed(lambda m: sc.resample(base, m), amplitude, mean)


def init_from_function(f, df, sym: Symbol, pair: DirectionPair, n, interval, check_times=17,
                       tol=1e-12, tag="A"):
    """Seed state (f, c = 0, R = grad Delta^-1 [d_t f + div(f u)]).

    f(t, m), df(t, m) return coefficients on an m grid.  The mean of f must be
    constant in time.  Levels are left unset; see measure_levels."""
    ts = np.linspace(interval[0], interval[1], check_times)
    means = np.array([f(t, 8)[0, 0].real for t in ts])
    drift = float(np.abs(means - means[0]).max())
    if drift > tol * max(1.0, abs(means[0])):
        raise NonzeroMean(f"mean of f drifts by {drift:.3e} in time")

    def R_fn(t, m):
        if not (interval[0] <= t <= interval[1]):
            return np.zeros((2, m, m), dtype=complex)
        g = sc.grid(m)
        c = f(t, m)
        u = sc.ifft_real(sym.on_grid(g) * c[None])
        src = df(t, m) + sc.div_coeffs(sc.fft(sc.ifft_real(c)[None] * u), g)
        return sc.invdiv_coeffs(src, g)

    return FunctionState(n, sym, pair, tag, interval, f, None, R_fn, dtheta_fn=df)


def _grad_c0(c, g, order):
    """max over all order-th partial derivatives of the C0 norm (c may be vector)."""
    parts = [c]
    for _ in range(order):
        parts = [p * (1j * K) for p in parts for K in (g.K[0], g.K[1])]
    return max(sc.c0(sc.ifft_real(p)) for p in parts)


def measure_xi_bar(state, e_v, e_R, e_J, samples=33, m=64, h=None):
    """Smallest Xi >= 2 such that the L = 2 level bounds hold on sampled times.

    Advective derivatives use centered differences in t (step h)."""
    lo, hi = state.interval
    h = h or (hi - lo) * 1e-4
    g = sc.grid(m)
    sym = state.sym
    need = [2.0]
    for t in np.linspace(lo, hi, samples):
        th = state.theta_at(t, m)
        u = sym.on_grid(g) * th[None]
        R = state.R_at(t, m)
        c = state.c_at(t, m)
        uv = sc.ifft_real(u)

        def adv(F, Fp, Fm):
            dF = (Fp - Fm) / (2 * h)
            if F.ndim == 2:
                gr = sc.ifft_real(sc.grad_coeffs(F, g))
                return sc.fft(sc.ifft_real(dF) + uv[0] * gr[0] + uv[1] * gr[1])
            out = []
            for comp in range(F.shape[0]):
                gr = sc.ifft_real(sc.grad_coeffs(F[comp], g))
                out.append(sc.fft(sc.ifft_real(dF[comp]) + uv[0] * gr[0] + uv[1] * gr[1]))
            return np.stack(out)

        thp, thm = state.theta_at(t + h, m), state.theta_at(t - h, m)
        Du = adv(u, sym.on_grid(g) * thp[None], sym.on_grid(g) * thm[None])
        DR = adv(R, state.R_at(t + h, m), state.R_at(t - h, m))
        Dc = adv(c, state.c_at(t + h, m), state.c_at(t - h, m))
        for k in (1, 2):
            v = _grad_c0(u, g, k) + _grad_c0(th, g, k)
            need.append((v / e_v ** 0.5) ** (1 / k))
            need.append((_grad_c0(R, g, k) / e_J) ** (1 / k))
            need.append((_grad_c0(c, g, k) / e_R) ** (1 / k))
        for k in (0, 1):
            need.append((_grad_c0(Du, g, k) / e_v) ** (1 / (k + 1)))
            need.append((_grad_c0(DR, g, k) / (e_v ** 0.5 * e_J)) ** (1 / (k + 1)))
            need.append((_grad_c0(Dc, g, k) / (e_v ** 0.5 * e_R)) ** (1 / (k + 1)))
    return float(max(need))


def seed_e_J(state, samples=65, m=64):
    lo, hi = state.interval
    return max(sc.c0(sc.ifft_real(state.R_at(t, m))) for t in np.linspace(lo, hi, samples))


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class Mono:
    """coef * K1^a * Z^b with exact rational coefficient and exponents."""
    coef: Fraction
    a: Fraction = Fraction(0)
    b: Fraction = Fraction(0)

    def __mul__(self, o):
        if not isinstance(o, Mono):
            o = Mono(Fraction(o))
        return Mono(self.coef * o.coef, self.a + o.a, self.b + o.b)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if not isinstance(o, Mono):
            o = Mono(Fraction(o))
        return Mono(self.coef / o.coef, self.a - o.a, self.b - o.b)

    def __pow__(self, p):
        p = Fraction(p)
        if p.denominator == 1:
            coef = self.coef ** p.numerator
        else:
            coef = _exact_root(self.coef ** p.numerator, p.denominator)
        return Mono(coef, self.a * p, self.b * p)

    def value(self, K1, Z):
        return float(self.coef) * float(K1) ** float(self.a) * float(Z) ** float(self.b)

    def exact(self, K1, Z):
        """Exact Fraction value when K1, Z are rational and the powers are rational."""
        return self.coef * _frac_pow(Fraction(K1), self.a) * _frac_pow(Fraction(Z), self.b)


def _exact_root(x: Fraction, q: int) -> Fraction:
    def iroot(v):
        r = round(v ** (1.0 / q)) if v else 0
        for c in (r - 1, r, r + 1):
            if c >= 0 and c ** q == v:
                return c
        raise ValueError(f"{x} has no exact rational {q}-th root")
    return Fraction(iroot(x.numerator), iroot(x.denominator))


def _frac_pow(x: Fraction, p: Fraction) -> Fraction:
    base = x ** p.numerator if p.numerator >= 0 else 1 / x ** (-p.numerator)
    return _exact_root(base, p.denominator) if p.denominator != 1 else base


K1_ = Mono(Fraction(1), Fraction(1))
Z_ = Mono(Fraction(1), Fraction(0), Fraction(1))
ONE = Mono(Fraction(1))


def symbolic_levels(k):
    """(e_v, e_R, e_J) at stage k in units of e_J0, as monomials in K1, Z."""
    ev, eR, eJ = K1_, K1_, ONE
    for _ in range(k):
        ev, eR, eJ = eR, K1_ * eJ, eJ / Z_
    return ev, eR, eJ


def n_formula(ev, eR, eJ):
    """N = (e_v/e_R)^(1/2) (e_R/e_J)^2 Z^2, the choice making e_J' = e_J / Z."""
    return (ev / eR) ** Fraction(1, 2) * (eR / eJ) ** 2 * Z_ ** 2


def n_table(k):
    if k == 0:
        return K1_ ** 2 * Z_ ** 2
    if k == 1:
        return K1_ ** 2 * Z_ ** 4
    return K1_ ** 2 * Z_ ** Fraction(9, 2)


def next_e_J(ev, eR, N):
    """(e_v^(1/2) / (e_R^(1/2) N))^(1/2) e_R."""
    return (ev ** Fraction(1, 2) / (eR ** Fraction(1, 2) * N)) ** Fraction(1, 2) * eR


@dataclass
class IterationSchedule:
    e_J0: float
    K1: float
    Z: float
    Y: float
    C0: float
    alpha: float
    Xi_bar: float
    levels: list = field(default_factory=list)
    N: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    tau_hat: list = field(default_factory=list)
    holder_ratio: float = 0.0

    def stage_levels(self, k) -> FrequencyEnergyLevels:
        Xi, ev, eR, eJ = self.levels[k]
        return FrequencyEnergyLevels(Xi, ev, eR, eJ)

    def total_growth(self):
        return 4 * sum(self.tau_hat)

    def to_dict(self):
        return {"e_J0": self.e_J0, "K1": self.K1, "Z": self.Z, "Y": self.Y, "C0": self.C0,
                "alpha": self.alpha, "Xi_bar": self.Xi_bar,
                "levels": [dict(zip(("Xi", "e_v", "e_R", "e_J"), lv)) for lv in self.levels],
                "N": self.N, "tau_hat": self.tau_hat,
                "intervals": [[float(a), float(b)] for a, b in self.intervals],
                "holder_ratio": self.holder_ratio, "total_growth": self.total_growth()}


def build_schedule(e_J0, K1, alpha, Z, Y=1.0, Xi_bar=2.0, k_max=2, C0=1.0, interval=(-1.0, 1.0),
                   check_alpha=True) -> IterationSchedule:
    """Stage table for k = 0..k_max.

    Levels follow e_v' = e_R, e_R' = K1 e_J, e_J' = e_J / Z, Xi' = C0 N Xi with
    Xi_0 = Y Xi_bar; intervals grow by 4 tau_hat per stage."""
    if alpha >= Fraction(1, 9):
        raise ConfigError(f"alpha = {alpha} must be below 1/9")
    if Z < K1:
        raise ConfigError(f"Z = {Z} must be at least K1 = {K1}")
    ratio = Z ** (4.5 * alpha - 0.5) / (K1 ** (2 * alpha) * C0 ** alpha)
    if check_alpha and not ratio < 1:
        raise ConfigError(f"Z = {Z} too small for alpha = {alpha}: geometric ratio {ratio:.3g} >= 1")
    sch = IterationSchedule(e_J0, K1, Z, Y, C0, alpha, Xi_bar, holder_ratio=ratio)
    Xi = Y * Xi_bar
    lo, hi = Fraction(interval[0]), Fraction(interval[1])
    for k in range(k_max + 1):
        ev, eR, eJ = (m.value(K1, Z) * e_J0 for m in symbolic_levels(k))
        N = n_table(k).value(K1, Z)
        sch.levels.append((Xi, ev, eR, eJ))
        sch.N.append(N)
        sch.intervals.append((lo, hi))
        th = 1.0 / (Xi * ev ** 0.5)
        sch.tau_hat.append(th)
        lo, hi = lo - 4 * Fraction(th), hi + 4 * Fraction(th)
        Xi = C0 * N * Xi
    return sch


# ---------------------------------------------------------------- run

def run(state0, schedule: IterationSchedule, k_max, cfg: StepConfig | None = None, K=None,
        out_dir=None, log=None):
    """Run stages 0..k_max-1; returns (states, manifest dict).

    Any construction error stops the run and is recorded with its stage index."""
    cfg = cfg or StepConfig()
    K = K or cfg.K or decomposition_constants(state0.pair).K0
    states = [state0]
    stages = []
    manifest = {"schedule": schedule.to_dict(), "k_max": k_max, "K": K, "stages": stages,
                "step_config": cfg.__dict__.copy()}
    st = state0
    for k in range(k_max):
        lv = schedule.stage_levels(k)
        st.levels = lv
        lo, hi = schedule.intervals[k]
        # e^(1/2) ~ (2K e_J)^(1/2) with the e_J handed over by the previous stage,
        # e_J,k-1 = e_R,k / K1 (e_J0 at k = 0), so that e >= K e_R on I
        prof = build_energy_profile((float(lo), float(hi)), lv.tau_hat, lv.e_R / schedule.K1, K)
        t0 = time.perf_counter()
        try:
            new, rep = main_lemma_step(st, prof, schedule.N[k], cfg)
        except ScalarForgeError as exc:
            stages.append({"stage": k, "error": exc.to_dict()})
            if log:
                log(f"stage {k}: {exc.code}: {exc}")
            break
        rep.data["runtime_s"] = time.perf_counter() - t0
        rep.data["R_in_over_e_J"] = rep["norms"]["R_J"] / lv.e_J
        stages.append(rep.data)
        if log:
            log(f"stage {k}: lambda={rep['lambda']} ||R_J||={rep['norms']['R_J']:.3e} "
                f"||R_1||={rep['norms']['R1']:.3e} target={rep['targets']['e_J_new']:.3e} "
                f"({rep.data['runtime_s']:.1f}s)")
        if out_dir is not None:
            p = Path(out_dir)
            p.mkdir(parents=True, exist_ok=True)
            (p / f"stage_{k}.json").write_text(rep.to_json(indent=1))
        states.append(new)
        st = new
    c0m = measured_C0(manifest)
    if c0m:
        # the bookkeeping condition re-checked with the empirical constant
        C0 = max(c0m)
        manifest["C0_measured"] = c0m
        manifest["holder_ratio_measured"] = (schedule.Z ** (4.5 * schedule.alpha - 0.5)
                                             / (schedule.K1 ** (2 * schedule.alpha) * C0 ** schedule.alpha))
    if out_dir is not None:
        from .wave_step import _jsonable
        slim = dict(manifest)
        slim["stages"] = [{k: v for k, v in s.items() if k != "samples"} for s in stages]
        (Path(out_dir) / "manifest.json").write_text(json.dumps(_jsonable(slim), indent=1))
    return states, manifest


def measured_C0(manifest):
    """Empirical C0: lambda / (N Xi) actually used per stage (frequency growth constant)."""
    out = []
    for s, lv in zip(manifest["stages"], manifest["schedule"]["levels"]):
        if "lambda" in s:
            out.append(s["lambda"] * 40 / (s["N"] * lv["Xi"]))
    return out
