"""Command-line entry point: run, step, validate-microlocal, smooth-run, diagnose, glue.

Every subcommand writes JSON/CSV/SFLD artifacts under --out and exits 0 iff
its asserted invariants pass.  Errors are reported as one JSON object on
stderr with a nonzero exit code."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import spectral_core as sc
from .config import ExperimentConfig, load_config, make_symbol
from .errors import ConfigError, NotOdd, ScalarForgeError

log = logging.getLogger("scalarforge")


def _write_json(path, obj):
    from .wave_step import _jsonable
    Path(path).write_text(json.dumps(_jsonable(obj), indent=1))


def _out(args, cfg):
    p = Path(args.out or cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _seed_functions(cfg: ExperimentConfig):
    from .iteration import expression_seed, ipm_demo_seed, snapshot_seed
    s = cfg.seed_field
    if s.kind == "ipm-demo":
        return ipm_demo_seed(cfg.n, s.amplitude, s.mean)
    if s.kind == "expression":
        return expression_seed(s.expr, s.amplitude, s.mean)
    return snapshot_seed(s.path, s.amplitude, s.mean)


def build_seed(cfg: ExperimentConfig):
    """(seed state, schedule) for the configured symbol and seed field."""
    from .iteration import build_schedule, init_from_function, measure_xi_bar, seed_e_J
    from .multipliers import decomposition_constants, select_direction_pair
    sym = make_symbol(cfg)
    pair = select_direction_pair(sym)
    f, df, interval = _seed_functions(cfg)
    state = init_from_function(f, df, sym, pair, cfg.n, interval)
    e_J0 = seed_e_J(state)
    if e_J0 == 0:
        return state, None
    K1 = cfg.K1 or decomposition_constants(pair).K1
    xi_bar = measure_xi_bar(state, K1 * e_J0, K1 * e_J0, e_J0)
    sch = build_schedule(e_J0, K1, cfg.alpha, cfg.Z, cfg.Y, xi_bar, max(cfg.k_max, 1), cfg.C0, interval)
    return state, sch


# ---------------------------------------------------------------- subcommands

def cmd_run(args, cfg):
    from .iteration import run
    out = _out(args, cfg)
    state, sch = build_seed(cfg)
    k_max = cfg.k_max
    if sch is None or k_max == 0:
        _write_json(out / "manifest.json", {"k_max": k_max, "stages": [], "note": "seed only"})
        return 0
    states, man = run(state, sch, k_max, cfg.step, cfg.K, out_dir=out, log=log.info)
    for s in man["stages"]:
        if "error" in s:
            _write_json(out / f"stage_{s['stage']}.json", s)
    ok = len(man["stages"]) == k_max and all(
        "error" not in s and s["defect"]["pass"] and s["energy"]["pass"] and s["c_W_within_bound"]
        for s in man["stages"])
    # mean of every partial sum against the seed
    lo, hi = sch.intervals[0]
    ts = np.linspace(float(lo), float(hi), 9)
    means = [[float(st.theta_at(t, 16)[0, 0].real) for t in ts] for st in states]
    drift = float(np.ptp(np.array(means)))
    _write_json(out / "means.json", {"times": ts, "means": means, "drift": drift})
    return 0 if ok and drift <= 1e-13 else 1


def cmd_step(args, cfg):
    from .wave_step import build_energy_profile, main_lemma_step
    out = _out(args, cfg)
    state, sch = build_seed(cfg)
    if sch is None:
        _write_json(out / "step_report.json", {"identity": True})
        return 0
    lv = sch.stage_levels(0)
    state.levels = lv
    K = cfg.K or cfg.step.K
    if K is None:
        from .multipliers import decomposition_constants
        K = decomposition_constants(state.pair).K0
    prof = build_energy_profile(sch.intervals[0], lv.tau_hat, lv.e_R / sch.K1, K)
    new, rep = main_lemma_step(state, prof, sch.N[0], cfg.step)
    (out / "step_report.json").write_text(rep.to_json(indent=1))
    for t in args.times or []:
        sc.write_sfld(out / f"theta1_t{t:+.4f}.sfld", sc.ifft_real(new.theta_at(t)))
        R = sc.ifft_real(new.R_at(t))
        sc.write_sfld(out / f"R1x_t{t:+.4f}.sfld", R[0])
        sc.write_sfld(out / f"R1y_t{t:+.4f}.sfld", R[1])
    d = rep["defect"]
    return 0 if d["pass"] and rep["energy"]["pass"] else 1


def _field_from_expr(expr, n):
    from .multipliers import parse_expression
    fn = parse_expression(expr, variables=("x1", "x2"))
    X = sc.grid(n).X
    return np.real(np.broadcast_to(fn(X[0], X[1]), X[0].shape)).astype(float)


def cmd_validate_microlocal(args, cfg):
    from .microlocal import (GaussianKernel, PhaseSnapshot, QuadSpec, WavePacket, apply_operator,
                             decay_study, expand_exact, expand_quadrature)
    out = _out(args, cfg)
    m = cfg.microlocal
    sym = make_symbol(cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    # reconstruction on random packets
    worst = 0.0
    for _ in range(m.packets):
        n = m.quad_n
        a = rng.normal(size=(2, 3))
        ph = PhaseSnapshot.from_function(m.lin, n, lambda x, y: 0.1 * (a[0, 0] * np.sin(x) + a[0, 1] * np.cos(y)
                                                                       + a[0, 2] * np.sin(x + y)))
        X = sc.grid(n).X
        amp = 1 + 0.3 * (a[1, 0] * np.cos(X[0]) + a[1, 1] * np.sin(X[1]) + a[1, 2] * np.cos(X[0] - X[1]))
        pk = WavePacket(ph, amp, m.quad_lambda)
        ex = expand_exact(sym, pk)
        direct = apply_operator(sym, pk.values())
        worst = max(worst, float(np.abs(ex.reconstruct() - direct).max() / np.abs(direct).max()))
    # quadrature against the exact expansion
    n, lam = m.quad_n, m.quad_lambda
    ph = PhaseSnapshot.from_function(m.lin, n, lambda x, y: 0.1 * np.sin(x))
    kern = GaussianKernel(lam * np.asarray(m.lin), lam / 2)
    X = sc.grid(n).X
    amp = 1 + 0.5 * np.cos(X[1]) + 0.3 * np.sin(X[0] + X[1])
    pk = WavePacket(ph, amp, lam)
    idx, dq = expand_quadrature(kern, pk, QuadSpec(points=m.quad_points, seed=cfg.rng_seed))
    de = expand_exact(kern, pk).error[idx]
    quad_rel = float(np.abs(dq - de).max() / np.abs(de).max())
    # decay slope
    phase = PhaseSnapshot.from_function(m.lin, m.n, lambda x, y: _field_from_expr(m.phase, m.n))
    amp = _field_from_expr(m.amplitude, m.n)
    study = decay_study(phase, amp, m.lambdas, sym=sym, csv_path=out / "decay.csv")
    rep = {"reconstruction_rel": worst, "quadrature_rel": quad_rel, "slope": study["slope"],
           "slope_u": study["slope_u"], "rows": study["rows"]}
    _write_json(out / "microlocal.json", rep)
    slope_ok = isinstance(study["slope"], float) and -1.3 <= study["slope"] <= -0.7
    return 0 if worst <= 1e-12 and quad_rel <= 1e-3 and slope_ok else 1


def cmd_smooth_run(args, cfg):
    from .diagnostics import energy_series, hamiltonian_series, mean_series, write_series_csv
    from .smooth_solver import SolverConfig, evolve
    out = _out(args, cfg)
    s = cfg.smooth
    n = args.resolution or s.n
    sym = make_symbol(cfg)
    th0 = _field_from_expr(s.theta0, n)
    traj = evolve(th0, sym, SolverConfig(dt=s.dt, t_end=s.t_end, save_every=s.save_every, nu_h=s.nu_h))
    traj.save(out / "snapshots")
    E = energy_series(traj.coeffs)
    M = mean_series(traj.coeffs)
    cols = {"t": traj.times, "E": E, "mean": M}
    H = None
    try:
        H = hamiltonian_series(traj.coeffs, sym)
        cols["H"] = H
    except NotOdd:
        pass
    write_series_csv(out / "series.csv", cols)
    rep = {"energy_drift": float(np.ptp(E) / E[0]), "mean_drift": float(np.ptp(M)),
           "hamiltonian_drift": float(np.ptp(H) / abs(H[0])) if H is not None and H[0] else None,
           **traj.meta}
    _write_json(out / "smooth.json", rep)
    ok = rep["mean_drift"] <= 1e-13 * max(1.0, abs(M[0]))
    if rep["hamiltonian_drift"] is not None:
        ok = ok and rep["hamiltonian_drift"] <= 1e-6
    return 0 if ok else 1


def cmd_diagnose(args, cfg):
    from .diagnostics import (energy_series, hamiltonian_series, mean_series, norms,
                              residual_defect)
    out = _out(args, cfg)
    if not args.snapshots:
        raise ConfigError("diagnose needs at least one snapshot file")
    vals = [sc.read_sfld(p) for p in args.snapshots]
    coeffs = np.stack([sc.fft(np.asarray(v, dtype=float)) for v in vals])
    sym = make_symbol(cfg)
    rep = {"files": [str(p) for p in args.snapshots],
           "norms": [norms(c).to_dict() for c in coeffs],
           "energy": energy_series(coeffs), "mean": mean_series(coeffs)}
    try:
        rep["hamiltonian"] = hamiltonian_series(coeffs, sym)
    except NotOdd as exc:
        rep["hamiltonian"] = None
        rep["hamiltonian_note"] = str(exc)
    if len(coeffs) >= 3 and args.dt:
        ts = args.dt * np.arange(len(coeffs))
        rep["defect"] = residual_defect(ts, coeffs, sym)
    _write_json(out / "diagnose.json", rep)
    return 0


def cmd_glue(args, cfg):
    from .multipliers import select_direction_pair
    from .smooth_solver import evolve_window
    from .wave_step import glue_solution
    out = _out(args, cfg)
    gs = cfg.glue
    n = args.resolution or gs.n
    sym = make_symbol(cfg)
    pair = select_direction_pair(sym)
    traj = evolve_window(_field_from_expr(gs.theta0, n), sym, gs.T, dt=gs.dt)
    st = glue_solution(traj, gs.T, sym, pair)
    ts = np.linspace(-gs.T, gs.T, gs.scan_points)
    rows = []
    ok = True
    for t in ts:
        r = sc.c0(sc.ifft_real(st.R_at(t, n)))
        inside = 5 * gs.T / 8 <= abs(t) <= 3 * gs.T / 4
        if r > 0 and not inside:
            ok = False
        rows.append({"t": float(t), "R_c0": r, "in_window": inside})
    _write_json(out / "glue.json", {"T": gs.T, "support_ok": ok, "scan": rows})
    return 0 if ok else 1


COMMANDS = {"run": cmd_run, "step": cmd_step, "validate-microlocal": cmd_validate_microlocal,
            "smooth-run": cmd_smooth_run, "diagnose": cmd_diagnose, "glue": cmd_glue}


def build_parser():
    p = argparse.ArgumentParser(prog="scalarforge", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("snapshots", nargs="*", help="SFLD files (diagnose)")
    p.add_argument("--config", help="JSON config path or bundled name (e.g. ipm-demo)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--threads", type=int, help="FFT worker threads (env SCALARFORGE_THREADS)")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    p.add_argument("--k-max", type=int, help="number of stages (overrides config)")
    p.add_argument("--resolution", type=int, help="grid size n (overrides config)")
    p.add_argument("--dt", type=float, help="snapshot spacing in time (diagnose)")
    p.add_argument("--times", type=float, nargs="*", help="snapshot times (step)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.rng_seed = args.seed
        if args.k_max is not None:
            cfg.k_max = args.k_max
        if args.resolution is not None and args.command in ("run", "step"):
            cfg.n = args.resolution
        if args.threads is not None:
            sc.set_threads(args.threads)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](args, cfg)
        log.info("%s finished in %.1fs (exit %d)", args.command, time.perf_counter() - t0, code)
        return code
    except ScalarForgeError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
