"""Acceptance criteria 1-8, each at its stated settings and tolerance.

Every criterion prints one ``CRITERION n: PASS|FAIL`` line (also repeated in
the terminal summary) and asserts both the accuracy target and the runtime
budget. Seeds are fixed here, once, before any run.
"""

import math
import time

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mvdiv.closed_form import (
    Regime,
    find_eps_tilde,
    regime_threshold,
    solve_barrier,
    solve_equilibrium,
)
from mvdiv.equilibrium import default_d_dev_grid, default_x0_grid, equilibrium_sweep
from mvdiv.model import ModelParams, compute_roots
from mvdiv.oracle import hjb_residual, solve_ode
from mvdiv.simulate import SimConfig, estimate, estimate_many, run_paths, summarize
from mvdiv.strategy import Barrier, Constant, Zero

A, B, RHO = 0.1, 0.35, 0.05
MC_SEED = 20240601
SWEEP_SEED = 20240602
RESULTS: list[str] = []


def report(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line, flush=True)


def _strategy(sol):
    p = sol.params
    return Barrier(sol.x_tilde, p.d_bar) if sol.regime is Regime.BARRIER else Constant(p.d_bar, p.d_bar)


# ---------------------------------------------------------------- 1


def test_criterion_1_regime_threshold(capsys):
    t0 = time.perf_counter()
    d = regime_threshold(A, B, RHO)
    r6 = compute_roots(ModelParams(A, B, RHO, d, 0.0)).r6
    elapsed = time.perf_counter() - t0
    ok = abs(d - 0.0306) <= 5e-4 and abs(d / RHO + 1 / r6) <= 1e-10 and elapsed < 1.0
    report(capsys, 1, ok, f"d_bar*={d:.6f} (target 0.0306 +/- 0.0005), {elapsed * 1e3:.1f} ms")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_eps_tilde(capsys):
    t0 = time.perf_counter()
    eps = find_eps_tilde(ModelParams(A, B, RHO, 0.03, 0.0))
    elapsed = time.perf_counter() - t0
    ok = abs(eps - 0.65) <= 0.05 and elapsed < 1.0
    report(capsys, 2, ok, f"eps_tilde={eps:.4f} (target 0.65 +/- 0.05), {elapsed * 1e3:.1f} ms")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_figure_one(capsys):
    t0 = time.perf_counter()
    gammas = np.round(np.arange(0.0, 0.4 + 1e-9, 0.02), 10)
    curves, directions, ok = {}, {}, True
    for d_bar in (0.05, 0.1):
        xs = [solve_barrier(ModelParams(A, B, RHO, d_bar, g)) for g in gammas]
        ok &= all(x is not None and x > 0 for x in xs)
        diffs = np.diff(np.array(xs, dtype=float))
        if np.all(diffs > 0):
            directions[d_bar] = "increasing"
        elif np.all(diffs < 0):
            directions[d_bar] = "decreasing"
        else:
            directions[d_bar] = "not monotone"
            ok = False
        curves[d_bar] = xs
    ok &= curves[0.1][0] > curves[0.05][0] and curves[0.1][-1] > curves[0.05][-1]
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 5.0
    report(capsys, 3, ok,
           f"x_tilde in gamma: {directions[0.05]} (d_bar=0.05), {directions[0.1]} (d_bar=0.1); "
           f"x_tilde(0.1) > x_tilde(0.05) at gamma=0: {curves[0.1][0]:.4f} > {curves[0.05][0]:.4f}, "
           f"gamma=0.4: {curves[0.1][-1]:.4f} > {curves[0.05][-1]:.4f}; {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_closed_form_vs_monte_carlo(capsys):
    cfg = SimConfig(dt=1e-3, n_paths=200_000, seed=MC_SEED, bridge_correction=True)
    fig1 = solve_equilibrium(ModelParams(A, B, RHO, 0.05, 0.2))
    mr = solve_equilibrium(ModelParams(A, B, RHO, 0.03, 0.3))
    assert fig1.regime is Regime.BARRIER and mr.regime is Regime.MAX_RATE
    xt = fig1.x_tilde
    cases = [(fig1, [0.5 * xt, xt, 2 * xt, 3 * xt, 4 * xt]), (mr, [0.25, 0.5, 1.0, 2.0, 3.0])]
    t0 = time.perf_counter()
    worst, ok = 0.0, True
    lines = []
    for sol, x0s in cases:
        for e in estimate_many(sol.params, _strategy(sol), x0s, cfg):
            zy = (e.mean_Y - sol.G(e.x0)) / e.stderr_Y
            zh = (e.mean_Y2 - sol.H(e.x0)) / e.stderr_Y2
            worst = max(worst, abs(zy), abs(zh))
            ok &= abs(zy) <= 3 and abs(zh) <= 3
            lines.append(f"{sol.regime.value} x0={e.x0:.4f} z_Y={zy:+.2f} z_Y2={zh:+.2f}")
    elapsed = time.perf_counter() - t0
    accurate = ok
    ok &= elapsed < 300
    with capsys.disabled():
        print("\n" + "\n".join(lines))
    report(capsys, 4, ok, f"accuracy {'within' if accurate else 'outside'} 3 stderr (max |z|={worst:.2f}), "
                          f"runtime {elapsed:.0f} s (budget 300 s)")
    assert accurate, "closed form and Monte Carlo disagree"
    assert elapsed < 300, f"runtime {elapsed:.0f} s exceeds the 300 s budget"


# ---------------------------------------------------------------- 5


def test_criterion_5_ode_oracle(capsys):
    t0 = time.perf_counter()
    ok, parts = True, []
    for p in (ModelParams(A, B, RHO, 0.05, 0.2), ModelParams(A, B, RHO, 0.03, 0.3)):
        sol = solve_equilibrium(p)
        s = _strategy(sol)
        err = {}
        for n in (2000, 4000):
            g = solve_ode(p, s, n_nodes=n)
            err[n] = max(np.max(np.abs(g.G_vals - sol.G(g.x_nodes))),
                         np.max(np.abs(g.H_vals - sol.H(g.x_nodes))))
        ratio = err[2000] / err[4000]
        ok &= err[4000] <= 1e-4 and 3.0 <= ratio <= 5.0
        parts.append(f"{sol.regime.value}: max err {err[4000]:.2e}, ratio {ratio:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    report(capsys, 5, ok, "; ".join(parts) + f"; {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_hjb_system(capsys):
    t0 = time.perf_counter()
    ok, parts = True, []
    for p in (ModelParams(A, B, RHO, 0.05, 0.2), ModelParams(A, B, RHO, 0.03, 0.3)):
        sol = solve_equilibrium(p)
        grid = solve_ode(p, _strategy(sol), n_nodes=4000)
        x = grid.x_nodes[1:]
        xt = sol.barrier
        x = x[np.abs(x - xt) > grid.h * (1 + 1e-9)]
        r = hjb_residual(p, sol, x)
        sup = float(np.max(np.abs(r.sup_residual)))
        rule = np.where(x <= xt, 0.0, p.d_bar)
        mism = int(np.count_nonzero(r.argmax_d != rule))
        ok &= sup <= 1e-8 and mism == 0
        part = f"{sol.regime.value}: sup|res|={sup:.1e}, argmax mismatches={mism}"
        if sol.regime is Regime.BARRIER:
            gaps = [abs(f(xt, k, "left") - f(xt, k, "right")) for f in (sol.G, sol.H) for k in (0, 1)]
            dv = abs(sol.V(xt, 1) - 1)
            ok &= max(gaps) <= 1e-10 and dv <= 1e-8
            part += f", pasting gap={max(gaps):.1e}, |V'(x~)-1|={dv:.1e}"
        parts.append(part)
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 5
    report(capsys, 6, ok, "; ".join(parts) + f"; {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_equilibrium_falsification(capsys):
    cfg = SimConfig(dt=2.5e-3, n_paths=100_000, seed=SWEEP_SEED)
    fig1 = ModelParams(A, B, RHO, 0.05, 0.2)
    mrp = ModelParams(A, B, RHO, 0.03, 0.3)
    xt = solve_equilibrium(fig1).x_tilde
    inv_r6 = 1 / abs(compute_roots(mrp).r6)
    cases = [
        ("barrier equilibrium", fig1, Barrier(xt, fig1.d_bar), xt, "PASS"),
        ("max-rate equilibrium", mrp, Constant(mrp.d_bar, mrp.d_bar), inv_r6, "PASS"),
        ("barrier shifted +50%", fig1, Barrier(1.5 * xt, fig1.d_bar), 1.5 * xt, "FAIL"),
        ("zero candidate", fig1, Zero(fig1.d_bar), xt, "FAIL"),
    ]
    t0 = time.perf_counter()
    ok, parts = True, []
    for name, p, s, scale, want in cases:
        t1 = time.perf_counter()
        rep = equilibrium_sweep(p, s, default_x0_grid(s, scale), default_d_dev_grid(p.d_bar), cfg=cfg)
        w = rep.worst
        ok &= rep.verdict == want
        parts.append(f"{name}: {rep.verdict} (want {want})")
        with capsys.disabled():
            print(f"\n[{name}] {time.perf_counter() - t1:.0f} s, worst cell x0={w.x0:.4f} "
                  f"d={w.d_dev:.3f} slope={w.slope.extrapolated_slope:+.5f} "
                  f"threshold={w.threshold:+.5f}\n{rep.table()}")
    elapsed = time.perf_counter() - t0
    verdicts = ok
    ok &= elapsed < 600
    report(capsys, 7, ok, "; ".join(parts) + f"; runtime {elapsed:.0f} s (budget 600 s)")
    assert verdicts, "; ".join(parts)
    assert elapsed < 600, f"runtime {elapsed:.0f} s exceeds the 600 s budget"


# ---------------------------------------------------------------- 8


@settings(max_examples=500, deadline=None, derandomize=True)
@given(a=st.floats(-2, 2), b=st.floats(0.05, 3), rho=st.floats(1e-3, 1), d_bar=st.floats(1e-3, 3))
def _vieta(a, b, rho, d_bar):
    p = ModelParams(a, b, rho, d_bar, 0.0)
    r = compute_roots(p)
    b2 = b * b
    for pos, neg, drift, k in ((r.r1, r.r2, a, 1), (r.r3, r.r4, a, 2),
                               (r.r5, r.r6, a - d_bar, 1), (r.r7, r.r8, a - d_bar, 2)):
        assert abs(pos * neg + 2 * k * rho / b2) <= 1e-12 * 2 * k * rho / b2
        assert abs(pos + neg + 2 * drift / b2) <= 1e-12 * max(abs(pos), abs(neg))


def _first_passage(a, b, x0, T):
    dens = lambda t: x0 / (b * math.sqrt(2 * math.pi * t**3)) * math.exp(-(x0 + a * t) ** 2 / (2 * b * b * t))  # noqa: E731
    return integrate.quad(dens, 0.0, T, limit=200)[0]


def test_criterion_8_property_suites(capsys):
    t0 = time.perf_counter()
    checks = {}

    _vieta()
    checks["vieta"] = True

    worst_var = math.inf
    for p in (ModelParams(A, B, RHO, 0.05, 0.2), ModelParams(A, B, RHO, 0.1, 0.4),
              ModelParams(A, B, RHO, 0.03, 0.3), ModelParams(A, B, RHO, 0.02, 0.1)):
        sol = solve_equilibrium(p)
        xs = np.linspace(0, 60, 60_001)
        worst_var = min(worst_var, float(np.min(sol.H(xs) - sol.G(xs) ** 2)))
    checks["variance"] = worst_var >= -1e-12

    fig1 = ModelParams(A, B, RHO, 0.05, 0.2)
    xt = solve_equilibrium(fig1).x_tilde
    worst_id = 0.0
    for dt in (4e-3, 1e-3):
        cfg = SimConfig(dt=dt, n_paths=2000, seed=MC_SEED)
        _, _, res = run_paths(fig1, Barrier(xt, fig1.d_bar), [0.5 * xt, 2 * xt], cfg, residuals=True)
        worst_id = max(worst_id, float(np.max(np.abs(res)) / (10 * dt * fig1.perpetuity**2)))
    checks["path_identity"] = worst_id <= 1.0

    x0, T = 0.3, 4.0
    zcfg = SimConfig(dt=1e-3, n_paths=40_000, seed=MC_SEED, t_max=T, truncation_tol=1.0)
    _, ruin, _ = run_paths(fig1, Zero(fig1.d_bar), [x0], zcfg)
    e = summarize(np.zeros(zcfg.n_paths), ruin[0] >= 0, 0.0, x0)
    exact = _first_passage(A, B, x0, T)
    z_fp = (e.ruin_fraction - exact) / e.stderr_ruin
    checks["first_passage"] = abs(z_fp) <= 3

    rcfg = SimConfig(dt=2e-3, n_paths=3000, seed=MC_SEED, batch_size=3000)
    s = Barrier(xt, fig1.d_bar)
    ref = estimate(fig1, s, 2 * xt, rcfg, threads=1)
    checks["bit_reproducible"] = all(
        estimate(fig1, s, 2 * xt, rcfg.with_(batch_size=bs), threads=th) == ref
        for bs, th in ((3000, 1), (256, 4), (1000, 2)))

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 120
    report(capsys, 8, ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
           + f" (min H-G^2={worst_var:.1e}, identity/bound={worst_id:.3f}, first-passage z={z_fp:+.2f}); "
           f"{elapsed:.1f} s")
    assert ok, checks
