import csv

import numpy as np
import pytest

from mvdiv.closed_form import barrier_solution
from mvdiv.oracle import (
    hjb_residual,
    hjb_terms,
    make_grid,
    min_x_max,
    node_rates,
    solve_G_ode,
    solve_H_ode,
    solve_ode,
    write_grid_csv,
)
from mvdiv.strategy import Barrier, Constant, Tabulated, Zero


def _errors(sol, grid):
    return (np.max(np.abs(grid.G_vals - sol.G(grid.x_nodes))),
            np.max(np.abs(grid.H_vals - sol.H(grid.x_nodes))))


@pytest.mark.parametrize("which", ["fig1_sol", "maxrate_sol"])
def test_ode_matches_closed_form(request, which):
    sol = request.getfixturevalue(which)
    p = sol.params
    s = Barrier(sol.barrier, p.d_bar) if sol.barrier > 0 else Constant(p.d_bar, p.d_bar)
    g = solve_ode(p, s, n_nodes=4000)
    assert g.G_vals[0] == 0.0 and g.H_vals[0] == 0.0
    assert max(_errors(sol, g)) <= 1e-4


@pytest.mark.parametrize("which", ["fig1_sol", "maxrate_sol"])
def test_second_order_convergence(request, which):
    sol = request.getfixturevalue(which)
    p = sol.params
    s = Barrier(sol.barrier, p.d_bar) if sol.barrier > 0 else Constant(p.d_bar, p.d_bar)
    x_max = min_x_max(p, s)
    e2 = max(_errors(sol, solve_ode(p, s, x_max, 2000)))
    e4 = max(_errors(sol, solve_ode(p, s, x_max, 4000)))
    assert 3.0 <= e2 / e4 <= 5.0


def test_zero_strategy_gives_zero(fig1):
    g = solve_ode(fig1, Zero(fig1.d_bar), n_nodes=1000)
    assert np.all(g.G_vals == 0.0) and np.all(g.H_vals == 0.0)


def test_wrong_barrier_also_matches_its_closed_form(fig1):
    # the oracle works for any barrier, not just the equilibrium one
    sol = barrier_solution(fig1, 0.5)
    g = solve_ode(fig1, Barrier(0.5, fig1.d_bar))
    assert max(_errors(sol, g)) <= 1e-4


def test_tabulated_far_field(fig1):
    s = Tabulated((0.2, 0.4), (0.0, 0.02), fig1.d_bar, extrapolate=fig1.d_bar)
    g = solve_ode(fig1, s, n_nodes=2000)
    assert np.all(np.diff(g.G_vals) > 0)
    assert g.G_vals[-1] == pytest.approx(fig1.perpetuity, rel=1e-3)
    with pytest.raises(ValueError, match="far field"):
        solve_ode(fig1, Tabulated((0.2,), (0.0,), fig1.d_bar))


def test_grid_alignment_and_node_rates(fig1):
    s = Barrier(0.2159, fig1.d_bar)
    x = make_grid(fig1, s, 1000)
    assert 0.2159 in x
    assert x[-1] >= min_x_max(fig1, s) * (1 - 1e-12)
    d = node_rates(s, x)
    i = int(np.flatnonzero(x == 0.2159)[0])
    assert d[i] == 0.5 * fig1.d_bar and d[i - 1] == 0.0 and d[i + 1] == fig1.d_bar


def test_grid_validation(fig1):
    s = Constant(fig1.d_bar, fig1.d_bar)
    with pytest.raises(ValueError):
        make_grid(fig1, s, 500)
    with pytest.raises(ValueError):
        make_grid(fig1, s, 2000, x_max=0.5 * min_x_max(fig1, s))


def test_h_requires_matching_grid(fig1, maxrate):
    g = solve_G_ode(fig1, Zero(fig1.d_bar), n_nodes=1000)
    with pytest.raises(ValueError):
        solve_H_ode(maxrate, Zero(fig1.d_bar), g)


# ---------------------------------------------------------------- HJB


def _nodes(sol, n=4000):
    top = 4 * max(sol.barrier, 1 / abs(sol.roots.r6))
    h = top / n
    x = np.arange(1, n + 1) * h
    return x[np.abs(x - sol.barrier) > h], h


@pytest.mark.parametrize("which", ["fig1_sol", "maxrate_sol"])
def test_hjb_sup_residual_and_argmax(request, which):
    sol = request.getfixturevalue(which)
    x, _ = _nodes(sol)
    r = hjb_residual(sol.params, sol, x)
    assert np.max(np.abs(r.sup_residual)) <= 1e-8
    assert np.array_equal(r.argmax_d, np.where(x <= sol.barrier, 0.0, sol.params.d_bar))


def test_hjb_simplified_matches_full(fig1_sol):
    x = np.linspace(0.01, 3, 500)
    r = hjb_residual(fig1_sol.params, fig1_sol, x)
    assert np.max(np.abs(r.at_zero - r.full_at_zero)) <= 1e-10
    assert np.max(np.abs(r.at_max - r.full_at_max)) <= 1e-10


def test_hjb_affine_in_d(fig1_sol):
    p = fig1_sol.params
    x = np.linspace(0.01, 3, 300)
    args = [fig1_sol.G(x, k) for k in range(3)] + [fig1_sol.H(x, k) for k in range(3)]
    lo, mid, hi = (hjb_terms(p, *args, d) for d in (0.0, 0.5 * p.d_bar, p.d_bar))
    assert np.max(np.abs(mid - 0.5 * (lo + hi))) <= 1e-12


def test_hjb_detects_wrong_barrier(fig1):
    # a barrier shifted by 50% violates the supremum between the two levels
    sol = barrier_solution(fig1, 1.5 * 0.2159)
    x = np.linspace(0.05, 1.0, 400)
    r = hjb_residual(fig1, sol, x)
    assert np.max(r.sup_residual) > 1e-4


def test_oracle_grid_residual_small_away_from_barrier(fig1_sol):
    p = fig1_sol.params
    g = solve_ode(p, Barrier(fig1_sol.barrier, p.d_bar))
    h = g.h
    keep = (np.abs(g.x_nodes - fig1_sol.barrier) > 2 * h) & np.isfinite(g.residuals)
    keep &= g.x_nodes < 0.9 * g.x_nodes[-1]
    assert np.max(np.abs(g.residuals[keep])) <= 1e-5
    rule = np.where(g.x_nodes[keep] <= fig1_sol.barrier, 0.0, p.d_bar)
    assert np.array_equal(g.argmax_d[keep], rule)


def test_grid_csv(tmp_path, maxrate):
    g = solve_ode(maxrate, Constant(maxrate.d_bar, maxrate.d_bar), n_nodes=1000)
    f = tmp_path / "grid.csv"
    write_grid_csv(f, g, comment="c")
    lines = f.read_text().splitlines()
    assert lines[0] == "# c"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["x", "G", "H", "V", "residual", "argmax_d"]
    assert len(rows) == 1001
    assert float(rows[10][1]) == g.G_vals[9]
