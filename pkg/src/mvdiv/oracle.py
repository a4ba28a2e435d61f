"""Finite-difference oracle for G = E[Y], H = E[Y^2] and the HJB residual.

Given any step strategy, G and H solve linear two-point problems on
``[0, x_max]``::

    (b^2/2) G'' + (a - d) G' - rho G + d = 0,            G(0) = 0
    (b^2/2) H'' + (a - d) H' - 2 rho H + 2 d G = 0,       H(0) = 0

with far-field Robin conditions that keep only the decaying exponential
modes. Central differences give tridiagonal systems. When a threshold of the
strategy falls on a node, the node uses the average of the two adjacent
rates, which keeps the scheme second order across the jump; the grid is
stretched slightly so that the first threshold is a node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .closed_form import EquilibriumSolution
from .model import ModelParams, compute_roots, quadratic_roots
from .strategy import Strategy

__all__ = [
    "SingularSystem",
    "ODEGrid",
    "HJBResidual",
    "min_x_max",
    "make_grid",
    "node_rates",
    "solve_G_ode",
    "solve_H_ode",
    "solve_ode",
    "hjb_terms",
    "hjb_residual",
    "hjb_residual_full",
    "write_grid_csv",
]

MIN_NODES = 1000


class SingularSystem(RuntimeError):
    """The tridiagonal factorisation broke down (invalid grid or parameters)."""


@dataclass(frozen=True)
class ODEGrid:
    x_nodes: np.ndarray
    G_vals: np.ndarray
    strategy: Strategy
    params: ModelParams
    d_nodes: np.ndarray
    H_vals: np.ndarray | None = None
    residuals: np.ndarray | None = None
    argmax_d: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def V_vals(self) -> np.ndarray:
        if self.H_vals is None:
            raise ValueError("H not solved yet")
        g = self.params.gamma
        return self.G_vals - 0.5 * g * (self.H_vals - self.G_vals**2)


def _far_field(p: ModelParams, s: Strategy) -> tuple[float, float, float]:
    """Far-field rate and the decaying roots for G (discount rho) and H (2 rho)."""
    d = s.far_field_rate()
    if not math.isfinite(d):
        raise ValueError(f"{s.label} has no rate beyond its last knot; the far field is undefined")
    rg = quadratic_roots(p.a - d, p.b, p.rho)[1]
    rh = quadratic_roots(p.a - d, p.b, 2.0 * p.rho)[1]
    return d, rg, rh


def min_x_max(p: ModelParams, s: Strategy) -> float:
    """Smallest admissible domain: five decay lengths of the slowest mode."""
    r = compute_roots(p)
    _, rg, _ = _far_field(p, s)
    return 5.0 * max(1.0 / r.r1, 1.0 / abs(r.r6), 1.0 / abs(rg))


def make_grid(p: ModelParams, s: Strategy, n_nodes: int, x_max: float | None = None,
              align: bool = True) -> np.ndarray:
    """Uniform nodes on ``[0, x_max]``; with ``align`` the spacing is enlarged
    (never shrinking the domain) so the first positive threshold is a node."""
    if n_nodes < MIN_NODES:
        raise ValueError(f"n_nodes must be >= {MIN_NODES}")
    lo = min_x_max(p, s)
    if x_max is None:
        x_max = lo
    elif x_max < lo * (1 - 1e-12):
        raise ValueError(f"x_max must be >= {lo:.6g} (five decay lengths)")
    n_cells = n_nodes - 1
    h = x_max / n_cells
    th = s.thresholds
    th = th[(th > 0) & (th < x_max)]
    if align and th.size:
        k = max(1, int(math.floor(th[0] / h)))
        h = th[0] / k
    if any(th >= n_cells * h):
        raise ValueError("strategy thresholds must lie inside the domain")
    x = np.arange(n_nodes) * h
    if align and th.size:
        x[k] = th[0]
    return x


def node_rates(s: Strategy, x: np.ndarray) -> np.ndarray:
    """Strategy rate per node, averaged across a threshold sitting on a node."""
    d = np.asarray(s.rate(x), dtype=float).copy()
    th, rates = s.kernel_arrays()
    h = x[1] - x[0]
    for j, t in enumerate(th):
        i = int(round(t / h))
        if 0 < i < x.size and abs(x[i] - t) <= 1e-9 * h:
            d[i] = 0.5 * (rates[j] + rates[j + 1])
    return d


def _solve(lower, diag, upper, rhs) -> np.ndarray:
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    try:
        out = solve_banded((1, 1), ab, rhs)
    except (LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise SingularSystem("non-finite solution")
    return out


def _stencil(p: ModelParams, d: np.ndarray, h: float, k_rho: float):
    half_b2 = 0.5 * p.b * p.b
    drift = p.a - d
    lower = half_b2 / h**2 - drift / (2 * h)
    upper = half_b2 / h**2 + drift / (2 * h)
    diag = np.full(d.shape, -2 * half_b2 / h**2 - k_rho * p.rho)
    return lower, diag, upper


def solve_G_ode(p: ModelParams, s: Strategy, x_max: float | None = None, n_nodes: int = 4000,
                align: bool = True) -> ODEGrid:
    """Central-difference solve for G with ``G(0) = 0`` and far-field
    ``G' = r (G - d_inf / rho)`` applied through a ghost node."""
    x = make_grid(p, s, n_nodes, x_max, align)
    h = float(x[1] - x[0])
    d = node_rates(s, x)
    d_inf, rg, _ = _far_field(p, s)
    m = d_inf / p.rho
    lo, di, up = (v[1:] for v in _stencil(p, d, h, 1.0))
    rhs = -d[1:].copy()
    # ghost G_{N+1} = G_{N-1} + 2 h rg (G_N - m)
    lo, di = lo.copy(), di.copy()
    lo[-1] += up[-1]
    di[-1] += 2 * h * rg * up[-1]
    rhs[-1] += 2 * h * rg * m * up[-1]
    G = np.concatenate([[0.0], _solve(lo, di, up, rhs)])
    return ODEGrid(x_nodes=x, G_vals=G, strategy=s, params=p, d_nodes=d,
                   meta={"x_max": float(x[-1]), "n_nodes": int(n_nodes), "h": h})


def solve_H_ode(p: ModelParams, s: Strategy, G_grid: ODEGrid) -> ODEGrid:
    """Second moment on the nodes of ``G_grid``.

    Far field: beyond the last threshold ``H - m^2 - 2 m (G - m)`` is a pure
    decaying mode ``C e^{r x}`` (``m = d_inf / rho``), which gives
    ``H' - 2 m G' = r (H - m^2 - 2 m (G - m))``.
    """
    if G_grid.strategy != s or G_grid.params != p:
        raise ValueError("G_grid was solved for a different problem")
    x, G, d = G_grid.x_nodes, G_grid.G_vals, G_grid.d_nodes
    h = G_grid.h
    d_inf, rg, rh = _far_field(p, s)
    m = d_inf / p.rho
    lo, di, up = (v[1:].copy() for v in _stencil(p, d, h, 2.0))
    rhs = -2.0 * d[1:] * G[1:]
    gN = G[-1]
    dG = rg * (gN - m)
    c0 = 2 * m * dG - rh * (m * m + 2 * m * (gN - m))
    lo[-1] += up[-1]
    di[-1] += 2 * h * rh * up[-1]
    rhs[-1] -= 2 * h * c0 * up[-1]
    H = np.concatenate([[0.0], _solve(lo, di, up, rhs)])
    res, arg = _grid_residual(p, x, G, H)
    return replace(G_grid, H_vals=H, residuals=res, argmax_d=arg)


def solve_ode(p: ModelParams, s: Strategy, x_max: float | None = None, n_nodes: int = 4000,
              align: bool = True) -> ODEGrid:
    return solve_H_ode(p, s, solve_G_ode(p, s, x_max, n_nodes, align))


def hjb_terms(p: ModelParams, G, G1, G2, H, H1, H2, d):
    """Bracket of the extended HJB equation at control ``d`` (simplified form).

    Using ``L(G^2) = 2 G L G + b^2 G'^2`` the bracket collapses to
    ``d (1 - V') + a V' + (b^2/2) V'' - (gamma/2) b^2 G'^2 - rho G + gamma rho (H - G^2)``.
    """
    g = p.gamma
    V1 = G1 - 0.5 * g * (H1 - 2 * G * G1)
    V2 = G2 - 0.5 * g * (H2 - 2 * G1**2 - 2 * G * G2)
    half_b2 = 0.5 * p.b * p.b
    return (d * (1 - V1) + p.a * V1 + half_b2 * V2 - g * half_b2 * G1**2
            - p.rho * G + g * p.rho * (H - G**2))


def hjb_residual_full(p: ModelParams, G, G1, G2, H, H1, H2, d):
    """The same bracket without simplification:
    ``L^d V - (gamma/2) L^d(G^2) + gamma G L^d G + d - rho G + gamma rho (H - G^2)``."""
    g = p.gamma
    half_b2 = 0.5 * p.b * p.b
    drift = p.a - d
    V1 = G1 - 0.5 * g * (H1 - 2 * G * G1)
    V2 = G2 - 0.5 * g * (H2 - 2 * G1**2 - 2 * G * G2)
    LV = drift * V1 + half_b2 * V2
    LG = drift * G1 + half_b2 * G2
    LG2 = drift * 2 * G * G1 + half_b2 * (2 * G1**2 + 2 * G * G2)
    return LV - 0.5 * g * LG2 + g * G * LG + d - p.rho * G + g * p.rho * (H - G**2)


def _sup(p: ModelParams, e0, e1):
    # the bracket is affine in d, so the sup over [0, d_bar] sits at an endpoint;
    # ties go to 0 (no dividends at the barrier itself)
    arg = np.where(e1 > e0, p.d_bar, 0.0)
    return np.maximum(e0, e1), arg


def _grid_residual(p: ModelParams, x, G, H):
    h = x[1] - x[0]
    res = np.full(x.shape, np.nan)
    arg = np.full(x.shape, np.nan)
    G1 = (G[2:] - G[:-2]) / (2 * h)
    G2 = (G[2:] - 2 * G[1:-1] + G[:-2]) / h**2
    H1 = (H[2:] - H[:-2]) / (2 * h)
    H2 = (H[2:] - 2 * H[1:-1] + H[:-2]) / h**2
    args = (G[1:-1], G1, G2, H[1:-1], H1, H2)
    res[1:-1], arg[1:-1] = _sup(p, hjb_terms(p, *args, 0.0), hjb_terms(p, *args, p.d_bar))
    return res, arg


@dataclass(frozen=True)
class HJBResidual:
    x: np.ndarray
    at_zero: np.ndarray
    at_max: np.ndarray
    sup_residual: np.ndarray
    argmax_d: np.ndarray
    full_at_zero: np.ndarray
    full_at_max: np.ndarray


def hjb_residual(p: ModelParams, sol: EquilibriumSolution, x, side: str = "left") -> HJBResidual:
    """Sup of the HJB bracket over ``d in {0, d_bar}`` using closed-form derivatives."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    args = [sol.G(x, k, side) for k in range(3)] + [sol.H(x, k, side) for k in range(3)]
    args = [np.atleast_1d(np.asarray(a, dtype=float)) for a in args]
    e0 = hjb_terms(p, *args, 0.0)
    e1 = hjb_terms(p, *args, p.d_bar)
    sup, arg = _sup(p, e0, e1)
    return HJBResidual(x=x, at_zero=e0, at_max=e1, sup_residual=sup, argmax_d=arg,
                       full_at_zero=hjb_residual_full(p, *args, 0.0),
                       full_at_max=hjb_residual_full(p, *args, p.d_bar))


def write_grid_csv(path: str | Path, grid: ODEGrid, comment: str | None = None) -> None:
    """Columns ``x, G, H, V, residual, argmax_d``."""
    if grid.H_vals is None:
        raise ValueError("grid has no H values")
    V = grid.V_vals
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["x", "G", "H", "V", "residual", "argmax_d"])
        for row in zip(grid.x_nodes, grid.G_vals, grid.H_vals, V, grid.residuals, grid.argmax_d):
            w.writerow([repr(float(v)) for v in row])
