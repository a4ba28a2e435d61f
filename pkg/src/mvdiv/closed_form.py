"""Closed-form equilibrium: barrier equation, smooth-pasting constants, and G, H, V.

Two solved regimes exist. Below the max-rate threshold on ``d_bar`` and for
small ``gamma`` the equilibrium is a barrier strategy (pay nothing up to the
barrier, the maximum rate above it). Above the threshold and for ``gamma``
below a computable bound it pays the maximum rate everywhere. Anything else
is reported as unresolved.

All exponentials are evaluated relative to the barrier so that positive
roots never overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import CharRoots, ModelParams, compute_roots

__all__ = [
    "Regime",
    "MultipleRoots",
    "PreconditionViolated",
    "UnresolvedRegime",
    "Constants",
    "EquilibriumSolution",
    "f_value",
    "scan_max",
    "solve_barrier",
    "compute_constants",
    "barrier_solution",
    "max_rate_solution",
    "solve_equilibrium",
    "classify_regime",
    "max_rate_margin",
    "x_m",
    "max_rate_dV",
    "find_eps_tilde",
    "max_rate_dV_bound",
    "negative_root_bound",
    "eps_tilde_report",
    "regime_threshold",
    "eval_G",
    "eval_H",
    "eval_V",
]

SCAN_POINTS = 4000
F_TOL = 1e-12
BRACKET_TOL = 1e-10
EPS_TILDE_TOL = 1e-4


class Regime(str, enum.Enum):
    BARRIER = "Barrier"
    MAX_RATE = "MaxRate"
    UNRESOLVED = "Unresolved"


class MultipleRoots(RuntimeError):
    """More than one sign change of ``f(., gamma) - 1`` on the scan grid."""

    def __init__(self, brackets: list[tuple[float, float]]):
        self.brackets = brackets
        super().__init__(f"f(x, gamma) - 1 changes sign {len(brackets)} times on the scan grid")


class PreconditionViolated(ValueError):
    pass


class UnresolvedRegime(RuntimeError):
    """No closed-form equilibrium is available for these parameters."""


def _f_scaled(x, gamma, r: CharRoots, m):
    # numerator and denominator divided by exp(r1 x) and exp(r3 x)
    q = np.exp((r.r2 - r.r1) * x)
    p = np.exp((r.r4 - r.r3) * x)
    d1 = (r.r1 - r.r6) - (r.r2 - r.r6) * q
    d2 = (r.r3 - r.r8) - (r.r4 - r.r8) * p
    u = r.r1 - r.r2 * q
    n1 = (r.r8 * (r.r1 + r.r6) - 2 * r.r1 * r.r6) - (r.r8 * (r.r2 + r.r6) - 2 * r.r2 * r.r6) * q
    first = -m * r.r6 * u / d1
    second = gamma * m * m * r.r6**2 * (1 - q) * u / d1**2
    third = -0.5 * gamma * m * m * n1 / d1 * (r.r3 - r.r4 * p) / d2
    return first + second + third


def f_value(x, gamma: float, roots: CharRoots, p: ModelParams):
    """Barrier function whose level-1 crossing is the equilibrium barrier.

    Accepts a scalar or an array of surplus values ``x >= 0``.
    """
    out = _f_scaled(np.asarray(x, dtype=float), gamma, roots, p.perpetuity)
    return float(out) if np.ndim(out) == 0 else out


def scan_max(roots: CharRoots) -> float:
    return 20.0 * max(1.0 / roots.r1, 1.0 / abs(roots.r2))


def solve_barrier(p: ModelParams, gamma: float | None = None) -> float | None:
    """Locate the unique positive root of ``f(x, gamma) = 1``.

    Returns ``None`` when there is no sign change on ``(0, scan_max]`` and
    raises :class:`MultipleRoots` when there is more than one.
    """
    gamma = p.gamma if gamma is None else gamma
    r = compute_roots(p)
    xs = np.linspace(0.0, scan_max(r), SCAN_POINTS + 1)
    g = f_value(xs, gamma, r, p) - 1.0
    s = np.sign(g)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    # an exact zero on an interior grid node counts as one crossing
    zeros = np.nonzero(s[1:-1] == 0)[0] + 1
    zeros = [i for i in zeros if s[i - 1] * s[i + 1] < 0]
    if len(idx) + len(zeros) == 0:
        return None
    if len(idx) + len(zeros) > 1:
        brackets = [(xs[i], xs[i + 1]) for i in idx] + [(xs[i], xs[i]) for i in zeros]
        raise MultipleRoots(sorted(brackets))
    if zeros:
        return float(xs[zeros[0]])
    lo, hi = xs[idx[0]], xs[idx[0] + 1]
    root = brentq(lambda x: f_value(x, gamma, r, p) - 1.0, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(f_value(root, gamma, r, p) - 1.0) > F_TOL:
        raise RuntimeError(f"barrier refinement stalled at x={root!r}")
    return float(root)


@dataclass(frozen=True)
class Constants:
    """Smooth-pasting constants, both raw and scaled to the barrier.

    ``c1s = C1 exp(r1 x~)``, ``c3s = C3 exp(r3 x~)``, ``c6s = C6 exp(r6 x~)``
    and ``c8s = C8 exp(r8 x~)``; the scaled forms are what the evaluators use.
    """

    x_tilde: float
    c1s: float
    c3s: float
    c6s: float
    c8s: float
    roots: CharRoots

    @property
    def C1(self) -> float:
        return self.c1s * math.exp(-self.roots.r1 * self.x_tilde)

    @property
    def C3(self) -> float:
        return self.c3s * math.exp(-self.roots.r3 * self.x_tilde)

    @property
    def C6(self) -> float:
        return self.c6s * math.exp(-self.roots.r6 * self.x_tilde)

    @property
    def C8(self) -> float:
        return self.c8s * math.exp(-self.roots.r8 * self.x_tilde)

    def perturbed(self, **scale: float) -> "Constants":
        """Copy with raw constants multiplied, e.g. ``perturbed(C1=1.01)``."""
        kw = {f"c{k[1:]}s": getattr(self, f"c{k[1:]}s") * v for k, v in scale.items()}
        return Constants(
            self.x_tilde,
            kw.get("c1s", self.c1s),
            kw.get("c3s", self.c3s),
            kw.get("c6s", self.c6s),
            kw.get("c8s", self.c8s),
            self.roots,
        )


def compute_constants(x_tilde: float, roots: CharRoots, p: ModelParams) -> Constants:
    """Constants of the two-piece G and H that make both C^1 at ``x_tilde``.

    ``x_tilde = 0`` degenerates to the max-rate solution.
    """
    if not x_tilde >= 0:
        raise ValueError("x_tilde must be >= 0")
    r, m = roots, p.perpetuity
    q = math.exp((r.r2 - r.r1) * x_tilde)
    pp = math.exp((r.r4 - r.r3) * x_tilde)
    d1 = (r.r1 - r.r6) - (r.r2 - r.r6) * q
    d2 = (r.r3 - r.r8) - (r.r4 - r.r8) * pp
    if not (d1 > 0 and d2 > 0):
        raise RuntimeError(f"non-positive pasting denominator (d1={d1}, d2={d2})")
    n1 = (r.r8 * (r.r1 + r.r6) - 2 * r.r6 * r.r1) - (r.r8 * (r.r2 + r.r6) - 2 * r.r6 * r.r2) * q
    c1s = -m * r.r6 / d1
    c6s = -m * (r.r1 - r.r2 * q) / d1
    c3s = m * m * n1 / (d1 * d2)
    c8s = m * m * (1 - pp) / d2 * n1 / d1 + m * m * ((r.r1 + r.r6) - (r.r2 + r.r6) * q) / d1
    return Constants(float(x_tilde), c1s, c3s, c6s, c8s, roots)


@dataclass(frozen=True)
class EquilibriumSolution:
    """Closed-form G, H and V for a barrier strategy (``x_tilde = 0`` pays the max rate everywhere).

    ``regime`` records which theorem the solution comes from; solutions built
    for an arbitrary barrier (e.g. a deliberately wrong one) carry
    ``Regime.UNRESOLVED``.
    """

    regime: Regime
    params: ModelParams
    roots: CharRoots
    constants: Constants

    @property
    def x_tilde(self) -> float | None:
        return None if self.regime is Regime.MAX_RATE else self.constants.x_tilde

    @property
    def barrier(self) -> float:
        return self.constants.x_tilde

    def _pieces(self, x, side):
        x = np.asarray(x, dtype=float)
        xt = self.constants.x_tilde
        if side == "left":
            lower = x <= xt
        elif side == "right":
            lower = x < xt
        else:
            raise ValueError("side must be 'left' or 'right'")
        return x, xt, lower

    def _lower(self, x, xt, rp, rn, cs, order):
        # cs (e^{rp (x - xt)} - e^{rn x - rp xt}) and derivatives
        return cs * (rp**order * np.exp(rp * (x - xt)) - rn**order * np.exp(rn * x - rp * xt))

    def G(self, x, order: int = 0, side: str = "left"):
        """G or its ``order``-th derivative; ``side`` picks the one-sided value at the barrier."""
        r, c, m = self.roots, self.constants, self.params.perpetuity
        x, xt, lower = self._pieces(x, side)
        xl = np.minimum(x, xt)
        xu = np.maximum(x, xt)
        lo = self._lower(xl, xt, r.r1, r.r2, c.c1s, order)
        up = c.c6s * r.r6**order * np.exp(r.r6 * (xu - xt)) + (m if order == 0 else 0.0)
        return _scalar(np.where(lower, lo, up))

    def H(self, x, order: int = 0, side: str = "left"):
        r, c, m = self.roots, self.constants, self.params.perpetuity
        x, xt, lower = self._pieces(x, side)
        xl = np.minimum(x, xt)
        xu = np.maximum(x, xt)
        lo = self._lower(xl, xt, r.r3, r.r4, c.c3s, order)
        up = (
            c.c8s * r.r8**order * np.exp(r.r8 * (xu - xt))
            + 2 * m * c.c6s * r.r6**order * np.exp(r.r6 * (xu - xt))
            + (m * m if order == 0 else 0.0)
        )
        return _scalar(np.where(lower, lo, up))

    def V(self, x, order: int = 0, side: str = "left"):
        g = self.params.gamma
        G0 = np.asarray(self.G(x, 0, side))
        if order == 0:
            return _scalar(G0 - 0.5 * g * (np.asarray(self.H(x, 0, side)) - G0**2))
        G1 = np.asarray(self.G(x, 1, side))
        if order == 1:
            return _scalar(G1 - 0.5 * g * (np.asarray(self.H(x, 1, side)) - 2 * G0 * G1))
        if order == 2:
            G2 = np.asarray(self.G(x, 2, side))
            return _scalar(G2 - 0.5 * g * (np.asarray(self.H(x, 2, side)) - 2 * G1**2 - 2 * G0 * G2))
        raise ValueError("order must be 0, 1 or 2")

    def dividend_rate(self, x):
        """The induced feedback rule: 0 at or below the barrier, ``d_bar`` above."""
        x = np.asarray(x, dtype=float)
        return _scalar(np.where(x <= self.constants.x_tilde, 0.0, self.params.d_bar))

    def summary(self) -> dict:
        c = self.constants
        out = {"regime": self.regime.value, "params": self.params.to_dict(), "roots": dict(zip(
            ["r1", "r2", "r3", "r4", "r5", "r6", "r7", "r8"], self.roots.as_tuple()))}
        if self.regime is not Regime.MAX_RATE:
            out.update(
                x_tilde=c.x_tilde,
                C1=c.C1,
                C3=c.C3,
                C6=c.C6,
                C8=c.C8,
                f_residual=f_value(c.x_tilde, self.params.gamma, self.roots, self.params) - 1.0,
            )
        return out


def _scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def eval_G(sol: EquilibriumSolution, x):
    return sol.G(x)


def eval_H(sol: EquilibriumSolution, x):
    return sol.H(x)


def eval_V(sol: EquilibriumSolution, x):
    return sol.V(x)


def barrier_solution(p: ModelParams, x_tilde: float, regime: Regime = Regime.UNRESOLVED) -> EquilibriumSolution:
    """G, H, V of the barrier strategy at an arbitrary level ``x_tilde > 0``."""
    if not x_tilde > 0:
        raise ValueError("x_tilde must be > 0")
    r = compute_roots(p)
    return EquilibriumSolution(regime, p, r, compute_constants(x_tilde, r, p))


def max_rate_solution(p: ModelParams) -> EquilibriumSolution:
    r = compute_roots(p)
    return EquilibriumSolution(Regime.MAX_RATE, p, r, compute_constants(0.0, r, p))


def max_rate_margin(p: ModelParams, roots: CharRoots | None = None) -> float:
    """``d_bar/rho + 1/r6``: positive means a positive barrier exists at ``gamma = 0``."""
    r = roots or compute_roots(p)
    return p.perpetuity + 1.0 / r.r6


def x_m(p: ModelParams, roots: CharRoots | None = None) -> float:
    """Maximiser of the max-rate variance ``(d_bar/rho)^2 (e^{r8 x} - e^{2 r6 x})``."""
    r = roots or compute_roots(p)
    return math.log(2 * r.r6 / r.r8) / (r.r8 - 2 * r.r6)


def max_rate_dV(x, gamma: float, p: ModelParams, roots: CharRoots | None = None):
    """Derivative of the max-rate value function, written out explicitly."""
    r = roots or compute_roots(p)
    m = p.perpetuity
    x = np.asarray(x, dtype=float)
    out = -m * r.r6 * np.exp(r.r6 * x) - 0.5 * gamma * m * m * (r.r8 * np.exp(r.r8 * x) - 2 * r.r6 * np.exp(2 * r.r6 * x))
    return _scalar(out)


def _refined_max(fun, grid):
    """Max of ``fun`` over a dense grid, polished by a bounded search around the best node."""
    vals = fun(grid)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo_x, hi_x = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi_x > lo_x:
        res = minimize_scalar(lambda x: -float(fun(x)), bounds=(lo_x, hi_x), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def _largest_gamma(ok, tol) -> float:
    """Largest ``gamma >= 0`` with ``ok(gamma)`` true, assuming ``ok`` switches once."""
    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, 1e-3
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def max_rate_dV_bound(p: ModelParams, tol: float = EPS_TILDE_TOL, n_grid: int = 2000) -> float:
    """Largest ``gamma`` with ``sup V'(x) <= 1`` over ``(0, 2 x_m]`` for the max-rate solution.

    Concavity of V beyond ``2 x_m`` makes that interval sufficient, so below
    this bound the maximum rate maximises the HJB bracket everywhere.
    """
    r = compute_roots(p)
    if not max_rate_margin(p, r) < 0:
        raise PreconditionViolated("requires d_bar/rho + 1/r6 < 0")
    grid = np.linspace(0.0, 2 * x_m(p, r), n_grid + 1)[1:]
    return _largest_gamma(lambda g: _refined_max(lambda x: max_rate_dV(x, g, p, r), grid) <= 1.0, tol)


def negative_root_bound(p: ModelParams, tol: float = EPS_TILDE_TOL, n_grid: int = SCAN_POINTS) -> float:
    """Largest ``gamma`` for which ``f(x, gamma) = 1`` still has a solution at some ``x <= 0``.

    In the max-rate regime the barrier equation's root sits below zero for
    small ``gamma`` and moves left as ``gamma`` grows, until it merges with a
    second root and disappears. Returns 0 if there is no such root at all.
    """
    r = compute_roots(p)
    grid = np.linspace(-scan_max(r), 0.0, n_grid + 1)
    return _largest_gamma(lambda g: _refined_max(lambda x: f_value(x, g, r, p) - 1.0, grid) >= 0.0, tol)


def eps_tilde_report(p: ModelParams, tol: float = EPS_TILDE_TOL) -> dict:
    dv = max_rate_dV_bound(p, tol)
    neg = negative_root_bound(p, tol)
    eps = min(dv, neg) if neg > 0 else dv
    return {"eps_tilde": eps, "dV_bound": dv, "negative_root_bound": neg, "x_m": x_m(p)}


def find_eps_tilde(p: ModelParams, tol: float = EPS_TILDE_TOL) -> float:
    """Risk-aversion bound below which paying the max rate is the reported equilibrium.

    The smaller of :func:`negative_root_bound` and :func:`max_rate_dV_bound`;
    the first is dropped when the barrier equation has no non-positive root
    even at ``gamma = 0``. Either way ``V' <= 1`` holds below the result.
    """
    return eps_tilde_report(p, tol)["eps_tilde"]


def regime_threshold(a: float, b: float, rho: float) -> float | None:
    """The ``d_bar`` at which ``d_bar/rho + 1/r6`` changes sign (``None`` if it never does)."""
    if a <= 0:
        return None

    def margin(d):
        return max_rate_margin(ModelParams(a, b, rho, d, 0.0))

    lo, hi = 1e-12, max(a, 1e-6)
    while margin(hi) <= 0:
        hi *= 2
    return float(brentq(margin, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def classify_regime(p: ModelParams) -> Regime:
    margin = max_rate_margin(p)
    if margin < 0:
        return Regime.MAX_RATE if p.gamma < find_eps_tilde(p) else Regime.UNRESOLVED
    if margin > 0:
        try:
            xt = solve_barrier(p)
        except MultipleRoots:
            return Regime.UNRESOLVED
        return Regime.BARRIER if xt is not None else Regime.UNRESOLVED
    return Regime.UNRESOLVED


def solve_equilibrium(p: ModelParams) -> EquilibriumSolution:
    """Closed-form equilibrium, or :class:`UnresolvedRegime` outside both solved regimes."""
    regime = classify_regime(p)
    if regime is Regime.MAX_RATE:
        return max_rate_solution(p)
    if regime is Regime.BARRIER:
        return barrier_solution(p, solve_barrier(p), Regime.BARRIER)
    raise UnresolvedRegime(
        f"no closed-form equilibrium for {p}: margin d_bar/rho + 1/r6 = {max_rate_margin(p):.6g}"
    )
