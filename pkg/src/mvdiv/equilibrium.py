"""Direct Monte Carlo test of the equilibrium condition.

For a candidate rule ``d*`` and a constant deviation ``d``, the perturbed rule
pays ``d`` on ``[0, eps)`` (or until ruin) and follows ``d*`` afterwards. The
candidate is an equilibrium at ``x`` when

    liminf_{eps -> 0} (J(x; d*) - J(x; d_eps)) / eps >= 0.

Both objectives are estimated on the same paths (common random numbers); the
liminf is approximated by extrapolating the slopes over an eps ladder to
``eps = 0`` with a least-squares line. Standard errors come from per-path
influence functions, so the correlation between ladder rungs is accounted
for exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend, _rng
from .model import ModelParams
from .simulate import KernelInputs, SimConfig, _batches, _map_batches, summarize, thread_count
from .strategy import Strategy, TabulatedOutOfRange

__all__ = [
    "WindowUnresolved",
    "PerturbationSpec",
    "PerturbedObjective",
    "SlopeEstimate",
    "CellResult",
    "SweepReport",
    "DEFAULT_LADDER",
    "window_steps",
    "cell_seed",
    "run_perturbations",
    "perturbed_objective",
    "slope_estimate",
    "extrapolation_weights",
    "equilibrium_sweep",
    "default_x0_grid",
    "default_d_dev_grid",
]

DEFAULT_LADDER = (0.4, 0.2, 0.1, 0.05)
RELATIVE_X0 = (0.25, 0.5, 1.0, 2.0, 4.0)
# a wrong free boundary shows up next to the candidate's own threshold
BOUNDARY_SCAN = (0.8, 0.9, 1.1, 1.2)
CELL_SALT = 0xD1B54A32D192ED03


class WindowUnresolved(ValueError):
    """The time step is too coarse to resolve the deviation window."""


@dataclass(frozen=True)
class PerturbationSpec:
    x0: float
    d_dev: float
    base: Strategy
    eps_ladder: tuple[float, ...] = DEFAULT_LADDER

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_ladder)
        if not eps or any(not 0 < e < 1 for e in eps):
            raise ValueError("eps_ladder values must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_ladder must be strictly decreasing")
        if not self.x0 > 0:
            raise ValueError("x0 must be > 0")
        if not 0 <= self.d_dev <= self.base.d_bar:
            raise ValueError(f"d_dev must lie in [0, {self.base.d_bar}]")
        object.__setattr__(self, "eps_ladder", eps)


def window_steps(eps: float, dt: float) -> int:
    """Steps covered by the deviation window ``[0, eps)``; requires ``dt <= eps/20``."""
    if dt > eps / 20 * (1 + 1e-9):
        raise WindowUnresolved(f"dt={dt:g} exceeds eps/20={eps / 20:g}")
    return int(math.ceil(eps / dt - 1e-9))


def cell_seed(seed: int, cell: int) -> int:
    """Seed of sweep cell ``cell``, a hash of ``(seed, cell)``."""
    return _rng.mix64(seed ^ _rng.mix64((cell + CELL_SALT) & _rng.MASK64))


def run_perturbations(p: ModelParams, base: Strategy, x0: float, d_devs: Sequence[float],
                      eps: Sequence[float], cfg: SimConfig, backend: str | None = None,
                      threads: int | None = None):
    """Per-path dividends of the base rule and of each ``(d_dev, eps)`` deviation.

    Returns ``(Y_base, ruin_base, Y_var, ruin_var, window_steps)``; variants
    are ordered with ``eps`` varying fastest. Base quantities are bit-identical to
    :func:`mvdiv.simulate.run_paths` with the same configuration.
    """
    if not x0 > 0:
        raise ValueError("x0 must be > 0")
    k = KernelInputs.build(p, base, cfg)
    pairs = [(float(d), float(e)) for d in d_devs for e in eps]
    for d, _ in pairs:
        if not 0 <= d <= base.d_bar:
            raise ValueError(f"deviation rate {d} outside [0, {base.d_bar}]")
    d_arr = np.array([d for d, _ in pairs], dtype=float)
    mu_dev = np.ascontiguousarray((p.a - d_arr) * cfg.dt)
    win = np.array([window_steps(e, cfg.dt) for _, e in pairs], dtype=np.int64)
    kern = _backend.get(backend)
    nv = len(pairs)

    def one(a: int, b: int):
        Yb = np.zeros(b - a)
        rb = np.empty(b - a, dtype=np.int64)
        Yv = np.zeros((nv, b - a))
        rv = np.empty((nv, b - a), dtype=np.int64)
        err = kern.perturb_batch(*k.args(), a, k.thresholds, k.rates, k.mu, float(x0),
                                 d_arr, mu_dev, win, Yb, rb, Yv, rv)
        if err:
            raise TabulatedOutOfRange(f"simulated surplus left the range of {base.label}")
        return Yb, rb, Yv, rv

    parts = _map_batches(one, _batches(cfg.n_paths, cfg.batch_size), threads or thread_count())
    return (np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts]),
            np.concatenate([q[2] for q in parts], axis=1), np.concatenate([q[3] for q in parts], axis=1),
            win)


def _influence(Y: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    m1 = float(np.mean(Y))
    var = float(np.mean(Y * Y)) - m1 * m1
    return m1 - 0.5 * gamma * var, (1.0 + gamma * m1) * Y - 0.5 * gamma * Y * Y


def _se(v: np.ndarray) -> float:
    n = v.size
    return float(np.std(v, ddof=1 if n > 1 else 0) / math.sqrt(n))


@dataclass(frozen=True)
class PerturbedObjective:
    eps: float
    d_dev: float
    J_star: float
    J_eps: float
    stderr_diff: float
    slope: float
    stderr_slope: float
    window_ruin_fraction: float


@dataclass(frozen=True)
class SlopeEstimate:
    x0: float
    d_dev: float
    per_eps: tuple[PerturbedObjective, ...]
    extrapolated_slope: float
    stderr_extrapolated: float

    @property
    def slopes(self) -> np.ndarray:
        return np.array([r.slope for r in self.per_eps])


def extrapolation_weights(eps: Sequence[float]) -> np.ndarray:
    """Weights giving the eps = 0 intercept of the least-squares line through the slopes.

    With two rungs ``(e, e/2)`` this is the Richardson combination ``2 s(e/2) - s(e)``;
    a single rung is used as is.
    """
    e = np.asarray(eps, dtype=float)
    if e.size == 1:
        return np.ones(1)
    A = np.column_stack([np.ones_like(e), e])
    return np.linalg.pinv(A)[0]


def _slopes(p, x0, d_devs, eps, Yb, Yv, rv, win) -> list[SlopeEstimate]:
    g = p.gamma
    J_star, inf_star = _influence(Yb, g)
    w = extrapolation_weights(eps)
    out = []
    ne = len(eps)
    for i, d in enumerate(d_devs):
        rows = []
        combo = np.zeros_like(Yb)
        for j, e in enumerate(eps):
            v = i * ne + j
            J_eps, inf_eps = _influence(Yv[v], g)
            diff = inf_star - inf_eps
            se = _se(diff)
            rows.append(PerturbedObjective(
                eps=float(e), d_dev=float(d), J_star=J_star, J_eps=J_eps, stderr_diff=se,
                slope=(J_star - J_eps) / e, stderr_slope=se / e,
                window_ruin_fraction=float(np.mean((rv[v] >= 0) & (rv[v] < win[v]))),
            ))
            combo += (w[j] / e) * diff
        ext = float(sum(wj * r.slope for wj, r in zip(w, rows)))
        out.append(SlopeEstimate(x0=float(x0), d_dev=float(d), per_eps=tuple(rows),
                                 extrapolated_slope=ext, stderr_extrapolated=_se(combo)))
    return out


def perturbed_objective(p: ModelParams, spec: PerturbationSpec, eps: float, cfg: SimConfig,
                        backend: str | None = None) -> PerturbedObjective:
    """Paired estimates of ``J(x0; d*)`` and ``J(x0; d_eps)`` for one window length."""
    Yb, _, Yv, rv, win = run_perturbations(p, spec.base, spec.x0, [spec.d_dev], [eps], cfg, backend)
    return _slopes(p, spec.x0, [spec.d_dev], [eps], Yb, Yv, rv, win)[0].per_eps[0]


def slope_estimate(p: ModelParams, spec: PerturbationSpec, cfg: SimConfig,
                   backend: str | None = None) -> SlopeEstimate:
    Yb, _, Yv, rv, win = run_perturbations(p, spec.base, spec.x0, [spec.d_dev], spec.eps_ladder,
                                           cfg, backend)
    return _slopes(p, spec.x0, [spec.d_dev], spec.eps_ladder, Yb, Yv, rv, win)[0]


@dataclass(frozen=True)
class CellResult:
    x0: float
    d_dev: float
    seed: int
    slope: SlopeEstimate
    threshold: float
    ruin_fraction: float
    J_star: float
    stderr_J_star: float

    @property
    def passed(self) -> bool:
        return self.slope.extrapolated_slope >= self.threshold

    @property
    def margin(self) -> float:
        """Extrapolated slope minus the failure threshold; negative means FAIL."""
        return self.slope.extrapolated_slope - self.threshold

    def to_dict(self) -> dict:
        return {
            "x0": self.x0,
            "d_dev": self.d_dev,
            "seed": self.seed,
            "J_star": self.J_star,
            "stderr_J_star": self.stderr_J_star,
            "ruin_fraction": self.ruin_fraction,
            "per_eps": [asdict(r) for r in self.slope.per_eps],
            "extrapolated_slope": self.slope.extrapolated_slope,
            "stderr_extrapolated": self.slope.stderr_extrapolated,
            "threshold": self.threshold,
            "verdict": "PASS" if self.passed else "FAIL",
        }


@dataclass(frozen=True)
class SweepReport:
    params: ModelParams
    base: str
    eps_ladder: tuple[float, ...]
    tol: float
    config: dict
    cells: tuple[CellResult, ...] = field(default_factory=tuple)

    @property
    def verdict(self) -> str:
        return "PASS" if all(c.passed for c in self.cells) else "FAIL"

    @property
    def worst(self) -> CellResult:
        return min(self.cells, key=lambda c: c.margin)

    def to_dict(self) -> dict:
        w = self.worst
        return {
            "params": self.params.to_dict(),
            "base": self.base,
            "eps_ladder": list(self.eps_ladder),
            "tol": self.tol,
            "config": self.config,
            "verdict": self.verdict,
            "worst_cell": {"x0": w.x0, "d_dev": w.d_dev, "extrapolated_slope": w.slope.extrapolated_slope,
                           "threshold": w.threshold},
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def table(self) -> str:
        lines = [f"{'x0':>10} {'d_dev':>8} {'slope':>12} {'stderr':>10} {'threshold':>11}  verdict"]
        for c in self.cells:
            lines.append(f"{c.x0:10.5f} {c.d_dev:8.4f} {c.slope.extrapolated_slope:12.5f} "
                         f"{c.slope.stderr_extrapolated:10.5f} {c.threshold:11.5f}  "
                         f"{'PASS' if c.passed else 'FAIL'}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def default_x0_grid(base: Strategy, scale: float) -> list[float]:
    """``RELATIVE_X0 * scale`` plus a scan around each positive threshold of ``base``."""
    grid = {round(r * scale, 12) for r in RELATIVE_X0}
    for t in base.thresholds:
        if t > 0:
            grid.update(round(f * t, 12) for f in BOUNDARY_SCAN)
    return sorted(grid)


def default_d_dev_grid(d_bar: float) -> list[float]:
    return [0.0, 0.5 * d_bar, d_bar]


def equilibrium_sweep(p: ModelParams, base: Strategy, x0_grid: Sequence[float],
                      d_dev_grid: Sequence[float], eps_ladder: Sequence[float] = DEFAULT_LADDER,
                      cfg: SimConfig | None = None, tol: float | None = None, n_sigma: float = 3.0,
                      backend: str | None = None, threads: int | None = None,
                      progress=None) -> SweepReport:
    """Run the perturbation test over ``x0_grid x d_dev_grid``.

    A cell fails when its extrapolated slope is below ``-(n_sigma * stderr + tol)``
    with ``tol`` defaulting to ``1e-3 d_bar / rho``. All deviations at one
    starting point share that point's paths, drawn from :func:`cell_seed`
    applied to the grid index of ``x0``.
    """
    if len(x0_grid) == 0 or len(d_dev_grid) == 0:
        raise ValueError("x0_grid and d_dev_grid must be non-empty")
    cfg = cfg or SimConfig(dt=2.5e-3, n_paths=100_000)
    tol = 1e-3 * p.d_bar / p.rho if tol is None else float(tol)
    # validate ladder and window resolution up front
    PerturbationSpec(float(x0_grid[0]), float(d_dev_grid[0]), base, tuple(eps_ladder))
    for e in eps_ladder:
        window_steps(e, cfg.dt)
    cells = []
    for i, x0 in enumerate(x0_grid):
        seed = cell_seed(cfg.seed, i)
        ccfg = cfg.with_(seed=seed)
        Yb, rb, Yv, rv, win = run_perturbations(p, base, x0, d_dev_grid, eps_ladder, ccfg,
                                                backend, threads or thread_count())
        est = summarize(Yb, rb >= 0, p.gamma, x0)
        for j, sl in enumerate(_slopes(p, x0, d_dev_grid, eps_ladder, Yb, Yv, rv, win)):
            ne = len(eps_ladder)
            v = j * ne
            rf = float(np.mean((rv[v] >= 0) & (rv[v] < win[v])))
            cells.append(CellResult(
                x0=float(x0), d_dev=float(d_dev_grid[j]), seed=seed, slope=sl,
                threshold=-(n_sigma * sl.stderr_extrapolated + tol), ruin_fraction=rf,
                J_star=est.J, stderr_J_star=est.stderr_J,
            ))
        if progress is not None:
            progress(i + 1, len(x0_grid))
    return SweepReport(params=p, base=base.label, eps_ladder=tuple(float(e) for e in eps_ladder),
                       tol=tol, config=cfg.to_dict(), cells=tuple(cells))
