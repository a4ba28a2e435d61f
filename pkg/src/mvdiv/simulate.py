"""Monte Carlo engine for the controlled surplus.

Euler-Maruyama on a uniform grid with left-endpoint dividend accumulation,
ruin at the first grid point with ``X <= 0`` (optionally also by a
Brownian-bridge crossing test between positive endpoints), truncation at
``t_max``. Path ``i`` draws its noise from a stream keyed by ``(seed, i)``,
so estimates do not depend on batching or thread count, and two strategies
run with the same seed see the same increments.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _backend
from .model import ModelParams
from .strategy import Strategy, TabulatedOutOfRange

__all__ = [
    "SimConfigError",
    "SimConfig",
    "PathOutcome",
    "MCEstimate",
    "KernelInputs",
    "load_sim_config",
    "thread_count",
    "run_paths",
    "simulate_path",
    "estimate",
    "estimate_many",
    "summarize",
    "write_paths_csv",
]

SIM_KEYS = ("dt", "n_paths", "seed", "t_max", "bridge_correction", "batch_size")


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Discretisation and sampling settings.

    ``t_max=None`` picks the shortest horizon whose discarded dividend tail,
    at most ``exp(-rho t_max) d_bar / rho``, is within ``truncation_tol``
    times ``d_bar / rho``.
    """

    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    t_max: float | None = None
    bridge_correction: bool = True
    batch_size: int = 2048
    truncation_tol: float = 1e-6

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise SimConfigError("dt must be > 0")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise SimConfigError("n_paths must be an integer >= 1")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise SimConfigError("batch_size must be an integer >= 1")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise SimConfigError("seed must be an unsigned 64-bit integer")
        if self.t_max is not None and not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise SimConfigError("t_max must be > 0")
        if not 0 < self.truncation_tol <= 1:
            raise SimConfigError("truncation_tol must be in (0, 1]")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "batch_size", int(self.batch_size))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "bridge_correction", bool(self.bridge_correction))

    def horizon(self, p: ModelParams) -> float:
        if self.t_max is None:
            return math.log(1.0 / self.truncation_tol) / p.rho
        if math.exp(-p.rho * self.t_max) > self.truncation_tol * (1 + 1e-12):
            raise SimConfigError(
                f"t_max={self.t_max} leaves a dividend tail above truncation_tol={self.truncation_tol:g} "
                f"of d_bar/rho; need t_max >= {math.log(1 / self.truncation_tol) / p.rho:.4g}"
            )
        return float(self.t_max)

    def n_steps(self, p: ModelParams) -> int:
        return int(math.ceil(self.horizon(p) / self.dt - 1e-9))

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise SimConfigError(f"unknown simulation key(s): {', '.join(sorted(unknown))}")
        return cls(**dict(raw))


def load_sim_config(path: str | Path) -> SimConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise SimConfigError("simulation config must be a JSON object")
    return SimConfig.from_mapping(raw)


def thread_count() -> int:
    """Worker threads for path batches, capped by ``MVDIV_THREADS``."""
    n = os.cpu_count() or 1
    cap = os.environ.get("MVDIV_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise SimConfigError(f"MVDIV_THREADS must be an integer, got {cap!r}") from None
    return n


@dataclass(frozen=True)
class KernelInputs:
    """Per-step constants shared by both kernel backends."""

    dt: float
    q: float
    sig: float
    bc: float
    bridge: bool
    n_steps: int
    seed: int
    thresholds: np.ndarray
    rates: np.ndarray
    mu: np.ndarray

    @classmethod
    def build(cls, p: ModelParams, s: Strategy, cfg: SimConfig) -> "KernelInputs":
        th, rates = s.kernel_arrays()
        dt = cfg.dt
        return cls(
            dt=dt,
            q=math.exp(-p.rho * dt),
            sig=p.b * math.sqrt(dt),
            bc=2.0 / (p.b * p.b * dt),
            bridge=cfg.bridge_correction,
            n_steps=cfg.n_steps(p),
            seed=cfg.seed,
            thresholds=th,
            rates=rates,
            mu=np.ascontiguousarray((p.a - rates) * dt),
        )

    def args(self):
        return (self.dt, self.q, self.sig, self.bc, self.bridge, self.n_steps, self.seed)


def _batches(n: int, size: int) -> list[tuple[int, int]]:
    return [(i, min(n, i + size)) for i in range(0, n, size)]


def _map_batches(fn, spans, threads: int):
    if threads <= 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def run_paths(p: ModelParams, s: Strategy, x0s: Sequence[float], cfg: SimConfig, *,
              path_start: int = 0, n_paths: int | None = None, residuals: bool = False,
              backend: str | None = None, threads: int | None = None):
    """Raw per-path arrays ``(Y, ruin_step, residual)``, each shaped ``(len(x0s), n)``.

    ``ruin_step[j, i]`` is the index of the step during which path ``i``
    from ``x0s[j]`` was ruined, or -1 when censored at ``t_max``.
    """
    x0 = np.ascontiguousarray(np.atleast_1d(np.asarray(x0s, dtype=float)))
    if x0.ndim != 1 or x0.size == 0:
        raise ValueError("x0s must be a non-empty 1-d sequence")
    if not np.all(x0 > 0) or not np.all(np.isfinite(x0)):
        raise ValueError("initial surplus must be finite and > 0")
    n = cfg.n_paths if n_paths is None else int(n_paths)
    k = KernelInputs.build(p, s, cfg)
    kern = _backend.get(backend)
    nx = x0.size

    def one(a: int, b: int):
        Y = np.zeros((nx, b - a))
        ruin = np.empty((nx, b - a), dtype=np.int64)
        res = np.zeros((nx, b - a)) if residuals else np.zeros((1, 1))
        err = kern.simulate_batch(*k.args(), path_start + a, k.thresholds, k.rates, k.mu,
                                  x0, Y, ruin, res, residuals)
        if err:
            raise TabulatedOutOfRange(f"simulated surplus left the range of {s.label}")
        return Y, ruin, res

    spans = _batches(n, cfg.batch_size)
    parts = _map_batches(one, spans, threads or thread_count())
    Y = np.concatenate([pt[0] for pt in parts], axis=1)
    ruin = np.concatenate([pt[1] for pt in parts], axis=1)
    res = np.concatenate([pt[2] for pt in parts], axis=1) if residuals else None
    return Y, ruin, res


@dataclass(frozen=True)
class PathOutcome:
    path_index: int
    Y: float
    ruin_time: float | None
    identity_residual: float
    t_max: float

    @property
    def censored(self) -> bool:
        return self.ruin_time is None


def simulate_path(p: ModelParams, s: Strategy, x0: float, cfg: SimConfig, path_index: int,
                  backend: str | None = None) -> PathOutcome:
    """One path, reproducible from ``(cfg.seed, path_index)`` alone."""
    Y, ruin, res = run_paths(p, s, [x0], cfg, path_start=path_index, n_paths=1,
                             residuals=True, backend=backend, threads=1)
    step = int(ruin[0, 0])
    return PathOutcome(
        path_index=int(path_index),
        Y=float(Y[0, 0]),
        ruin_time=None if step < 0 else (step + 1) * cfg.dt,
        identity_residual=float(res[0, 0]),
        t_max=cfg.n_steps(p) * cfg.dt,
    )


@dataclass(frozen=True)
class MCEstimate:
    x0: float
    gamma: float
    mean_Y: float
    mean_Y2: float
    var_Y: float
    J: float
    stderr_Y: float
    stderr_Y2: float
    stderr_J: float
    n_paths: int
    ruin_fraction: float
    stderr_ruin: float = field(default=0.0)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def summarize(Y: np.ndarray, ruined: np.ndarray, gamma: float, x0: float) -> MCEstimate:
    """Moments and delta-method standard errors from per-path samples."""
    Y = np.asarray(Y, dtype=float)
    n = Y.size
    Y2 = Y * Y
    m1 = float(np.mean(Y))
    m2 = float(np.mean(Y2))
    var = m2 - m1 * m1
    # influence function of J = m1 - (gamma/2)(m2 - m1^2)
    infl = (1.0 + gamma * m1) * Y - 0.5 * gamma * Y2
    ddof = 1 if n > 1 else 0
    se = lambda v: float(np.std(v, ddof=ddof) / math.sqrt(n))  # noqa: E731
    rf = float(np.mean(ruined))
    return MCEstimate(
        x0=float(x0), gamma=float(gamma), mean_Y=m1, mean_Y2=m2, var_Y=var,
        J=m1 - 0.5 * gamma * var, stderr_Y=se(Y), stderr_Y2=se(Y2), stderr_J=se(infl),
        n_paths=n, ruin_fraction=rf, stderr_ruin=math.sqrt(rf * (1 - rf) / n),
    )


def estimate_many(p: ModelParams, s: Strategy, x0s: Sequence[float], cfg: SimConfig,
                  backend: str | None = None, threads: int | None = None) -> list[MCEstimate]:
    """Estimates for several starting points driven by the same paths' noise.

    Each entry is bit-identical to :func:`estimate` at that starting point.
    """
    Y, ruin, _ = run_paths(p, s, x0s, cfg, backend=backend, threads=threads)
    return [summarize(Y[j], ruin[j] >= 0, p.gamma, x) for j, x in enumerate(np.atleast_1d(x0s))]


def estimate(p: ModelParams, s: Strategy, x0: float, cfg: SimConfig,
             backend: str | None = None, threads: int | None = None) -> MCEstimate:
    return estimate_many(p, s, [x0], cfg, backend=backend, threads=threads)[0]


def write_paths_csv(path: str | Path, Y: np.ndarray, ruin_step: np.ndarray, dt: float,
                    path_start: int = 0, comment: str | None = None) -> None:
    """Per-path dump with columns ``path_index, Y, ruin_time, censored``."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["path_index", "Y", "ruin_time", "censored"])
        for i, (y, k) in enumerate(zip(Y, ruin_step)):
            censored = k < 0
            w.writerow([path_start + i, repr(float(y)), "" if censored else repr((int(k) + 1) * dt),
                        int(censored)])
