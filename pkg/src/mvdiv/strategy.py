"""Admissible feedback dividend-rate rules.

Every rule is a left-continuous step function of the surplus: a sorted list
of thresholds ``t_0 < t_1 < ...`` and one more rate than thresholds, with
``rate(x) = rates[#{j : t_j < x}]``. The barrier rule therefore pays
nothing at the barrier itself.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

__all__ = [
    "StrategyError",
    "TabulatedOutOfRange",
    "Strategy",
    "Barrier",
    "Constant",
    "Zero",
    "Tabulated",
    "dividend_rate",
    "load_tabulated_csv",
]


class StrategyError(ValueError):
    pass


class TabulatedOutOfRange(StrategyError):
    """Surplus beyond the last knot of a table with no extrapolation rate."""


def _check_rate(rate: float, d_bar: float) -> float:
    rate = float(rate)
    if not (0.0 <= rate <= d_bar) or math.isnan(rate):
        raise StrategyError(f"rate {rate!r} outside [0, d_bar={d_bar!r}]")
    return rate


class Strategy:
    """Base class; subclasses expose ``thresholds`` and ``rates`` arrays."""

    d_bar: float

    @property
    def thresholds(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def rates(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def label(self) -> str:
        return type(self).__name__

    def rate(self, x):
        """Dividend rate at surplus ``x`` (scalar or array)."""
        xa = np.asarray(x, dtype=float)
        if np.any(xa < 0):
            raise StrategyError("surplus must be >= 0")
        idx = np.searchsorted(self.thresholds, xa, side="left")
        out = self.rates[idx]
        if np.any(np.isnan(out)):
            raise TabulatedOutOfRange(f"surplus beyond last knot {self.thresholds[-1]!r} of {self.label}")
        return float(out) if out.ndim == 0 else out

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Contiguous ``(thresholds, rates)`` for the simulation kernels.

        A NaN rate marks the undefined region beyond a table's last knot.
        """
        return (np.ascontiguousarray(self.thresholds, dtype=np.float64),
                np.ascontiguousarray(self.rates, dtype=np.float64))

    @property
    def max_rate(self) -> float:
        return float(np.nanmax(self.rates))

    def far_field_rate(self) -> float:
        """Rate applied for all large surplus; NaN if undefined."""
        return float(self.rates[-1])


@dataclass(frozen=True)
class Barrier(Strategy):
    """Pay 0 for ``x <= x_tilde`` and ``d_bar`` above."""

    x_tilde: float
    d_bar: float

    def __post_init__(self):
        if not (self.x_tilde >= 0 and math.isfinite(self.x_tilde)):
            raise StrategyError("x_tilde must be finite and >= 0")
        if not self.d_bar > 0:
            raise StrategyError("d_bar must be > 0")

    @property
    def thresholds(self):
        return np.array([self.x_tilde])

    @property
    def rates(self):
        return np.array([0.0, self.d_bar])

    @property
    def label(self):
        return f"Barrier({self.x_tilde:.6g})"


@dataclass(frozen=True)
class Constant(Strategy):
    rate_value: float
    d_bar: float

    def __post_init__(self):
        _check_rate(self.rate_value, self.d_bar)

    @property
    def thresholds(self):
        return np.empty(0)

    @property
    def rates(self):
        return np.array([float(self.rate_value)])

    @property
    def label(self):
        return f"Constant({self.rate_value:.6g})"


@dataclass(frozen=True)
class Zero(Strategy):
    d_bar: float = 1.0

    @property
    def thresholds(self):
        return np.empty(0)

    @property
    def rates(self):
        return np.array([0.0])


@dataclass(frozen=True)
class Tabulated(Strategy):
    """Step rule from knots ``(x_i, rate_i)``.

    ``rate_i`` applies on ``(x_{i-1}, x_i]`` (and on ``[0, x_0]`` for the first
    knot), so the value at a knot comes from that knot. Beyond the last knot
    the ``extrapolate`` rate applies; without one, evaluation there raises
    :class:`TabulatedOutOfRange`.
    """

    knots: tuple[float, ...]
    knot_rates: tuple[float, ...]
    d_bar: float
    extrapolate: float | None = field(default=None)

    def __post_init__(self):
        knots = tuple(float(v) for v in self.knots)
        rates = tuple(_check_rate(v, self.d_bar) for v in self.knot_rates)
        if len(knots) == 0 or len(knots) != len(rates):
            raise StrategyError("knots and rates must be non-empty and of equal length")
        if knots[0] < 0 or any(b <= a for a, b in zip(knots, knots[1:])):
            raise StrategyError("knots must be >= 0 and strictly increasing")
        if self.extrapolate is not None:
            _check_rate(self.extrapolate, self.d_bar)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "knot_rates", rates)

    @property
    def thresholds(self):
        return np.array(self.knots)

    @property
    def rates(self):
        tail = math.nan if self.extrapolate is None else float(self.extrapolate)
        return np.array(self.knot_rates + (tail,))


def dividend_rate(s: Strategy, x):
    return s.rate(x)


def load_tabulated_csv(path: str | Path, d_bar: float, extrapolate: float | None = None) -> Tabulated:
    """Read a two-column ``x,rate`` CSV with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StrategyError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        [float(v) for v in header]
    except ValueError:
        pass
    else:
        raise StrategyError(f"{path}: header row required")
    xs: list[float] = []
    rs: list[float] = []
    for n, row in enumerate(body, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise StrategyError(f"{path}:{n}: expected 2 columns, got {len(row)}")
        xs.append(float(row[0]))
        rs.append(float(row[1]))
    return Tabulated(tuple(xs), tuple(rs), d_bar, extrapolate)


def from_spec(spec: dict, d_bar: float, x_tilde: float | None = None) -> Strategy:
    """Strategy from a config mapping such as ``{"type": "barrier", "x_tilde": 0.3}``.

    ``{"type": "equilibrium"}`` resolves to the supplied ``x_tilde`` (barrier)
    or the max rate when ``x_tilde`` is ``None``.
    """
    if not isinstance(spec, dict):
        raise StrategyError("strategy must be an object with a 'type' key")
    kind = str(spec.get("type", "equilibrium")).lower()
    try:
        return _build(kind, spec, d_bar, x_tilde)
    except (KeyError, TypeError) as exc:
        raise StrategyError(f"bad {kind} strategy spec: missing or invalid {exc}") from None


def _build(kind: str, spec: dict, d_bar: float, x_tilde: float | None) -> Strategy:
    if kind == "barrier":
        return Barrier(float(spec["x_tilde"]), d_bar)
    if kind == "constant":
        return Constant(float(spec.get("rate", d_bar)), d_bar)
    if kind == "zero":
        return Zero(d_bar)
    if kind == "tabulated":
        return load_tabulated_csv(spec["path"], d_bar, spec.get("extrapolate"))
    if kind == "equilibrium":
        return Constant(d_bar, d_bar) if x_tilde is None else Barrier(x_tilde, d_bar)
    raise StrategyError(f"unknown strategy type {kind!r}")
