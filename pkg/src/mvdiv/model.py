"""Problem instance: parameters of the controlled surplus and its characteristic roots."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

__all__ = [
    "ParameterError",
    "ModelParams",
    "CharRoots",
    "validate_params",
    "load_params",
    "compute_roots",
    "quadratic_roots",
]

PARAM_KEYS = ("a", "b", "rho", "d_bar", "gamma")


class ParameterError(ValueError):
    """Raised when a parameter record violates a sign or finiteness constraint."""


@dataclass(frozen=True)
class ModelParams:
    """Drift ``a``, volatility ``b``, discount ``rho``, max dividend rate ``d_bar``
    and variance aversion ``gamma``."""

    a: float
    b: float
    rho: float
    d_bar: float
    gamma: float

    def __post_init__(self) -> None:
        for name in PARAM_KEYS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterError(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.b <= 0:
            raise ParameterError("b must be > 0")
        if self.rho <= 0:
            raise ParameterError("rho must be > 0")
        if self.d_bar <= 0:
            raise ParameterError("d_bar must be > 0")
        if self.gamma < 0:
            raise ParameterError("gamma must be >= 0")

    @property
    def perpetuity(self) -> float:
        """``d_bar / rho``: present value of paying the max rate forever."""
        return self.d_bar / self.rho

    def replace(self, **changes: float) -> "ModelParams":
        values = asdict(self)
        values.update(changes)
        return ModelParams(**values)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def validate_params(raw: Mapping[str, Any]) -> ModelParams:
    """Build a :class:`ModelParams` from a mapping with keys a, b, rho, d_bar, gamma.

    Unknown keys are ignored so a full run configuration can be passed directly.
    """
    missing = [k for k in PARAM_KEYS if k not in raw]
    if missing:
        raise ParameterError(f"missing parameter(s): {', '.join(missing)}")
    return ModelParams(**{k: raw[k] for k in PARAM_KEYS})


def load_params(path: str | Path) -> ModelParams:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ParameterError("configuration must be a JSON object")
    return validate_params(raw)


def quadratic_roots(drift: float, b: float, k_rho: float) -> tuple[float, float]:
    """Positive and negative roots of ``(b^2/2) r^2 + drift r - k_rho = 0``.

    The larger-magnitude root comes from the quadratic formula without
    cancellation; the other from the product ``-2 k_rho / b^2``.
    """
    half_b2 = 0.5 * b * b
    disc = math.sqrt(drift * drift + 4.0 * half_b2 * k_rho)
    product = -k_rho / half_b2
    if drift >= 0:
        neg = (-drift - disc) / (2.0 * half_b2)
        pos = product / neg
    else:
        pos = (-drift + disc) / (2.0 * half_b2)
        neg = product / pos
    return pos, neg


@dataclass(frozen=True)
class CharRoots:
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    r6: float
    r7: float
    r8: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.r1, self.r2, self.r3, self.r4, self.r5, self.r6, self.r7, self.r8)


def compute_roots(p: ModelParams) -> CharRoots:
    """Roots of the four characteristic quadratics.

    ``r1, r2`` (drift a, discount rho), ``r3, r4`` (drift a, discount 2 rho),
    ``r5, r6`` (drift a - d_bar, rho) and ``r7, r8`` (drift a - d_bar, 2 rho).
    """
    r1, r2 = quadratic_roots(p.a, p.b, p.rho)
    r3, r4 = quadratic_roots(p.a, p.b, 2.0 * p.rho)
    r5, r6 = quadratic_roots(p.a - p.d_bar, p.b, p.rho)
    r7, r8 = quadratic_roots(p.a - p.d_bar, p.b, 2.0 * p.rho)
    return CharRoots(r1, r2, r3, r4, r5, r6, r7, r8)
