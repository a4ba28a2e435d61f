"""Mean-variance equilibrium dividend strategies."""

__version__ = "0.1.0"

from .closed_form import (  # noqa: E402
    EquilibriumSolution,
    Regime,
    UnresolvedRegime,
    barrier_solution,
    classify_regime,
    find_eps_tilde,
    max_rate_solution,
    regime_threshold,
    solve_barrier,
    solve_equilibrium,
)
from .equilibrium import SweepReport, equilibrium_sweep  # noqa: E402
from .model import CharRoots, ModelParams, ParameterError, compute_roots, load_params  # noqa: E402
from .oracle import hjb_residual, solve_ode  # noqa: E402
from .simulate import MCEstimate, SimConfig, estimate, estimate_many, simulate_path  # noqa: E402
from .strategy import Barrier, Constant, Strategy, Tabulated, Zero  # noqa: E402

__all__ = [
    "__version__",
    "ModelParams",
    "ParameterError",
    "CharRoots",
    "compute_roots",
    "load_params",
    "Regime",
    "UnresolvedRegime",
    "EquilibriumSolution",
    "solve_barrier",
    "solve_equilibrium",
    "barrier_solution",
    "max_rate_solution",
    "classify_regime",
    "find_eps_tilde",
    "regime_threshold",
    "Strategy",
    "Barrier",
    "Constant",
    "Zero",
    "Tabulated",
    "SimConfig",
    "MCEstimate",
    "estimate",
    "estimate_many",
    "simulate_path",
    "solve_ode",
    "hjb_residual",
    "equilibrium_sweep",
    "SweepReport",
]
