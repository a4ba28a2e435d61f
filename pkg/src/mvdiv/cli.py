"""Command-line front end: ``mvdiv {solve,sweep,eval,simulate,verify}``.

Every subcommand reads one JSON config holding the model parameters at the
top level plus optional sections::

    {"a": 0.1, "b": 0.35, "rho": 0.05, "d_bar": 0.05, "gamma": 0.2,
     "sim": {"dt": 0.001, "n_paths": 20000, "seed": 7},
     "strategy": {"type": "equilibrium"},
     "x0": 0.5,
     "x_grid": {"start": 0.0, "stop": 2.0, "step": 0.05},
     "gamma_grid": {"start": 0.0, "stop": 0.4, "step": 0.02},
     "verify": {"mc_paths": 10000}}

Outputs go to ``--out`` (default: current directory). Each file embeds the
digest of a :class:`RunManifest`, which is also written to ``manifest.json``.
Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 unresolved regime.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .closed_form import (
    EquilibriumSolution,
    MultipleRoots,
    Regime,
    UnresolvedRegime,
    barrier_solution,
    compute_roots,
    find_eps_tilde,
    max_rate_solution,
    solve_barrier,
    solve_equilibrium,
    x_m,
)
from .equilibrium import WindowUnresolved, default_d_dev_grid, default_x0_grid, equilibrium_sweep
from .model import ModelParams, ParameterError, validate_params
from .oracle import SingularSystem, hjb_residual, solve_ode, write_grid_csv
from .simulate import SimConfig, SimConfigError, estimate_many, run_paths, summarize, write_paths_csv
from .strategy import Barrier, Constant, Strategy, StrategyError, from_spec

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_UNRESOLVED = 0, 1, 2, 3
CONFIG_KEYS = {"a", "b", "rho", "d_bar", "gamma", "sim", "strategy", "x0", "x_grid",
               "gamma_grid", "dbar_grid", "verify"}
VERIFY_KEYS = {"checks", "mc_x0", "mc_paths", "mc_dt", "n_sigma", "sweep_paths", "sweep_dt",
               "sweep_x0", "ode_nodes"}
CHECKS = ("smooth_pasting", "hjb_residual", "ode_oracle", "monte_carlo", "equilibrium_sweep")
MAX_GRID = 100_000


class ConfigError(ValueError):
    pass


@dataclass
class RunManifest:
    """What produced a set of outputs. The digest covers every field, so two
    runs share it exactly when command, parameters, settings and seed agree."""

    command: str
    params: dict
    config_digest: str
    settings: dict
    seed: int | None
    version: str = __version__
    outputs: list[str] = field(default_factory=list)

    def _canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self._canonical().encode()).hexdigest()

    def comment(self) -> str:
        return f"manifest sha256={self.digest} command={self.command} version={self.version}"

    def to_dict(self) -> dict:
        return {**asdict(self), "digest": self.digest}


def _digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    raw: dict
    params: ModelParams
    sim: SimConfig
    base_dir: Path

    def section(self, key: str, default=None):
        return self.raw.get(key, default)


def _read_json(path: Path) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_config(path: str | Path, args: argparse.Namespace) -> RunConfig:
    path = Path(path)
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    params = validate_params(raw)
    sim_raw = raw.get("sim", {})
    if isinstance(sim_raw, str):
        sim_raw = _read_json(path.parent / sim_raw)
    if not isinstance(sim_raw, dict):
        raise ConfigError("'sim' must be an object or a path to one")
    sim = SimConfig.from_mapping(sim_raw)
    over = {k: v for k, v in (("seed", args.seed), ("n_paths", args.paths), ("dt", args.dt))
            if v is not None}
    sim = sim.with_(**over)
    resolved = dict(raw, sim=sim.to_dict())
    return RunConfig(resolved, params, sim, path.parent)


def parse_grid(spec: Any, name: str) -> list[float]:
    """A list of numbers or ``{"start", "stop", "step"}`` (stop included)."""
    if isinstance(spec, list):
        vals = spec
    elif isinstance(spec, dict):
        try:
            start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{name} needs numeric start, stop and step") from None
        if not (step > 0 and stop >= start and all(map(math.isfinite, (start, stop, step)))):
            raise ConfigError(f"{name}: need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        if n > MAX_GRID:
            raise ConfigError(f"{name} has more than {MAX_GRID} points")
        vals = [round(start + i * step, 12) for i in range(n)]
    else:
        raise ConfigError(f"{name} must be a list or a start/stop/step object")
    try:
        out = [float(v) for v in vals]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain numbers only") from None
    if not out or not all(math.isfinite(v) for v in out):
        raise ConfigError(f"{name} must be a non-empty list of finite numbers")
    return out


def resolve_strategy(cfg: RunConfig) -> tuple[Strategy, EquilibriumSolution | None]:
    """The configured strategy and, when one exists, its closed form."""
    spec = cfg.section("strategy", {"type": "equilibrium"})
    if not isinstance(spec, dict):
        raise ConfigError("'strategy' must be an object")
    spec = dict(spec)
    kind = str(spec.get("type", "equilibrium")).lower()
    if "path" in spec:
        spec["path"] = str(cfg.base_dir / spec["path"])
    p = cfg.params
    if kind == "equilibrium":
        sol = solve_equilibrium(p)
        return from_spec(spec, p.d_bar, sol.x_tilde), sol
    s = from_spec(spec, p.d_bar)
    if isinstance(s, Barrier) and s.x_tilde > 0:
        return s, barrier_solution(p, s.x_tilde)
    if isinstance(s, Constant) and s.rate_value == p.d_bar:
        return s, max_rate_solution(p)
    return s, None


# ---------------------------------------------------------------- output


class Writer:
    def __init__(self, out: Path, manifest: RunManifest):
        self.out = out
        self.manifest = manifest
        out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        body = dict(payload, manifest=self.manifest.digest)
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.manifest.comment()}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return path

    def finish(self) -> None:
        (self.out / "manifest.json").write_text(
            json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _manifest(command: str, cfg: RunConfig, settings: dict, outputs: list[str],
              seeded: bool = True) -> RunManifest:
    return RunManifest(command=command, params=cfg.params.to_dict(), config_digest=_digest(cfg.raw),
                       settings=settings, seed=cfg.sim.seed if seeded else None, outputs=outputs)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- commands


def cmd_solve(cfg: RunConfig, args) -> int:
    sol = solve_equilibrium(cfg.params)
    summary = sol.summary()
    if sol.regime is Regime.MAX_RATE:
        summary["eps_tilde"] = find_eps_tilde(cfg.params)
    man = _manifest("solve", cfg, {}, ["solution.json"], seeded=False)
    w = Writer(args.out, man)
    w.json("solution.json", summary)
    w.finish()
    print(json.dumps(dict(summary, manifest=man.digest), indent=2, sort_keys=True))
    return EXIT_OK


def _sweep_rows(p: ModelParams, key: str, grid: list[float]):
    for v in grid:
        try:
            q = p.replace(**{key: v})
        except ParameterError as exc:
            raise ConfigError(f"{key}_grid value {v!r}: {exc}") from None
        try:
            xt = solve_barrier(q)
            status = "ok" if xt is not None else "NotFound"
        except MultipleRoots:
            xt, status = None, "MultipleRoots"
        yield [v, "" if xt is None else xt, status]


def cmd_sweep(cfg: RunConfig, args) -> int:
    has_g, has_d = "gamma_grid" in cfg.raw, "dbar_grid" in cfg.raw
    if has_g == has_d:
        raise ConfigError("sweep needs exactly one of gamma_grid or dbar_grid")
    key = "gamma" if has_g else "d_bar"
    grid = parse_grid(cfg.raw["gamma_grid" if has_g else "dbar_grid"], f"{key}_grid")
    man = _manifest("sweep", cfg, {"grid": key}, ["sweep.csv"], seeded=False)
    w = Writer(args.out, man)
    rows = list(_sweep_rows(cfg.params, key, grid))
    w.csv("sweep.csv", [key, "x_tilde", "status"], rows)
    w.finish()
    for r in rows:
        print(f"{key}={r[0]:<8g} x_tilde={r[1] if r[1] == '' else format(r[1], '.10g'):<16} {r[2]}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    s, sol = resolve_strategy(cfg)
    p = cfg.params
    if "x_grid" in cfg.raw:
        xs = np.array(parse_grid(cfg.raw["x_grid"], "x_grid"))
    else:
        xs = np.linspace(0.0, 4.0 * max(sol.barrier if sol else 0.0, 1.0 / abs(compute_roots(p).r6)), 81)
    if np.any(xs < 0):
        raise ConfigError("x_grid values must be >= 0")
    grid = solve_ode(p, s)
    if sol is not None:
        G, H, V = (np.atleast_1d(f(xs)) for f in (sol.G, sol.H, sol.V))
        source = "closed_form"
    else:
        if xs.max() > grid.x_nodes[-1]:
            raise ConfigError(f"x_grid exceeds the oracle domain [0, {grid.x_nodes[-1]:.6g}]")
        G, H, V = (np.interp(xs, grid.x_nodes, v) for v in (grid.G_vals, grid.H_vals, grid.V_vals))
        source = "ode_oracle"
    man = _manifest("eval", cfg, {"strategy": s.label, "source": source},
                    ["eval.csv", "oracle_grid.csv"], seeded=False)
    w = Writer(args.out, man)
    w.csv("eval.csv", ["x", "G", "H", "V"], zip(xs, G, H, V))
    write_grid_csv(args.out / "oracle_grid.csv", grid, comment=man.comment())
    w.finish()
    print(f"{s.label}: {xs.size} points from {source}; oracle grid {grid.x_nodes.size} nodes")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    s, sol = resolve_strategy(cfg)
    p, sim = cfg.params, cfg.sim
    x0 = cfg.section("x0")
    if x0 is None:
        x0 = sol.barrier if sol is not None and sol.barrier > 0 else 1.0 / abs(compute_roots(p).r6)
    if isinstance(x0, bool) or not isinstance(x0, (int, float)) or not x0 > 0:
        raise ConfigError("x0 must be a number > 0")
    Y, ruin, _ = run_paths(p, s, [float(x0)], sim)
    est = summarize(Y[0], ruin[0] >= 0, p.gamma, float(x0))
    summary = {"strategy": s.label, "estimate": est.to_dict(), "t_max": sim.n_steps(p) * sim.dt}
    if sol is not None:
        G, H = sol.G(float(x0)), sol.H(float(x0))
        summary["closed_form"] = {"G": G, "H": H, "z_Y": (est.mean_Y - G) / est.stderr_Y,
                                  "z_Y2": (est.mean_Y2 - H) / est.stderr_Y2}
    man = _manifest("simulate", cfg, {"strategy": s.label, "x0": float(x0), "sim": sim.to_dict()},
                    ["paths.csv", "summary.json"])
    w = Writer(args.out, man)
    write_paths_csv(args.out / "paths.csv", Y[0], ruin[0], sim.dt, comment=man.comment())
    w.json("summary.json", summary)
    w.finish()
    print(f"{s.label} x0={x0:g}: mean_Y={est.mean_Y:.6g} (se {est.stderr_Y:.2g}) "
          f"J={est.J:.6g} ruin={est.ruin_fraction:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- verify


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, **self.detail}


def _check_smooth_pasting(sol: EquilibriumSolution, opts) -> Check:
    p = sol.params
    if sol.regime is Regime.MAX_RATE:
        xs = np.linspace(0.0, 2.0 * x_m(p), 2001)[1:]
        dv = float(np.max(sol.V(xs, 1)))
        return Check("max_rate_condition", dv <= 1.0 + 1e-8, {"sup_dV": dv, "tol": 1e-8})
    xt = sol.barrier
    gaps = {f"{f}{'_prime' * k}": abs(getattr(sol, f)(xt, k, "left") - getattr(sol, f)(xt, k, "right"))
            for f in ("G", "H") for k in (0, 1)}
    dv = abs(sol.V(xt, 1) - 1.0)
    ok = max(gaps.values()) <= 1e-10 and dv <= 1e-8
    return Check("smooth_pasting", ok, {"gaps": gaps, "dV_minus_1": dv, "tol_gap": 1e-10, "tol_dV": 1e-8})


def _check_hjb(sol: EquilibriumSolution, opts) -> Check:
    p = sol.params
    xt = sol.barrier
    top = 4.0 * max(xt, 1.0 / abs(sol.roots.r6))
    h = top / 2000
    xs = np.arange(1, 2001) * h
    xs = xs[np.abs(xs - xt) > h]
    r = hjb_residual(p, sol, xs)
    sup = float(np.max(np.abs(r.sup_residual)))
    rule = np.where(xs <= xt, 0.0, p.d_bar)
    mism = int(np.sum(r.argmax_d != rule))
    return Check("hjb_residual", sup <= 1e-8 and mism == 0,
                 {"sup_abs_residual": sup, "tol": 1e-8, "argmax_mismatches": mism, "n_points": int(xs.size)})


def _check_ode(sol: EquilibriumSolution, s: Strategy, opts) -> Check:
    g = solve_ode(sol.params, s, n_nodes=int(opts.get("ode_nodes", 4000)))
    eg = float(np.max(np.abs(g.G_vals - sol.G(g.x_nodes))))
    eh = float(np.max(np.abs(g.H_vals - sol.H(g.x_nodes))))
    return Check("ode_oracle", max(eg, eh) <= 1e-4, {"max_err_G": eg, "max_err_H": eh, "tol": 1e-4,
                                                      "n_nodes": int(g.x_nodes.size)})


def _check_mc(sol: EquilibriumSolution, s: Strategy, cfg: RunConfig, opts) -> Check:
    p = sol.params
    scale = sol.barrier if sol.barrier > 0 else 1.0 / abs(sol.roots.r6)
    x0s = opts.get("mc_x0") or [0.5 * scale, scale, 2.0 * scale]
    sim = cfg.sim.with_(n_paths=int(opts.get("mc_paths", cfg.sim.n_paths)),
                        dt=float(opts.get("mc_dt", cfg.sim.dt)))
    k = float(opts.get("n_sigma", 3.0))
    rows, ok = [], True
    for e in estimate_many(p, s, x0s, sim):
        G, H = sol.G(e.x0), sol.H(e.x0)
        zy, zh = (e.mean_Y - G) / e.stderr_Y, (e.mean_Y2 - H) / e.stderr_Y2
        ok &= abs(zy) <= k and abs(zh) <= k
        rows.append({"x0": e.x0, "mean_Y": e.mean_Y, "G": G, "z_Y": zy, "mean_Y2": e.mean_Y2, "H": H,
                     "z_Y2": zh})
    return Check("monte_carlo", bool(ok), {"n_sigma": k, "sim": sim.to_dict(), "points": rows})


def _check_sweep(sol: EquilibriumSolution, s: Strategy, cfg: RunConfig, opts) -> Check:
    p = sol.params
    scale = sol.barrier if sol.barrier > 0 else 1.0 / abs(sol.roots.r6)
    sim = cfg.sim.with_(n_paths=int(opts.get("sweep_paths", 5000)),
                        dt=float(opts.get("sweep_dt", 2.5e-3)))
    x0s = opts.get("sweep_x0") or default_x0_grid(s, scale)
    rep = equilibrium_sweep(p, s, x0s, default_d_dev_grid(p.d_bar), cfg=sim)
    w = rep.worst
    return Check("equilibrium_sweep", rep.verdict == "PASS",
                 {"sim": sim.to_dict(), "n_cells": len(rep.cells),
                  "worst_cell": {"x0": w.x0, "d_dev": w.d_dev, "margin": w.margin}})


def cmd_verify(cfg: RunConfig, args) -> int:
    opts = dict(cfg.section("verify", {}))
    unknown = set(opts) - VERIFY_KEYS
    if unknown:
        raise ConfigError(f"unknown verify key(s): {', '.join(sorted(unknown))}")
    if args.paths is not None:
        opts["mc_paths"] = args.paths
    if args.dt is not None:
        opts["mc_dt"] = args.dt
    opts.setdefault("mc_paths", 10_000)
    opts.setdefault("mc_dt", 2e-3)
    selected = opts.get("checks", list(CHECKS))
    bad = set(selected) - set(CHECKS)
    if bad:
        raise ConfigError(f"unknown check(s): {', '.join(sorted(bad))}")

    sol = solve_equilibrium(cfg.params)
    if args.debug_corrupt_c1 is not None:
        sol = EquilibriumSolution(sol.regime, sol.params, sol.roots,
                                  sol.constants.perturbed(C1=args.debug_corrupt_c1))
    s = from_spec({"type": "equilibrium"}, cfg.params.d_bar, sol.x_tilde)
    runners: dict[str, Callable[[], Check]] = {
        "smooth_pasting": lambda: _check_smooth_pasting(sol, opts),
        "hjb_residual": lambda: _check_hjb(sol, opts),
        "ode_oracle": lambda: _check_ode(sol, s, opts),
        "monte_carlo": lambda: _check_mc(sol, s, cfg, opts),
        "equilibrium_sweep": lambda: _check_sweep(sol, s, cfg, opts),
    }
    checks = []
    for name in CHECKS:
        if name not in selected:
            continue
        t0 = time.perf_counter()
        c = runners[name]()
        checks.append(c)
        _log(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  ({time.perf_counter() - t0:.1f}s)")
    failed = [c.name for c in checks if not c.passed]
    report = {"regime": sol.regime.value, "strategy": s.label, "checks": [c.to_dict() for c in checks],
              "failed": failed, "verdict": "FAIL" if failed else "PASS"}
    settings = {"options": opts, "debug_corrupt_c1": args.debug_corrupt_c1}
    man = _manifest("verify", cfg, settings, ["verify.json"])
    w = Writer(args.out, man)
    w.json("verify.json", report)
    w.finish()
    if failed:
        print(f"verification FAILED: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"verification passed ({len(checks)} checks, regime {sol.regime.value})")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "eval": cmd_eval, "simulate": cmd_simulate,
            "verify": cmd_verify}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvdiv", description="Mean-variance equilibrium dividend strategies.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "closed-form equilibrium: regime, barrier, constants",
        "sweep": "barrier level over a gamma_grid or dbar_grid",
        "eval": "tabulate G, H, V on an x grid",
        "simulate": "Monte Carlo paths from x0",
        "verify": "run the verification checks and gate on the result",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sp.add_argument("--seed", type=_u64, help="override sim.seed")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--paths", type=int, help="override the number of paths")
        sp.add_argument("--dt", type=float, help="override the time step")
        if name == "verify":
            sp.add_argument("--debug-corrupt-c1", type=float, nargs="?", const=1.01, default=None,
                            metavar="FACTOR", help="fault injection: scale C1 (default 1.01)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        return COMMANDS[args.command](cfg, args)
    except UnresolvedRegime as exc:
        _log(f"unresolved: {exc}")
        return EXIT_UNRESOLVED
    except (ConfigError, ParameterError, SimConfigError, StrategyError, WindowUnresolved,
            SingularSystem) as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
