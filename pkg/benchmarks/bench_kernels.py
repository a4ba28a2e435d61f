"""Compiled vs. numpy kernel throughput, with a bit-identity check.

    python benchmarks/bench_kernels.py [--paths N] [--steps K]

Reports nanoseconds per path-step for both backends on a barrier and a
constant-rate strategy, then confirms the two backends agree exactly.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mvdiv import _backend
from mvdiv.model import ModelParams
from mvdiv.simulate import KernelInputs, SimConfig
from mvdiv.strategy import Barrier, Constant


def run(kern, k: KernelInputs, x0s: np.ndarray, n: int, steps: int):
    Y = np.zeros((x0s.size, n))
    ruin = np.empty((x0s.size, n), dtype=np.int64)
    res = np.zeros((x0s.size, n))
    t0 = time.perf_counter()
    kern.simulate_batch(k.dt, k.q, k.sig, k.bc, k.bridge, steps, k.seed, 0,
                        k.thresholds, k.rates, k.mu, x0s, Y, ruin, res, True)
    return time.perf_counter() - t0, (Y, ruin, res)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=5000)
    args = ap.parse_args()
    if "compiled" not in _backend.BACKENDS:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    p = ModelParams(a=0.1, b=0.35, rho=0.05, d_bar=0.05, gamma=0.2)
    cfg = SimConfig(dt=1e-3, seed=2024)
    x0s = np.array([0.5, 1.0, 2.0])
    print(f"{'strategy':<18} {'backend':<9} {'ns/path-step':>13} {'speedup':>8}")
    for s in (Barrier(0.2159, p.d_bar), Constant(p.d_bar, p.d_bar)):
        k = KernelInputs.build(p, s, cfg)
        fast_t, fast = run(_backend.get("compiled"), k, x0s, args.paths, args.steps)
        # the numpy fallback is far slower; time it on a tenth of the paths
        n_slow = max(1, args.paths // 10)
        slow_t, slow = run(_backend.get("python"), k, x0s, n_slow, args.steps)
        work = x0s.size * args.steps
        ns_fast = fast_t / (work * args.paths) * 1e9
        ns_slow = slow_t / (work * n_slow) * 1e9
        print(f"{s.label:<18} {'compiled':<9} {ns_fast:13.2f}")
        print(f"{s.label:<18} {'python':<9} {ns_slow:13.2f} {ns_slow / ns_fast:7.0f}x")
        same = all(np.array_equal(a[:, :n_slow], b) for a, b in zip(fast, slow))
        print(f"{'':<18} bit-identical on {n_slow} paths: {same}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()
