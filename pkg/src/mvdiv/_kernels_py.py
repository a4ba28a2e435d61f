"""Pure numpy kernels, the reference semantics for the compiled backend.

Paths are advanced in lock-step as numpy lanes. The rare ziggurat rejections
and bridge tests drop to scalar Python (``math.exp``/``math.log1p``) so that
results match the compiled kernels bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

from . import _rng

_U = np.uint64
_MASK52 = _U(0x000FFFFFFFFFFFFF)
_KI = _rng.KI
_WI = _rng.WI


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U(k)) | (x >> _U(64 - k))


class _Lanes:
    """xoshiro256++ states of a block of consecutive paths."""

    def __init__(self, seed: int, path_start: int, n: int):
        rows = [_rng.path_state(seed, path_start + i) for i in range(n)]
        self.s = np.array(rows, dtype=np.uint64).T.copy() if n else np.zeros((4, 0), np.uint64)

    def next_u64(self) -> np.ndarray:
        s0, s1, s2, s3 = self.s
        result = _rotl(s0 + s3, 23) + s0
        t = s1 << _U(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3[:] = _rotl(s3, 45)
        return result

    def normal(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            r = self.next_u64()
        idx = (r & _U(0xFF)).astype(np.intp)
        r = r >> _U(8)
        rabs = (r >> _U(1)) & _MASK52
        x = rabs.astype(np.float64) * _WI[idx]
        neg = (r & _U(1)).astype(bool)
        x[neg] = -x[neg]
        for lane in np.flatnonzero(rabs >= _KI[idx]):
            st = _rng.PathStream.from_state(self.s[:, lane])
            v = st.slow(int(idx[lane]), int(rabs[lane]), float(x[lane]))
            if v is None:
                v = st.normal()
            x[lane] = v
            self.s[:, lane] = np.array(st.s, dtype=np.uint64)
        return x


def _crossed(x, xn, bc, bridge, seed, paths, step) -> np.ndarray:
    dead = xn <= 0.0
    if bridge:
        e = bc * x * xn
        for i in np.flatnonzero(~dead & (e < _rng.BRIDGE_EXP_CUTOFF)):
            if _rng.bridge_uniform(seed, int(paths[i]), step) < math.exp(-float(e[i])):
                dead[i] = True
    return dead


def simulate_batch(dt, q, sig, bc, bridge, n_steps, seed, path_start,
                   thresholds, rates, mu, x0s, Y, ruin, resid, want_resid):
    nx, n = Y.shape
    paths = np.arange(path_start, path_start + n, dtype=np.int64)
    lanes = _Lanes(seed, path_start, n)
    X = np.repeat(np.asarray(x0s, dtype=float)[:, None], n, axis=1)
    S = np.zeros((nx, n))
    Qs = np.zeros((nx, n))
    alive = np.ones((nx, n), dtype=bool)
    ruin[:] = -1
    disc = 1.0
    for k in range(n_steps):
        if not alive.any():
            break
        z = sig * lanes.normal()
        for j in range(nx):
            live = np.flatnonzero(alive[j])
            if live.size == 0:
                continue
            x = X[j, live]
            ri = np.searchsorted(thresholds, x, side="left")
            rate = rates[ri]
            if np.isnan(rate).any():
                return 1
            pay = disc * rate
            if want_resid:
                Qs[j, live] += pay * S[j, live]
            S[j, live] += pay
            xn = x + mu[ri] + z[live]
            X[j, live] = xn
            dead = live[_crossed(x, xn, bc, bridge, seed, paths[live], k)]
            alive[j, dead] = False
            ruin[j, dead] = k
        disc = disc * q
    Y[:] = S * dt
    if want_resid:
        resid[:] = (2.0 * (S * S - Qs) - S * S) * dt * dt
    return 0


def perturb_batch(dt, q, sig, bc, bridge, n_steps, seed, path_start,
                  thresholds, rates, mu, x0, d_dev, mu_dev, win, Yb, ruin_b, Yv, ruin_v):
    n = Yb.shape[0]
    nv = len(d_dev)
    paths = np.arange(path_start, path_start + n, dtype=np.int64)
    lanes = _Lanes(seed, path_start, n)
    wmax = int(np.max(win)) if nv else 0
    silent = bool(np.nanmax(rates) == 0.0) and not np.isnan(rates).any()
    X = np.full(n, float(x0))
    Sb = np.zeros(n)
    R = np.zeros(n)
    base = np.ones(n, dtype=bool)
    dl = np.zeros((nv, n))
    D = np.zeros((nv, n))
    alive = np.ones((nv, n), dtype=bool)
    ruin_b[:] = -1
    ruin_v[:] = -1
    Yv[:] = -1.0
    disc = 1.0
    for k in range(n_steps):
        if silent and k >= wmax:
            break
        run = np.flatnonzero(base | alive.any(axis=0))
        if run.size == 0:
            break
        z = sig * lanes.normal()
        x = X[run]
        ri = np.searchsorted(thresholds, x, side="left")
        rate = rates[ri]
        if np.isnan(rate).any():
            return 1
        b_run = base[run]
        Sb[run[b_run]] += disc * rate[b_run]
        R[run] += disc * rate
        xn = x + mu[ri] + z[run]
        b_idx = np.flatnonzero(b_run)
        dead = b_idx[_crossed(x[b_idx], xn[b_idx], bc, bridge, seed, paths[run[b_idx]], k)]
        base[run[dead]] = False
        ruin_b[run[dead]] = k
        for j in range(nv):
            sel = np.flatnonzero(alive[j, run])
            if sel.size == 0:
                continue
            cols = run[sel]
            xj = x[sel] + dl[j, cols]
            if k < win[j]:
                rvj = np.full(sel.size, d_dev[j])
                mvj = np.full(sel.size, mu_dev[j])
            else:
                rj = np.searchsorted(thresholds, xj, side="left")
                rvj = rates[rj]
                mvj = mu[rj]
                if np.isnan(rvj).any():
                    return 1
            D[j, cols] += disc * rvj - disc * rate[sel]
            dl[j, cols] += mvj - mu[ri[sel]]
            xjn = xn[sel] + dl[j, cols]
            gone = cols[_crossed(xj, xjn, bc, bridge, seed, paths[cols], k)]
            alive[j, gone] = False
            ruin_v[j, gone] = k
            Yv[j, gone] = (R[gone] + D[j, gone]) * dt
        X[run] = xn
        disc = disc * q
    Yb[:] = Sb * dt
    Yv[alive] = ((R[None, :] + D) * dt)[alive]
    return 0
