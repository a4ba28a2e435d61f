"""Counter-seeded random streams shared by the compiled and numpy kernels.

Path ``i`` of a run with seed ``s`` owns a xoshiro256++ stream seeded from
``(s, i)`` alone; its ``k``-th standard normal (256-layer ziggurat) drives
step ``k`` whatever the strategy, which is what makes paired runs use common
random numbers. The Brownian-bridge ruin test draws its uniform from a hash
of ``(s, i, k)`` so that it never disturbs the normal stream.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
ZIG_R = 3.6541528853610088
ZIG_INV_R = 1.0 / ZIG_R
ZIG_V = 4.92867323399e-3
TWO_M53 = 1.0 / 9007199254740992.0
# bridge kill probabilities below exp(-40) ~ 4e-18 are treated as zero
BRIDGE_EXP_CUTOFF = 40.0

GOLDEN = 0x9E3779B97F4A7C15
PATH_SALT = 0x632BE59BD9B4E019
BRIDGE_SALT = 0xA0761D6478BD642F
STEP_MULT = 0xE7037ED1A0B428DB


def _ziggurat_tables():
    m1 = 2.0**52
    ki = [0] * 256
    wi = [0.0] * 256
    fi = [0.0] * 256
    dn = tn = ZIG_R
    q = ZIG_V / math.exp(-0.5 * dn * dn)
    ki[0] = int((dn / q) * m1)
    ki[1] = 0
    wi[0] = q / m1
    wi[255] = dn / m1
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(ZIG_V / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = int((dn / tn) * m1)
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m1
    return (np.array(ki, dtype=np.uint64), np.array(wi, dtype=np.float64), np.array(fi, dtype=np.float64))


KI, WI, FI = _ziggurat_tables()
KI_LIST = [int(v) for v in KI]
WI_LIST = [float(v) for v in WI]
FI_LIST = [float(v) for v in FI]


def mix64(z: int) -> int:
    """SplitMix64 finaliser."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_state(seed: int, path: int) -> list[int]:
    """Initial xoshiro256++ state of one path."""
    sm = (seed ^ mix64((path + PATH_SALT) & MASK64)) & MASK64
    out = []
    for _ in range(4):
        sm = (sm + GOLDEN) & MASK64
        out.append(mix64(sm))
    if not any(out):
        out[0] = 1
    return out


def bridge_uniform(seed: int, path: int, step: int) -> float:
    h = mix64(((seed ^ BRIDGE_SALT) + path) & MASK64)
    h = mix64((h + step * STEP_MULT) & MASK64)
    return (h >> 11) * TWO_M53


def _rotl(x: int, k: int) -> int:
    return ((x << k) & MASK64) | (x >> (64 - k))


class PathStream:
    """Scalar reference implementation of one path's normal stream."""

    def __init__(self, seed: int, path: int):
        self.s = path_state(seed & MASK64, path)

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * TWO_M53

    @classmethod
    def from_state(cls, state) -> "PathStream":
        st = cls.__new__(cls)
        st.s = [int(v) for v in state]
        return st

    def slow(self, idx: int, rabs: int, x: float):
        """Rejection branch after a failed fast test; ``None`` means redraw."""
        if idx == 0:
            while True:
                xx = -ZIG_INV_R * math.log1p(-self.next_double())
                yy = -math.log1p(-self.next_double())
                if yy + yy > xx * xx:
                    return -(ZIG_R + xx) if (rabs >> 8) & 1 else ZIG_R + xx
        if (FI_LIST[idx - 1] - FI_LIST[idx]) * self.next_double() + FI_LIST[idx] < math.exp(-0.5 * x * x):
            return x
        return None

    def normal(self) -> float:
        while True:
            r = self.next_u64()
            idx = r & 0xFF
            r >>= 8
            rabs = (r >> 1) & 0x000FFFFFFFFFFFFF
            x = rabs * WI_LIST[idx]
            if r & 1:
                x = -x
            if rabs < KI_LIST[idx]:
                return x
            x = self.slow(idx, rabs, x)
            if x is not None:
                return x


def normals(seed: int, path: int, n: int) -> np.ndarray:
    """First ``n`` normals of a path's stream (reference implementation)."""
    st = PathStream(seed, path)
    return np.array([st.normal() for _ in range(n)])
