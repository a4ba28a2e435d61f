# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama kernels.

Semantics are defined by :mod:`mvdiv._kernels_py`; every floating-point
operation here is performed in the same order so the two backends agree bit
for bit.
"""

from libc.math cimport exp, log1p
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

from mvdiv import _rng

cdef uint64_t KI[256]
cdef double WI[256]
cdef double FI[256]
cdef double SIGNS[2]
SIGNS[0] = 1.0
SIGNS[1] = -1.0
cdef double ZIG_R = _rng.ZIG_R
cdef double ZIG_INV_R = _rng.ZIG_INV_R
cdef double TWO_M53 = _rng.TWO_M53
cdef double CUTOFF = _rng.BRIDGE_EXP_CUTOFF
cdef uint64_t GOLDEN = _rng.GOLDEN
cdef uint64_t PATH_SALT = _rng.PATH_SALT
cdef uint64_t BRIDGE_SALT = _rng.BRIDGE_SALT
cdef uint64_t STEP_MULT = _rng.STEP_MULT

for _i in range(256):
    KI[_i] = _rng.KI_LIST[_i]
    WI[_i] = _rng.WI_LIST[_i]
    FI[_i] = _rng.FI_LIST[_i]

ERR_OK = 0
ERR_NAN_RATE = 1


cdef struct Stream:
    uint64_t s0, s1, s2, s3


cdef inline uint64_t rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline void seed_stream(Stream* st, uint64_t seed, uint64_t path) noexcept nogil:
    cdef uint64_t sm = seed ^ mix64(path + PATH_SALT)
    sm = sm + GOLDEN
    st.s0 = mix64(sm)
    sm = sm + GOLDEN
    st.s1 = mix64(sm)
    sm = sm + GOLDEN
    st.s2 = mix64(sm)
    sm = sm + GOLDEN
    st.s3 = mix64(sm)
    if st.s0 == 0 and st.s1 == 0 and st.s2 == 0 and st.s3 == 0:
        st.s0 = 1


cdef inline uint64_t next_u64(Stream* st) noexcept nogil:
    cdef uint64_t result = rotl(st.s0 + st.s3, 23) + st.s0
    cdef uint64_t t = st.s1 << 17
    st.s2 ^= st.s0
    st.s3 ^= st.s1
    st.s1 ^= st.s2
    st.s0 ^= st.s3
    st.s2 ^= t
    st.s3 = rotl(st.s3, 45)
    return result


cdef inline double next_double(Stream* st) noexcept nogil:
    return <double>(next_u64(st) >> 11) * TWO_M53


cdef double normal_slow(Stream* st, int idx, uint64_t rabs, double x) noexcept nogil:
    # rejection branch of the ziggurat; returns NaN to request a fresh draw
    cdef double xx, yy
    if idx == 0:
        while True:
            xx = -ZIG_INV_R * log1p(-next_double(st))
            yy = -log1p(-next_double(st))
            if yy + yy > xx * xx:
                if (rabs >> 8) & 1:
                    return -(ZIG_R + xx)
                return ZIG_R + xx
    if (FI[idx - 1] - FI[idx]) * next_double(st) + FI[idx] < exp(-0.5 * x * x):
        return x
    return 0.0 / 0.0


cdef inline double std_normal(Stream* st) noexcept nogil:
    cdef uint64_t r, rabs
    cdef int idx
    cdef double x
    while True:
        r = next_u64(st)
        idx = <int>(r & 0xFF)
        r >>= 8
        rabs = (r >> 1) & <uint64_t>0x000FFFFFFFFFFFFFULL
        # multiplying by -1.0 is an exact negation and avoids a coin-flip branch
        x = <double><int64_t>rabs * WI[idx] * SIGNS[r & 1]
        if rabs < KI[idx]:
            return x
        x = normal_slow(st, idx, rabs, x)
        if x == x:
            return x


cdef inline double bridge_u(uint64_t seed, uint64_t path, uint64_t step) noexcept nogil:
    cdef uint64_t h = mix64((seed ^ BRIDGE_SALT) + path)
    h = mix64(h + step * STEP_MULT)
    return <double>(h >> 11) * TWO_M53


cdef inline bint crossed(double x, double xn, double bc, bint bridge,
                         uint64_t seed, uint64_t path, uint64_t step) noexcept nogil:
    """Ruin on (step, step+1]: endpoint at or below zero or bridge kill."""
    cdef double e
    if xn <= 0.0:
        return True
    if bridge:
        e = bc * x * xn
        if e < CUTOFF:
            return bridge_u(seed, path, step) < exp(-e)
    return False


cdef inline int rate_index(double x, const double* th, int nt) noexcept nogil:
    cdef int lo = 0, hi = nt, mid
    if nt <= 8:
        # branch-free count; paths sit near thresholds for long stretches
        for mid in range(nt):
            lo += th[mid] < x
        return lo
    while lo < hi:
        mid = (lo + hi) >> 1
        if th[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def simulate_batch(double dt, double q, double sig, double bc, bint bridge,
                   int64_t n_steps, uint64_t seed, int64_t path_start,
                   const double[::1] thresholds, const double[::1] rates, const double[::1] mu,
                   const double[::1] x0s, double[:, ::1] Y, int64_t[:, ::1] ruin,
                   double[:, ::1] resid, bint want_resid):
    """Simulate ``Y.shape[1]`` paths from every start in ``x0s`` on shared noise.

    Fills ``Y`` (discounted dividends), ``ruin`` (step index of ruin, -1 if
    censored) and optionally ``resid`` (pathwise square identity residual).
    Returns an error code.
    """
    cdef int nx = x0s.shape[0], nt = thresholds.shape[0]
    cdef int64_t n_paths = Y.shape[1]
    cdef int64_t ip, k
    cdef uint64_t path
    cdef int j, ri, n_alive, err = 0
    cdef double z, disc, x, xn, rate, pay
    cdef Stream st
    cdef double* X = <double*>malloc(nx * sizeof(double))
    cdef double* S = <double*>malloc(nx * sizeof(double))
    cdef double* Qs = <double*>malloc(nx * sizeof(double))
    cdef char* alive = <char*>malloc(nx * sizeof(char))
    cdef const double* th = &thresholds[0] if nt > 0 else NULL
    if X == NULL or S == NULL or Qs == NULL or alive == NULL:
        free(X); free(S); free(Qs); free(alive)
        raise MemoryError()
    with nogil:
        for ip in range(n_paths):
            path = <uint64_t>(path_start + ip)
            seed_stream(&st, seed, path)
            for j in range(nx):
                X[j] = x0s[j]
                S[j] = 0.0
                Qs[j] = 0.0
                alive[j] = 1
                ruin[j, ip] = -1
            n_alive = nx
            disc = 1.0
            for k in range(n_steps):
                z = sig * std_normal(&st)
                for j in range(nx):
                    if not alive[j]:
                        continue
                    x = X[j]
                    ri = rate_index(x, th, nt)
                    rate = rates[ri]
                    if rate != rate:
                        err = 1
                        break
                    pay = disc * rate
                    if want_resid:
                        Qs[j] += pay * S[j]
                    S[j] += pay
                    xn = x + mu[ri] + z
                    X[j] = xn
                    if crossed(x, xn, bc, bridge, seed, path, <uint64_t>k):
                        alive[j] = 0
                        n_alive -= 1
                        ruin[j, ip] = k
                if err or n_alive == 0:
                    break
                disc = disc * q
            if err:
                break
            for j in range(nx):
                Y[j, ip] = S[j] * dt
                if want_resid:
                    resid[j, ip] = (2.0 * (S[j] * S[j] - Qs[j]) - S[j] * S[j]) * dt * dt
    free(X); free(S); free(Qs); free(alive)
    return err


def perturb_batch(double dt, double q, double sig, double bc, bint bridge,
                  int64_t n_steps, uint64_t seed, int64_t path_start,
                  const double[::1] thresholds, const double[::1] rates, const double[::1] mu,
                  double x0, const double[::1] d_dev, const double[::1] mu_dev,
                  const int64_t[::1] win, double[::1] Yb, int64_t[::1] ruin_b,
                  double[:, ::1] Yv, int64_t[:, ::1] ruin_v):
    """Base strategy plus window deviations on shared noise.

    Variant ``j`` pays ``d_dev[j]`` for the first ``win[j]`` steps and follows
    the base rule afterwards. Variants are carried as offsets from a reference
    path that follows the base rule forever, so stretches where every variant
    pays the reference rate and cannot be ruined cost no per-variant work.
    """
    cdef int nv = d_dev.shape[0], nt = thresholds.shape[0]
    cdef int64_t n_paths = Yb.shape[0]
    cdef int64_t ip, k, wmax = 0
    cdef uint64_t path
    cdef int j, ri, rj, n_alive, err = 0, m
    cdef bint base_alive, skip, silent
    cdef double z, disc, X, Xn, rate, rvj, mvj, xj, xjn, Sb, R, dmin, dmax, lo, hi, maxr = 0.0
    cdef Stream st
    cdef double* dl = <double*>malloc((nv + 1) * sizeof(double))
    cdef double* D = <double*>malloc((nv + 1) * sizeof(double))
    cdef char* alive = <char*>malloc((nv + 1) * sizeof(char))
    cdef const double* th = &thresholds[0] if nt > 0 else NULL
    if dl == NULL or D == NULL or alive == NULL:
        free(dl); free(D); free(alive)
        raise MemoryError()
    for j in range(nv):
        if win[j] > wmax:
            wmax = win[j]
    for j in range(rates.shape[0]):
        if not rates[j] <= maxr:
            maxr = rates[j]
    # a strategy that never pays leaves nothing to accumulate after the window
    silent = maxr == 0.0
    with nogil:
        for ip in range(n_paths):
            path = <uint64_t>(path_start + ip)
            seed_stream(&st, seed, path)
            X = x0
            Sb = 0.0
            R = 0.0
            base_alive = True
            ruin_b[ip] = -1
            for j in range(nv):
                dl[j] = 0.0
                D[j] = 0.0
                alive[j] = 1
                ruin_v[j, ip] = -1
                Yv[j, ip] = -1.0
            n_alive = nv
            dmin = 0.0
            dmax = 0.0
            disc = 1.0
            for k in range(n_steps):
                if silent and k >= wmax:
                    break
                z = sig * std_normal(&st)
                ri = rate_index(X, th, nt)
                rate = rates[ri]
                if rate != rate:
                    err = 1
                    break
                if base_alive:
                    Sb += disc * rate
                R += disc * rate
                Xn = X + mu[ri] + z
                if base_alive and crossed(X, Xn, bc, bridge, seed, path, <uint64_t>k):
                    base_alive = False
                    ruin_b[ip] = k
                if n_alive > 0:
                    skip = False
                    if k >= wmax:
                        lo = X + (dmin if dmin < 0.0 else 0.0)
                        hi = X + (dmax if dmax > 0.0 else 0.0)
                        skip = True
                        for m in range(nt):
                            if lo <= th[m] and th[m] < hi:
                                skip = False
                                break
                        if skip:
                            xj = X + dmin
                            xjn = Xn + dmin
                            skip = xjn > 0.0 and (not bridge or bc * xj * xjn >= CUTOFF)
                    if not skip:
                        dmin = 1e300
                        dmax = -1e300
                        for j in range(nv):
                            if not alive[j]:
                                continue
                            xj = X + dl[j]
                            if k < win[j]:
                                rvj = d_dev[j]
                                mvj = mu_dev[j]
                            else:
                                rj = rate_index(xj, th, nt)
                                rvj = rates[rj]
                                mvj = mu[rj]
                                if rvj != rvj:
                                    err = 1
                                    break
                            D[j] += disc * rvj - disc * rate
                            dl[j] += mvj - mu[ri]
                            xjn = Xn + dl[j]
                            if crossed(xj, xjn, bc, bridge, seed, path, <uint64_t>k):
                                alive[j] = 0
                                n_alive -= 1
                                ruin_v[j, ip] = k
                                Yv[j, ip] = (R + D[j]) * dt
                            else:
                                if dl[j] < dmin:
                                    dmin = dl[j]
                                if dl[j] > dmax:
                                    dmax = dl[j]
                        if err:
                            break
                X = Xn
                if not base_alive and n_alive == 0:
                    break
                disc = disc * q
            if err:
                break
            Yb[ip] = Sb * dt
            for j in range(nv):
                if alive[j]:
                    Yv[j, ip] = (R + D[j]) * dt
    free(dl); free(D); free(alive)
    return err


def normals(uint64_t seed, int64_t path, double[::1] out):
    """First ``len(out)`` normals of one path's stream."""
    cdef Stream st
    cdef int64_t i
    seed_stream(&st, seed, <uint64_t>path)
    with nogil:
        for i in range(out.shape[0]):
            out[i] = std_normal(&st)
