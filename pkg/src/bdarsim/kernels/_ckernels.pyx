# cython: language_level=3
"""Compiled simulation kernels (fast lane).

Draw-for-draw mirror of _pykernels: same xoshiro256** stream, same state
layout, same accounting. Tests assert bit-identical trajectories between the
two lanes, so any behavioural change must land in both files.
"""

import numpy as np

cimport numpy as cnp

from ..core import NetworkState, pair_arrays, pair_count, route_count
from ..rng import seed_to_state

cnp.import_array()

COMPILED = True

ctypedef unsigned long long u64
ctypedef long long i64

cdef extern from *:
    ctypedef unsigned long long uint128 "__uint128_t"


cdef inline u64 _rotl(u64 x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef struct Rng:
    u64 s0
    u64 s1
    u64 s2
    u64 s3


cdef inline u64 _rng_next(Rng* st) noexcept nogil:
    cdef u64 s1 = st.s1
    cdef u64 result = _rotl(s1 * 5ULL, 7) * 9ULL
    cdef u64 t = s1 << 17
    cdef u64 s2 = st.s2 ^ st.s0
    cdef u64 s3 = st.s3 ^ s1
    st.s1 = s1 ^ s2
    st.s0 = st.s0 ^ s3
    st.s2 = s2 ^ t
    st.s3 = _rotl(s3, 45)
    return result


cdef inline double _rng_u01(Rng* st) noexcept nogil:
    return <double>(_rng_next(st) >> 11) * (1.0 / 9007199254740992.0)


cdef inline i64 _rng_below(Rng* st, i64 k) noexcept nogil:
    return <i64>((<uint128>_rng_next(st) * <uint128>(<u64>k)) >> 64)


# -- Fenwick helpers over raw int64 buffers (tree[0] unused) ---------------

cdef void _fen_build(i64[::1] tree, i64[::1] counts, i64 size) noexcept:
    cdef i64 i, j, parent
    for i in range(size + 1):
        tree[i] = 0
    for i in range(size):
        j = i + 1
        tree[j] += counts[i]
        parent = j + (j & (-j))
        if parent <= size:
            tree[parent] += tree[j]


cdef inline void _fen_update(i64[::1] tree, i64 size, i64 i, i64 delta) noexcept nogil:
    i += 1
    while i <= size:
        tree[i] += delta
        i += i & (-i)


cdef inline i64 _fen_select(i64[::1] tree, i64 size, i64 topbit, i64 k) noexcept nogil:
    cdef i64 pos = 0
    cdef i64 bit = topbit
    cdef i64 nxt
    while bit:
        nxt = pos + bit
        if nxt <= size and tree[nxt] <= k:
            k -= tree[nxt]
            pos = nxt
        bit >>= 1
    return pos


cdef i64 _topbit(i64 size):
    cdef i64 bit = 1
    while bit * 2 <= size:
        bit *= 2
    return bit


def _feasible_counts(n, C, counts, R):
    if counts is None:
        counts = np.zeros(R, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise ValueError("infeasible kernel start state: negative route count")
    state = NetworkState.from_counts(n, C, counts)
    if state._load.size and state._load.max() > C:
        raise ValueError("infeasible kernel start state: link load above capacity")
    return (
        np.ascontiguousarray(state.counts_vector(), dtype=np.int64),
        np.ascontiguousarray(state._load, dtype=np.int64),
        int(state.total_calls),
    )


cdef class ChainKernel:
    """Single jump chain over flat route-count arrays (see _pykernels)."""

    cdef public i64 n, C, d, L, n2, R, K, fdar
    cdef public double lam, p_arr
    cdef Rng rng
    cdef i64[::1] counts
    cdef i64[::1] load
    cdef i64[::1] tree
    cdef i64[::1] linkcount
    cdef i64[::1] nonfull
    cdef i64[::1] bad
    cdef i64[::1] pu
    cdef i64[::1] pv
    cdef i64[::1] pmat
    cdef i64[::1] ws
    cdef i64 topbit
    cdef public i64 total, steps, arrivals, blocked, noop_departures, num_bad, thr60

    def __init__(self, n, C, d, lam, fdar=0, seed=0, counts=None):
        self.n = n
        self.C = C
        self.d = d
        self.lam = lam
        self.fdar = 1 if fdar else 0
        self.L = pair_count(n)
        self.n2 = n - 2
        self.R = route_count(n)
        self.K = C * self.L
        self.p_arr = lam / (lam + C)
        pu, pv, pmat = pair_arrays(n)
        self.pu = np.array(pu, dtype=np.int64)
        self.pv = np.array(pv, dtype=np.int64)
        self.pmat = np.array(pmat, dtype=np.int64).reshape(-1)
        counts_arr, load_arr, total = _feasible_counts(n, C, counts, self.R)
        self.counts = counts_arr
        self.load = load_arr
        self.total = total
        self.tree = np.zeros(self.R + 1, dtype=np.int64)
        _fen_build(self.tree, self.counts, self.R)
        self.topbit = _topbit(self.R)
        lc = np.zeros(C + 1, dtype=np.int64)
        for x in load_arr:
            lc[x] += 1
        self.linkcount = lc
        self.thr60 = 60 * C * d
        nf = np.zeros(n, dtype=np.int64)
        for p in range(self.L):
            if load_arr[p] < C:
                nf[pu[p]] += 1
                nf[pv[p]] += 1
        self.nonfull = nf
        bd = np.zeros(n, dtype=np.int64)
        for v in range(n):
            if nf[v] * self.thr60 > n - 1:
                bd[v] = 1
        self.bad = bd
        self.num_bad = int(bd.sum())
        self.ws = np.zeros(max(d, 1), dtype=np.int64)
        s0, s1, s2, s3 = seed_to_state(seed)
        self.rng.s0 = s0
        self.rng.s1 = s1
        self.rng.s2 = s2
        self.rng.s3 = s3
        self.steps = 0
        self.arrivals = 0
        self.blocked = 0
        self.noop_departures = 0

    # -- accessors -------------------------------------------------------

    def counts_array(self):
        return np.asarray(self.counts).copy()

    def loads_array(self):
        return np.asarray(self.load).copy()

    def linkcount_array(self):
        return np.asarray(self.linkcount).copy()

    @property
    def in_R(self):
        return self.num_bad == 0

    def rng_state(self):
        return (self.rng.s0, self.rng.s1, self.rng.s2, self.rng.s3)

    def set_rng_state(self, state):
        s0, s1, s2, s3 = (int(w) & 0xFFFFFFFFFFFFFFFF for w in state)
        if not (s0 or s1 or s2 or s3):
            raise ValueError("all-zero state is invalid for xoshiro256")
        self.rng.s0 = s0
        self.rng.s1 = s1
        self.rng.s2 = s2
        self.rng.s3 = s3

    def state_key(self):
        key = 0
        base = self.C + 1
        for i in range(self.R - 1, -1, -1):
            key = key * base + self.counts[i]
        return key

    # -- dynamics --------------------------------------------------------

    cdef inline void _load_up(self, i64 e) noexcept nogil:
        cdef i64 old = self.load[e]
        cdef i64 new = old + 1
        cdef i64 x, nf, i
        self.load[e] = new
        self.linkcount[old] -= 1
        self.linkcount[new] += 1
        if new == self.C:
            for i in range(2):
                x = self.pu[e] if i == 0 else self.pv[e]
                nf = self.nonfull[x] - 1
                self.nonfull[x] = nf
                if self.bad[x] and nf * self.thr60 <= self.n - 1:
                    self.bad[x] = 0
                    self.num_bad -= 1

    cdef inline void _load_down(self, i64 e) noexcept nogil:
        cdef i64 old = self.load[e]
        cdef i64 new = old - 1
        cdef i64 x, nf, i
        self.load[e] = new
        self.linkcount[old] -= 1
        self.linkcount[new] += 1
        if old == self.C:
            for i in range(2):
                x = self.pu[e] if i == 0 else self.pv[e]
                nf = self.nonfull[x] + 1
                self.nonfull[x] = nf
                if self.bad[x] == 0 and nf * self.thr60 > self.n - 1:
                    self.bad[x] = 1
                    self.num_bad += 1

    def run(self, steps, visits=None, track_R=False, zeta=None):
        """Advance `steps`; returns the number of post-step states in R."""
        cdef i64 nsteps = steps
        cdef bint want_visits = visits is not None
        cdef bint want_r = bool(track_R)
        cdef bint want_zeta = zeta is not None
        cdef i64[::1] vis
        cdef i64[::1] zet
        cdef i64[::1] base_pow
        cdef i64 key = 0
        if want_visits:
            space = (self.C + 1) ** self.R
            if space > (1 << 62):
                raise ValueError("state space too large for visit tracking")
            if len(visits) != space:
                raise ValueError("visits array has wrong length")
            vis = visits
            base_pow = np.array(
                [(self.C + 1) ** r for r in range(self.R)], dtype=np.int64
            )
            key = self.state_key()
        else:
            vis = np.empty(0, dtype=np.int64)
            base_pow = np.empty(0, dtype=np.int64)
        if want_zeta:
            if len(zeta) != self.C + 1:
                raise ValueError("zeta array must have length C+1")
            zet = zeta
        else:
            zet = np.empty(0, dtype=np.int64)

        cdef i64 in_r_steps = 0
        cdef i64 it, p, r, w, u, v, a, b, m, s, q, t, best_r, best_max, j
        cdef i64 C = self.C, d = self.d, L = self.L, n2 = self.n2, K = self.K
        cdef i64 rown = self.n
        cdef double p_arr = self.p_arr
        cdef bint fdar = self.fdar != 0
        with nogil:
            for it in range(nsteps):
                if _rng_u01(&self.rng) < p_arr:
                    self.arrivals += 1
                    p = _rng_below(&self.rng, L)
                    for r in range(d):
                        self.ws[r] = _rng_below(&self.rng, n2)
                    if self.load[p] < C:
                        self.counts[p] += 1
                        _fen_update(self.tree, self.R, p, 1)
                        self.total += 1
                        self._load_up(p)
                        if want_visits:
                            key += base_pow[p]
                    else:
                        u = self.pu[p]
                        v = self.pv[p]
                        best_r = -1
                        best_max = C
                        for r in range(d):
                            w = self.ws[r]
                            if w >= u:
                                w += 1
                            if w >= v:
                                w += 1
                            a = self.load[self.pmat[u * rown + w]]
                            b = self.load[self.pmat[v * rown + w]]
                            if a < C and b < C:
                                m = a if a > b else b
                                if m < best_max:
                                    best_max = m
                                    best_r = r
                                    if fdar or m == 0:
                                        break
                        if best_r >= 0:
                            w = self.ws[best_r]
                            q = L + p * n2 + w
                            if w >= u:
                                w += 1
                            if w >= v:
                                w += 1
                            self.counts[q] += 1
                            _fen_update(self.tree, self.R, q, 1)
                            self.total += 1
                            self._load_up(self.pmat[u * rown + w])
                            self._load_up(self.pmat[v * rown + w])
                            if want_visits:
                                key += base_pow[q]
                        else:
                            self.blocked += 1
                else:
                    s = _rng_below(&self.rng, K)
                    if s < self.total:
                        q = _fen_select(self.tree, self.R, self.topbit, s)
                        self.counts[q] -= 1
                        _fen_update(self.tree, self.R, q, -1)
                        self.total -= 1
                        if q < L:
                            self._load_down(q)
                        else:
                            t = q - L
                            p = t // n2
                            w = t - p * n2
                            u = self.pu[p]
                            v = self.pv[p]
                            if w >= u:
                                w += 1
                            if w >= v:
                                w += 1
                            self._load_down(self.pmat[u * rown + w])
                            self._load_down(self.pmat[v * rown + w])
                        if want_visits:
                            key -= base_pow[q]
                    else:
                        self.noop_departures += 1
                self.steps += 1
                if want_visits:
                    vis[key] += 1
                if want_r and self.num_bad == 0:
                    in_r_steps += 1
                if want_zeta:
                    for j in range(C + 1):
                        zet[j] += self.linkcount[j]
        return int(in_r_steps)


cdef class CoupledKernel:
    """Two chains under shared randomness with matched-call departures."""

    cdef public i64 n, C, d, L, n2, R, K, fdar
    cdef public double lam, p_arr
    cdef Rng rng
    cdef i64[::1] cx
    cdef i64[::1] cy
    cdef i64[::1] loadx
    cdef i64[::1] loady
    cdef i64[::1] fm
    cdef i64[::1] fex
    cdef i64[::1] fey
    cdef i64[::1] pu
    cdef i64[::1] pv
    cdef i64[::1] pmat
    cdef i64[::1] ws
    cdef i64 topbit
    cdef public i64 tm, tex, tey, steps, blocked_x, blocked_y

    def __init__(self, n, C, d, lam, fdar=0, seed=0, counts_x=None, counts_y=None):
        self.n = n
        self.C = C
        self.d = d
        self.lam = lam
        self.fdar = 1 if fdar else 0
        self.L = pair_count(n)
        self.n2 = n - 2
        self.R = route_count(n)
        self.K = C * self.L
        self.p_arr = lam / (lam + C)
        pu, pv, pmat = pair_arrays(n)
        self.pu = np.array(pu, dtype=np.int64)
        self.pv = np.array(pv, dtype=np.int64)
        self.pmat = np.array(pmat, dtype=np.int64).reshape(-1)
        self.ws = np.zeros(max(d, 1), dtype=np.int64)
        self.topbit = _topbit(self.R)
        self.fm = np.zeros(self.R + 1, dtype=np.int64)
        self.fex = np.zeros(self.R + 1, dtype=np.int64)
        self.fey = np.zeros(self.R + 1, dtype=np.int64)
        s0, s1, s2, s3 = seed_to_state(seed)
        self.rng.s0 = s0
        self.rng.s1 = s1
        self.rng.s2 = s2
        self.rng.s3 = s3
        self.steps = 0
        self.blocked_x = 0
        self.blocked_y = 0
        self.reset(counts_x, counts_y, reseed=None)

    def reset(self, counts_x=None, counts_y=None, reseed=None):
        """Reinstall start states (and optionally reseed) without reallocating."""
        cx_arr, loadx_arr, _ = _feasible_counts(self.n, self.C, counts_x, self.R)
        cy_arr, loady_arr, _ = _feasible_counts(self.n, self.C, counts_y, self.R)
        self.cx = cx_arr
        self.cy = cy_arr
        self.loadx = loadx_arr
        self.loady = loady_arr
        mins = np.minimum(cx_arr, cy_arr)
        ex = cx_arr - mins
        ey = cy_arr - mins
        _fen_build(self.fm, np.ascontiguousarray(mins), self.R)
        _fen_build(self.fex, np.ascontiguousarray(ex), self.R)
        _fen_build(self.fey, np.ascontiguousarray(ey), self.R)
        self.tm = int(mins.sum())
        self.tex = int(ex.sum())
        self.tey = int(ey.sum())
        if reseed is not None:
            s0, s1, s2, s3 = seed_to_state(reseed)
            self.rng.s0 = s0
            self.rng.s1 = s1
            self.rng.s2 = s2
            self.rng.s3 = s3

    @property
    def l1(self):
        return self.tex + self.tey

    def counts_x_array(self):
        return np.asarray(self.cx).copy()

    def counts_y_array(self):
        return np.asarray(self.cy).copy()

    def rng_state(self):
        return (self.rng.s0, self.rng.s1, self.rng.s2, self.rng.s3)

    def set_rng_state(self, state):
        s0, s1, s2, s3 = (int(w) & 0xFFFFFFFFFFFFFFFF for w in state)
        if not (s0 or s1 or s2 or s3):
            raise ValueError("all-zero state is invalid for xoshiro256")
        self.rng.s0 = s0
        self.rng.s1 = s1
        self.rng.s2 = s2
        self.rng.s3 = s3

    cdef inline void _bump_x(self, i64 q, i64 delta) noexcept nogil:
        cdef i64 old = self.cx[q]
        cdef i64 new = old + delta
        cdef i64 oth = self.cy[q]
        cdef i64 dm, dex
        self.cx[q] = new
        dm = (new if new < oth else oth) - (old if old < oth else oth)
        if dm:
            _fen_update(self.fm, self.R, q, dm)
            self.tm += dm
            _fen_update(self.fey, self.R, q, -dm)
            self.tey -= dm
        dex = delta - dm
        if dex:
            _fen_update(self.fex, self.R, q, dex)
            self.tex += dex

    cdef inline void _bump_y(self, i64 q, i64 delta) noexcept nogil:
        cdef i64 old = self.cy[q]
        cdef i64 new = old + delta
        cdef i64 oth = self.cx[q]
        cdef i64 dm, dex
        self.cy[q] = new
        dm = (new if new < oth else oth) - (old if old < oth else oth)
        if dm:
            _fen_update(self.fm, self.R, q, dm)
            self.tm += dm
            _fen_update(self.fex, self.R, q, -dm)
            self.tex -= dm
        dex = delta - dm
        if dex:
            _fen_update(self.fey, self.R, q, dex)
            self.tey += dex

    cdef inline i64 _route(self, i64[::1] load, i64 p) noexcept nogil:
        cdef i64 C = self.C, L = self.L
        cdef i64 u, v, r, w, a, b, m, best_r, best_max
        cdef i64 rown = self.n
        if load[p] < C:
            return p
        u = self.pu[p]
        v = self.pv[p]
        best_r = -1
        best_max = C
        for r in range(self.d):
            w = self.ws[r]
            if w >= u:
                w += 1
            if w >= v:
                w += 1
            a = load[self.pmat[u * rown + w]]
            b = load[self.pmat[v * rown + w]]
            if a < C and b < C:
                m = a if a > b else b
                if m < best_max:
                    best_max = m
                    best_r = r
                    if self.fdar or m == 0:
                        break
        if best_r < 0:
            return -1
        return L + p * self.n2 + self.ws[best_r]

    cdef inline void _apply_load(self, i64[::1] load, i64 q, i64 delta) noexcept nogil:
        cdef i64 t, p, w, u, v
        cdef i64 rown = self.n
        if q < self.L:
            load[q] += delta
            return
        t = q - self.L
        p = t // self.n2
        w = t - p * self.n2
        u = self.pu[p]
        v = self.pv[p]
        if w >= u:
            w += 1
        if w >= v:
            w += 1
        load[self.pmat[u * rown + w]] += delta
        load[self.pmat[v * rown + w]] += delta

    cdef inline void _step(self) noexcept nogil:
        cdef i64 p, r, s, i, qx, qy, q
        if _rng_u01(&self.rng) < self.p_arr:
            p = _rng_below(&self.rng, self.L)
            for r in range(self.d):
                self.ws[r] = _rng_below(&self.rng, self.n2)
            qx = self._route(self.loadx, p)
            qy = self._route(self.loady, p)
            if qx >= 0:
                self._bump_x(qx, 1)
                self._apply_load(self.loadx, qx, 1)
            else:
                self.blocked_x += 1
            if qy >= 0:
                self._bump_y(qy, 1)
                self._apply_load(self.loady, qy, 1)
            else:
                self.blocked_y += 1
        else:
            s = _rng_below(&self.rng, self.K)
            if s < self.tm:
                q = _fen_select(self.fm, self.R, self.topbit, s)
                self._bump_x(q, -1)
                self._apply_load(self.loadx, q, -1)
                self._bump_y(q, -1)
                self._apply_load(self.loady, q, -1)
            else:
                i = s - self.tm
                if i < self.tex:
                    q = _fen_select(self.fex, self.R, self.topbit, i)
                    self._bump_x(q, -1)
                    self._apply_load(self.loadx, q, -1)
                if i < self.tey:
                    q = _fen_select(self.fey, self.R, self.topbit, i)
                    self._bump_y(q, -1)
                    self._apply_load(self.loady, q, -1)
        self.steps += 1

    def run(self, steps):
        cdef i64 nsteps = steps
        cdef i64 it
        with nogil:
            for it in range(nsteps):
                self._step()

    def run_until_coalesced(self, max_steps):
        """Steps until l1 hits 0, or -1 if still apart after max_steps."""
        cdef i64 limit = max_steps
        cdef i64 done = 0
        cdef i64 hit = -1
        if self.tex + self.tey == 0:
            return 0
        with nogil:
            while done < limit:
                self._step()
                done += 1
                if self.tex + self.tey == 0:
                    hit = done
                    break
        return int(hit)
