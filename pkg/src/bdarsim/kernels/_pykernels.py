"""Pure-Python simulation kernels (fallback lane).

Same state layout, RNG draws and accounting as the compiled Cython lane;
trajectories are bit-identical between the two. Used when the extension is
unavailable or when BDARSIM_PURE_PYTHON=1 forces it.
"""

from __future__ import annotations

import numpy as np

from ..core import NetworkState, pair_arrays, pair_count, route_count
from ..rng import Xoshiro256

COMPILED = False


class Fenwick:
    """Fenwick tree over nonnegative integer multiplicities with rank select."""

    __slots__ = ("size", "tree")

    def __init__(self, size: int):
        self.size = size
        self.tree = [0] * (size + 1)

    @classmethod
    def from_counts(cls, counts) -> "Fenwick":
        fen = cls(len(counts))
        tree = fen.tree
        for i, c in enumerate(counts):
            j = i + 1
            tree[j] += int(c)
            parent = j + (j & -j)
            if parent <= fen.size:
                tree[parent] += tree[j]
        return fen

    def update(self, i: int, delta: int) -> None:
        i += 1
        tree = self.tree
        size = self.size
        while i <= size:
            tree[i] += delta
            i += i & -i

    def select(self, k: int) -> int:
        """Index of the element holding the k-th unit (0-based, k < total)."""
        pos = 0
        bit = 1 << (self.size.bit_length() - 1) if self.size else 0
        tree = self.tree
        size = self.size
        while bit:
            nxt = pos + bit
            if nxt <= size and tree[nxt] <= k:
                k -= tree[nxt]
                pos = nxt
            bit >>= 1
        return pos


def _counts_to_state(n, C, counts):
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise ValueError("infeasible kernel start state: negative route count")
    state = NetworkState.from_counts(n, C, counts)
    if state._load.size and state._load.max() > C:
        raise ValueError("infeasible kernel start state: link load above capacity")
    return state


class ChainKernel:
    """Single jump chain over flat route-count arrays.

    Maintains link loads, the per-load link histogram, per-node non-full
    link counts (for R membership) and arrival/blocking tallies. `run`
    optionally accumulates state-visit counts, R occupancy and the per-step
    link-load histogram sums used for equilibrium averages.
    """

    def __init__(self, n, C, d, lam, fdar=0, seed=0, counts=None):
        self.n = int(n)
        self.C = int(C)
        self.d = int(d)
        self.lam = float(lam)
        self.fdar = int(fdar)
        self.L = pair_count(self.n)
        self.n2 = self.n - 2
        self.R = route_count(self.n)
        self.K = self.C * self.L
        self.p_arr = self.lam / (self.lam + self.C)
        pu, pv, pmat = pair_arrays(self.n)
        self.pu = [int(x) for x in pu]
        self.pv = [int(x) for x in pv]
        self.pmat = [[int(pmat[a][b]) for b in range(self.n)] for a in range(self.n)]
        if counts is None:
            counts = np.zeros(self.R, dtype=np.int64)
        state = _counts_to_state(self.n, self.C, counts)
        self.counts = [int(c) for c in state.counts_vector()]
        self.load = [int(x) for x in state._load]
        self.total = state.total_calls
        self.fen = Fenwick.from_counts(self.counts)
        self.linkcount = [0] * (self.C + 1)
        for x in self.load:
            self.linkcount[x] += 1
        self.thr60 = 60 * self.C * self.d
        self.nonfull = [0] * self.n
        for p in range(self.L):
            if self.load[p] < self.C:
                self.nonfull[self.pu[p]] += 1
                self.nonfull[self.pv[p]] += 1
        self.bad = [1 if self.nonfull[v] * self.thr60 > self.n - 1 else 0 for v in range(self.n)]
        self.num_bad = sum(self.bad)
        self.rng = Xoshiro256(seed)
        self.steps = 0
        self.arrivals = 0
        self.blocked = 0
        self.noop_departures = 0

    # -- accessors -------------------------------------------------------

    def counts_array(self):
        return np.array(self.counts, dtype=np.int64)

    def loads_array(self):
        return np.array(self.load, dtype=np.int64)

    def linkcount_array(self):
        return np.array(self.linkcount, dtype=np.int64)

    @property
    def in_R(self) -> bool:
        return self.num_bad == 0

    def rng_state(self):
        return self.rng.get_state()

    def set_rng_state(self, state):
        self.rng.set_state(state)

    def state_key(self) -> int:
        """Base-(C+1) encoding of the route-count vector (tiny instances)."""
        key = 0
        base = self.C + 1
        for c in reversed(self.counts):
            key = key * base + c
        return key

    # -- dynamics --------------------------------------------------------

    def _load_up(self, e):
        old = self.load[e]
        new = old + 1
        self.load[e] = new
        self.linkcount[old] -= 1
        self.linkcount[new] += 1
        if new == self.C:
            nm1 = self.n - 1
            for x in (self.pu[e], self.pv[e]):
                nf = self.nonfull[x] - 1
                self.nonfull[x] = nf
                if self.bad[x] and nf * self.thr60 <= nm1:
                    self.bad[x] = 0
                    self.num_bad -= 1

    def _load_down(self, e):
        old = self.load[e]
        new = old - 1
        self.load[e] = new
        self.linkcount[old] -= 1
        self.linkcount[new] += 1
        if old == self.C:
            nm1 = self.n - 1
            for x in (self.pu[e], self.pv[e]):
                nf = self.nonfull[x] + 1
                self.nonfull[x] = nf
                if not self.bad[x] and nf * self.thr60 > nm1:
                    self.bad[x] = 1
                    self.num_bad += 1

    def run(self, steps, visits=None, track_R=False, zeta=None) -> int:
        """Advance `steps` steps; returns the number of post-step states in R.

        visits: optional int64 array of length (C+1)^R indexed by state key,
        incremented once per step at the post-step state. zeta: optional
        int64 array of length C+1 accumulating the link-load histogram each
        step. Tracking flags do not change the trajectory.
        """
        rng = self.rng
        counts = self.counts
        load = self.load
        fen = self.fen
        pu, pv, pmat = self.pu, self.pv, self.pmat
        C, d, L, n2, K = self.C, self.d, self.L, self.n2, self.K
        p_arr = self.p_arr
        fdar = self.fdar
        in_r_steps = 0
        key = self.state_key() if visits is not None else 0
        base_pow = None
        if visits is not None:
            base_pow = [(C + 1) ** r for r in range(self.R)]
            if len(visits) != (C + 1) ** self.R:
                raise ValueError("visits array has wrong length")
        ws = [0] * d
        for _ in range(steps):
            if rng.u01() < p_arr:
                self.arrivals += 1
                p = rng.randbelow(L)
                for r in range(d):
                    ws[r] = rng.randbelow(n2)
                if load[p] < C:
                    counts[p] += 1
                    fen.update(p, 1)
                    self.total += 1
                    self._load_up(p)
                    if visits is not None:
                        key += base_pow[p]
                else:
                    u = pu[p]
                    v = pv[p]
                    rowu = pmat[u]
                    rowv = pmat[v]
                    best_r = -1
                    best_max = C
                    for r in range(d):
                        w = ws[r]
                        if w >= u:
                            w += 1
                        if w >= v:
                            w += 1
                        a = load[rowu[w]]
                        b = load[rowv[w]]
                        if a < C and b < C:
                            m = a if a > b else b
                            if m < best_max:
                                best_max = m
                                best_r = r
                                if fdar or m == 0:
                                    break
                    if best_r >= 0:
                        w = ws[best_r]
                        q = L + p * n2 + w
                        if w >= u:
                            w += 1
                        if w >= v:
                            w += 1
                        counts[q] += 1
                        fen.update(q, 1)
                        self.total += 1
                        self._load_up(rowu[w])
                        self._load_up(rowv[w])
                        if visits is not None:
                            key += base_pow[q]
                    else:
                        self.blocked += 1
            else:
                s = rng.randbelow(K)
                if s < self.total:
                    q = fen.select(s)
                    counts[q] -= 1
                    fen.update(q, -1)
                    self.total -= 1
                    if q < L:
                        self._load_down(q)
                    else:
                        t = q - L
                        p = t // n2
                        w = t - p * n2
                        u = pu[p]
                        v = pv[p]
                        if w >= u:
                            w += 1
                        if w >= v:
                            w += 1
                        self._load_down(pmat[u][w])
                        self._load_down(pmat[v][w])
                    if visits is not None:
                        key -= base_pow[q]
                else:
                    self.noop_departures += 1
            self.steps += 1
            if visits is not None:
                visits[key] += 1
            if track_R and self.num_bad == 0:
                in_r_steps += 1
            if zeta is not None:
                lc = self.linkcount
                for j in range(C + 1):
                    zeta[j] += lc[j]
        return in_r_steps


class CoupledKernel:
    """Two chains under shared randomness with matched-call departures.

    Departure slots are laid out per step as [matched pairs | positionally
    zipped surplus calls | unpaired surplus of the larger chain | empty].
    Matched multiplicities (per-route minima) and each chain's surplus are
    maintained in Fenwick trees so a slot resolves in O(log R).
    """

    def __init__(self, n, C, d, lam, fdar=0, seed=0, counts_x=None, counts_y=None):
        self.n = int(n)
        self.C = int(C)
        self.d = int(d)
        self.lam = float(lam)
        self.fdar = int(fdar)
        self.L = pair_count(self.n)
        self.n2 = self.n - 2
        self.R = route_count(self.n)
        self.K = self.C * self.L
        self.p_arr = self.lam / (self.lam + self.C)
        pu, pv, pmat = pair_arrays(self.n)
        self.pu = [int(x) for x in pu]
        self.pv = [int(x) for x in pv]
        self.pmat = [[int(pmat[a][b]) for b in range(self.n)] for a in range(self.n)]
        self.rng = Xoshiro256(seed)
        self.steps = 0
        self.blocked_x = 0
        self.blocked_y = 0
        self.reset(counts_x, counts_y, reseed=None)

    def reset(self, counts_x=None, counts_y=None, reseed=None):
        """Reinstall start states (and optionally reseed) without reallocating."""
        n, C = self.n, self.C
        if counts_x is None:
            counts_x = np.zeros(self.R, dtype=np.int64)
        if counts_y is None:
            counts_y = np.zeros(self.R, dtype=np.int64)
        sx = _counts_to_state(n, C, counts_x)
        sy = _counts_to_state(n, C, counts_y)
        self.cx = [int(c) for c in sx.counts_vector()]
        self.cy = [int(c) for c in sy.counts_vector()]
        self.loadx = [int(x) for x in sx._load]
        self.loady = [int(x) for x in sy._load]
        mins = [min(a, b) for a, b in zip(self.cx, self.cy)]
        ex = [a - m for a, m in zip(self.cx, mins)]
        ey = [b - m for b, m in zip(self.cy, mins)]
        self.fm = Fenwick.from_counts(mins)
        self.fex = Fenwick.from_counts(ex)
        self.fey = Fenwick.from_counts(ey)
        self.tm = sum(mins)
        self.tex = sum(ex)
        self.tey = sum(ey)
        if reseed is not None:
            self.rng = Xoshiro256(reseed)

    @property
    def l1(self) -> int:
        return self.tex + self.tey

    def counts_x_array(self):
        return np.array(self.cx, dtype=np.int64)

    def counts_y_array(self):
        return np.array(self.cy, dtype=np.int64)

    def rng_state(self):
        return self.rng.get_state()

    def set_rng_state(self, state):
        self.rng.set_state(state)

    def _bump_x(self, q, delta):
        old = self.cx[q]
        new = old + delta
        self.cx[q] = new
        oth = self.cy[q]
        dm = (new if new < oth else oth) - (old if old < oth else oth)
        if dm:
            self.fm.update(q, dm)
            self.tm += dm
            self.fey.update(q, -dm)
            self.tey -= dm
        dex = delta - dm
        if dex:
            self.fex.update(q, dex)
            self.tex += dex

    def _bump_y(self, q, delta):
        old = self.cy[q]
        new = old + delta
        self.cy[q] = new
        oth = self.cx[q]
        dm = (new if new < oth else oth) - (old if old < oth else oth)
        if dm:
            self.fm.update(q, dm)
            self.tm += dm
            self.fex.update(q, -dm)
            self.tex -= dm
        dex = delta - dm
        if dex:
            self.fey.update(q, dex)
            self.tey += dex

    def _route(self, load, p, ws):
        """Routing on one chain's loads; returns route id or -1 when blocked."""
        C, L = self.C, self.L
        if load[p] < C:
            return p
        u = self.pu[p]
        v = self.pv[p]
        rowu = self.pmat[u]
        rowv = self.pmat[v]
        best_r = -1
        best_max = C
        for r in range(self.d):
            w = ws[r]
            if w >= u:
                w += 1
            if w >= v:
                w += 1
            a = load[rowu[w]]
            b = load[rowv[w]]
            if a < C and b < C:
                m = a if a > b else b
                if m < best_max:
                    best_max = m
                    best_r = r
                    if self.fdar or m == 0:
                        break
        if best_r < 0:
            return -1
        return L + p * self.n2 + ws[best_r]

    def _legs(self, q):
        if q < self.L:
            return (q,)
        t = q - self.L
        p = t // self.n2
        w = t - p * self.n2
        u = self.pu[p]
        v = self.pv[p]
        if w >= u:
            w += 1
        if w >= v:
            w += 1
        return (self.pmat[u][w], self.pmat[v][w])

    def _step(self):
        rng = self.rng
        if rng.u01() < self.p_arr:
            p = rng.randbelow(self.L)
            ws = [rng.randbelow(self.n2) for _ in range(self.d)]
            qx = self._route(self.loadx, p, ws)
            qy = self._route(self.loady, p, ws)
            if qx >= 0:
                self._bump_x(qx, 1)
                for e in self._legs(qx):
                    self.loadx[e] += 1
            else:
                self.blocked_x += 1
            if qy >= 0:
                self._bump_y(qy, 1)
                for e in self._legs(qy):
                    self.loady[e] += 1
            else:
                self.blocked_y += 1
        else:
            s = rng.randbelow(self.K)
            if s < self.tm:
                q = self.fm.select(s)
                self._bump_x(q, -1)
                for e in self._legs(q):
                    self.loadx[e] -= 1
                self._bump_y(q, -1)
                for e in self._legs(q):
                    self.loady[e] -= 1
            else:
                i = s - self.tm
                if i < self.tex:
                    q = self.fex.select(i)
                    self._bump_x(q, -1)
                    for e in self._legs(q):
                        self.loadx[e] -= 1
                if i < self.tey:
                    q = self.fey.select(i)
                    self._bump_y(q, -1)
                    for e in self._legs(q):
                        self.loady[e] -= 1
        self.steps += 1

    def run(self, steps):
        for _ in range(steps):
            self._step()

    def run_until_coalesced(self, max_steps) -> int:
        """Steps until l1 hits 0, or -1 if still apart after max_steps."""
        if self.tex + self.tey == 0:
            return 0
        done = 0
        while done < max_steps:
            self._step()
            done += 1
            if self.tex + self.tey == 0:
                return done
        return -1
