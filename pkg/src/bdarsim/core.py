"""Model parameters and the network load state on the complete graph.

Nodes are labelled 1..n at the package boundary (JSON, public state methods).
Internally, links and two-link paths are flattened to dense route indices so
both the reference step functions and the compiled kernels can operate on
plain arrays:

* link (pair) index: unordered pairs {u, v} of 0-based nodes in
  lexicographic order, ``p = u*(2n - u - 1)/2 + (v - u - 1)`` for u < v;
* route index: the L = binom(n, 2) direct routes come first (route id = pair
  index), followed by the indirect routes, id ``L + p*(n-2) + k`` where k is
  the rank of the intermediate node in the ascending complement of pair p.

The route-id order is exactly the canonical call order used for departures.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

REGIME_LOW = "low"
REGIME_HIGH = "high"
REGIME_UNSUPPORTED = "unsupported"


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def pair_index(n: int, u: int, v: int) -> int:
    """Index of the unordered pair {u, v} (0-based nodes, lex order)."""
    if u > v:
        u, v = v, u
    return u * (2 * n - u - 1) // 2 + (v - u - 1)


def intermediate_rank(u: int, v: int, w: int) -> int:
    """Rank of w within the ascending complement of {u, v} (all 0-based)."""
    return w - (w > u) - (w > v)


def intermediate_from_rank(u: int, v: int, rank: int) -> int:
    lo, hi = (u, v) if u < v else (v, u)
    w = rank
    if w >= lo:
        w += 1
    if w >= hi:
        w += 1
    return w


def route_count(n: int) -> int:
    """Direct plus indirect route coordinates: binom(n,2)*(n-1)."""
    return pair_count(n) * (n - 1)


@lru_cache(maxsize=None)
def pair_arrays(n: int):
    """(pair_u, pair_v, pair_matrix) lookup tables for 0-based nodes."""
    L = pair_count(n)
    pu = np.empty(L, dtype=np.int64)
    pv = np.empty(L, dtype=np.int64)
    pmat = np.full((n, n), -1, dtype=np.int64)
    idx = 0
    for u in range(n):
        for v in range(u + 1, n):
            pu[idx] = u
            pv[idx] = v
            pmat[u, v] = idx
            pmat[v, u] = idx
            idx += 1
    pu.setflags(write=False)
    pv.setflags(write=False)
    pmat.setflags(write=False)
    return pu, pv, pmat


@lru_cache(maxsize=None)
def leg_arrays(n: int):
    """Per-route leg link indices (leg1, leg2); leg2 is -1 on direct routes."""
    L = pair_count(n)
    pu, pv, pmat = pair_arrays(n)
    leg1 = np.empty(route_count(n), dtype=np.int64)
    leg2 = np.full(route_count(n), -1, dtype=np.int64)
    leg1[:L] = np.arange(L)
    q = L
    for p in range(L):
        u, v = int(pu[p]), int(pv[p])
        for k in range(n - 2):
            w = intermediate_from_rank(u, v, k)
            leg1[q] = pmat[u, w]
            leg2[q] = pmat[w, v]
            q += 1
    leg1.setflags(write=False)
    leg2.setflags(write=False)
    return leg1, leg2


def loads_from_counts(n: int, counts) -> np.ndarray:
    """Per-link loads implied by a flat route-count vector."""
    counts = np.asarray(counts, dtype=np.int64)
    leg1, leg2 = leg_arrays(n)
    load = np.zeros(pair_count(n), dtype=np.int64)
    np.add.at(load, leg1, counts)
    ind = leg2 >= 0
    np.add.at(load, leg2[ind], counts[ind])
    return load


@dataclass(frozen=True)
class ModelParams:
    """Model inputs and the constants derived from them.

    n     node count (>= 3)
    C     per-link capacity (>= 1)
    d     number of alternative two-link routes drawn per arrival (>= 1)
    lam   arrival rate per endpoint pair (> 0)
    """

    n: int
    C: int
    d: int
    lam: float

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 3:
            raise ValueError(f"n must be an integer >= 3, got {self.n!r}")
        if not isinstance(self.C, int) or self.C < 1:
            raise ValueError(f"C must be an integer >= 1, got {self.C!r}")
        if not isinstance(self.d, int) or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d!r}")
        lam = float(self.lam)
        if not math.isfinite(lam) or lam <= 0.0:
            raise ValueError(f"lam must be a positive finite real, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)

    @property
    def num_pairs(self) -> int:
        return pair_count(self.n)

    @property
    def slot_count(self) -> int:
        """Departure slots per step: C * binom(n, 2)."""
        return self.C * self.num_pairs

    @property
    def num_routes(self) -> int:
        return route_count(self.n)

    @property
    def p_arrival(self) -> float:
        return self.lam / (self.lam + self.C)

    @property
    def lambda0(self) -> float:
        """Low-rate regime threshold 1/(8d + 4)."""
        return 1.0 / (8 * self.d + 4)

    @property
    def lambda1(self) -> float:
        """High-rate regime threshold 8000 C^2 d ln(240 C^2 d)."""
        C, d = self.C, self.d
        return 8000.0 * C * C * d * math.log(240.0 * C * C * d)

    @property
    def s_burn_in(self) -> float:
        """High-rate burn-in, 3 binom(n,2) C (lam+C)/lam ln(240 C^2 d), as a real."""
        C, d = self.C, self.d
        return (
            3.0
            * self.num_pairs
            * C
            * (self.lam + C)
            / self.lam
            * math.log(240.0 * C * C * d)
        )

    @property
    def burn_in_steps(self) -> int:
        """s_burn_in rounded up to whole steps."""
        return int(math.ceil(self.s_burn_in))

    @property
    def regime(self) -> str:
        if self.lam < self.lambda0:
            return REGIME_LOW
        if self.lam >= self.lambda1:
            return REGIME_HIGH
        return REGIME_UNSUPPORTED

    def steps_for_time(self, t: float) -> int:
        """Expected jump-chain steps in continuous time t: round(t (lam+C) binom(n,2))."""
        if t < 0:
            raise ValueError(f"t must be nonnegative, got {t!r}")
        return int(round(t * (self.lam + self.C) * self.num_pairs))

    def to_dict(self) -> dict:
        return {"n": self.n, "C": self.C, "d": self.d, "lambda": self.lam}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        return cls(
            n=int(data["n"]),
            C=int(data["C"]),
            d=int(data["d"]),
            lam=float(data["lambda"]),
        )


class NetworkState:
    """Direct and indirect call counts on K_n with cached link loads.

    ``direct[p]`` counts calls carried on link p alone; ``indirect[p, k]``
    counts calls with endpoint pair p routed through the k-th node of the
    pair's ascending complement. The load of a link is its direct count plus
    every indirect call using it as a leg; loads are maintained incrementally
    on each mutation and can be recomputed from scratch by ``validate``.

    Public methods take 1-based node labels. Mutators do not enforce
    capacity, so invalid states can be constructed deliberately and then
    reported by ``validate``.
    """

    __slots__ = ("n", "C", "direct", "indirect", "_load", "_total")

    def __init__(self, n: int, C: int):
        if n < 3:
            raise ValueError(f"n must be >= 3, got {n!r}")
        if C < 1:
            raise ValueError(f"C must be >= 1, got {C!r}")
        self.n = int(n)
        self.C = int(C)
        L = pair_count(n)
        self.direct = np.zeros(L, dtype=np.int64)
        self.indirect = np.zeros((L, n - 2), dtype=np.int64)
        self._load = np.zeros(L, dtype=np.int64)
        self._total = 0

    @classmethod
    def empty(cls, n: int, C: int) -> "NetworkState":
        return cls(n, C)

    @classmethod
    def fully_loaded(cls, n: int, C: int) -> "NetworkState":
        """Every link at load C, realized with direct calls only."""
        state = cls(n, C)
        state.direct[:] = C
        state._load[:] = C
        state._total = C * pair_count(n)
        return state

    def _node(self, v) -> int:
        if not isinstance(v, (int, np.integer)) or not (1 <= v <= self.n):
            raise ValueError(f"node label must be in 1..{self.n}, got {v!r}")
        return int(v) - 1

    def _pair(self, u: int, v: int) -> int:
        iu, iv = self._node(u), self._node(v)
        if iu == iv:
            raise ValueError(f"link endpoints must differ, got {u!r}, {v!r}")
        return pair_index(self.n, iu, iv)

    @property
    def total_calls(self) -> int:
        return self._total

    def link_load(self, u: int, v: int) -> int:
        """Load of link {u, v}: direct calls plus indirect legs."""
        return int(self._load[self._pair(u, v)])

    def loads(self) -> np.ndarray:
        return self._load.copy()

    def load_matrix(self) -> np.ndarray:
        """n x n symmetric load matrix with -1 on the diagonal (no self links)."""
        n = self.n
        pu, pv, _ = pair_arrays(n)
        mat = np.full((n, n), -1, dtype=np.int64)
        mat[pu, pv] = self._load
        mat[pv, pu] = self._load
        return mat

    def add_direct(self, u: int, v: int, count: int = 1) -> None:
        p = self._pair(u, v)
        self.direct[p] += count
        self._load[p] += count
        self._total += count

    def add_indirect(self, u: int, w: int, v: int, count: int = 1) -> None:
        """Add `count` calls on the path u-w-v (endpoints {u, v} through w)."""
        iu, iw, iv = self._node(u), self._node(w), self._node(v)
        if len({iu, iw, iv}) != 3:
            raise ValueError("path nodes must be three distinct labels")
        p = pair_index(self.n, iu, iv)
        k = intermediate_rank(min(iu, iv), max(iu, iv), iw)
        self.indirect[p, k] += count
        self._load[pair_index(self.n, iu, iw)] += count
        self._load[pair_index(self.n, iw, iv)] += count
        self._total += count

    def counts_vector(self) -> np.ndarray:
        """Flat route-count vector in canonical route-id order."""
        return np.concatenate([self.direct, self.indirect.ravel()])

    @classmethod
    def from_counts(cls, n: int, C: int, counts) -> "NetworkState":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (route_count(n),):
            raise ValueError(
                f"expected {route_count(n)} route counts for n={n}, got shape {counts.shape}"
            )
        state = cls(n, C)
        L = pair_count(n)
        state.direct[:] = counts[:L]
        state.indirect[:] = counts[L:].reshape(L, n - 2)
        state._recompute_loads()
        return state

    def _recompute_loads(self) -> None:
        self._load = loads_from_counts(self.n, self.counts_vector())
        self._total = int(self.direct.sum() + self.indirect.sum())

    def validate(self) -> list[str]:
        """Diagnostic invariant check; empty list means the state is sound."""
        n, C = self.n, self.C
        pu, pv, _ = pair_arrays(n)
        problems = []
        for p in np.nonzero(self.direct < 0)[0]:
            problems.append(
                f"negative direct count on link ({pu[p] + 1},{pv[p] + 1}): {self.direct[p]}"
            )
        neg_p, neg_k = np.nonzero(self.indirect < 0)
        for p, k in zip(neg_p, neg_k):
            w = intermediate_from_rank(int(pu[p]), int(pv[p]), int(k))
            problems.append(
                f"negative indirect count on path ({pu[p] + 1},{w + 1},{pv[p] + 1}): "
                f"{self.indirect[p, k]}"
            )
        load = loads_from_counts(n, self.counts_vector())
        for p in np.nonzero(load != self._load)[0]:
            problems.append(
                f"cached load mismatch on link ({pu[p] + 1},{pv[p] + 1}): "
                f"cached {self._load[p]}, recomputed {load[p]}"
            )
        for p in np.nonzero(load > C)[0]:
            problems.append(
                f"capacity violation at link ({pu[p] + 1},{pv[p] + 1}): load {load[p]} > C={C}"
            )
        true_total = int(self.direct.sum() + self.indirect.sum())
        if true_total != self._total:
            problems.append(f"cached total {self._total} != recomputed {true_total}")
        return problems

    def canonical_call_list(self) -> list[tuple]:
        """Every call in canonical departure order, repeats expanded.

        Direct calls first, lexicographic by link; then indirect calls,
        lexicographic by (endpoint pair, intermediate). Entries are
        ('D', u, v) or ('I', u, v, w) with 1-based labels and u < v.
        """
        n = self.n
        pu, pv, _ = pair_arrays(n)
        calls: list[tuple] = []
        for p in np.nonzero(self.direct)[0]:
            calls.extend([("D", int(pu[p]) + 1, int(pv[p]) + 1)] * int(self.direct[p]))
        idx_p, idx_k = np.nonzero(self.indirect)
        for p, k in zip(idx_p, idx_k):
            u, v = int(pu[p]), int(pv[p])
            w = intermediate_from_rank(u, v, int(k))
            calls.extend([("I", u + 1, v + 1, w + 1)] * int(self.indirect[p, k]))
        return calls

    def copy(self) -> "NetworkState":
        dup = NetworkState(self.n, self.C)
        dup.direct[:] = self.direct
        dup.indirect[:] = self.indirect
        dup._load[:] = self._load
        dup._total = self._total
        return dup

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkState):
            return NotImplemented
        return (
            self.n == other.n
            and self.C == other.C
            and np.array_equal(self.direct, other.direct)
            and np.array_equal(self.indirect, other.indirect)
        )

    def __hash__(self):
        return hash((self.n, self.C, self.counts_vector().tobytes()))

    def __repr__(self) -> str:
        return (
            f"NetworkState(n={self.n}, C={self.C}, calls={self._total}, "
            f"max_load={int(self._load.max()) if len(self._load) else 0})"
        )

    def to_dict(self) -> dict:
        n = self.n
        pu, pv, _ = pair_arrays(n)
        direct = [
            [int(pu[p]) + 1, int(pv[p]) + 1, int(self.direct[p])]
            for p in np.nonzero(self.direct)[0]
        ]
        indirect = []
        idx_p, idx_k = np.nonzero(self.indirect)
        for p, k in zip(idx_p, idx_k):
            u, v = int(pu[p]), int(pv[p])
            w = intermediate_from_rank(u, v, int(k))
            indirect.append([u + 1, v + 1, w + 1, int(self.indirect[p, k])])
        return {"n": n, "C": self.C, "direct": direct, "indirect": indirect}

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkState":
        try:
            n = int(data["n"])
            C = int(data["C"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed state document: {exc}") from exc
        state = cls(n, C)
        for entry in data.get("direct", []):
            u, v, c = (int(x) for x in entry)
            state.add_direct(u, v, c)
        for entry in data.get("indirect", []):
            u, v, w, c = (int(x) for x in entry)
            state.add_indirect(u, w, v, c)
        problems = state.validate()
        if problems:
            raise ValueError("invalid state document: " + "; ".join(problems))
        return state

    @classmethod
    def from_json(cls, text: str) -> "NetworkState":
        return cls.from_dict(json.loads(text))
