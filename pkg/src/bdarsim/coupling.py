"""Coupled chains, distances between states, and mixing experiments.

Two chains run under shared randomness: an arrival uses the same endpoint
pair and the same candidate intermediates in both (each chain routes it on
its own loads), and a potential departure draws one shared slot against a
pairing of the two call populations. Calls occupying identical routes are
paired first (matched), the surplus calls of the two chains are zipped
positionally in canonical route order, and the leftover surplus of the
larger chain stays unpaired. A slot holding a matched or zipped pair departs
one call in each chain, an unpaired call departs alone, and a slot past the
occupied range is a no-op in both. The pairing is recomputed from the
current states every step, so each coordinate, viewed alone, is an ordinary
jump chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    ModelParams,
    NetworkState,
    intermediate_from_rank,
    leg_arrays,
    pair_arrays,
    pair_count,
)
from .jumpchain import (
    DIRECT,
    INDIRECT,
    VARIANT_BDAR,
    VARIANT_FDAR,
    ArrivalEvent,
    route_bdar,
    route_fdar,
)
from .kernels import ChainKernel, CoupledKernel
from .rng import Xoshiro256, spawn_seeds


def _require_compatible(x: NetworkState, y: NetworkState) -> None:
    if x.n != y.n or x.C != y.C:
        raise ValueError(
            f"states live on different models: (n={x.n}, C={x.C}) vs (n={y.n}, C={y.C})"
        )


def _node_index(state: NetworkState, v: int) -> int:
    if not isinstance(v, (int, np.integer)) or not (1 <= v <= state.n):
        raise ValueError(f"node label must be in 1..{state.n}, got {v!r}")
    return int(v) - 1


def l1_distance(x: NetworkState, y: NetworkState) -> int:
    """Sum over all routes (direct and indirect) of |x count - y count|."""
    _require_compatible(x, y)
    return int(
        np.abs(x.direct - y.direct).sum() + np.abs(x.indirect - y.indirect).sum()
    )


def node_distance(x: NetworkState, y: NetworkState, v: int) -> int:
    """The coordinate sum of l1_distance restricted to routes touching v.

    Counts direct calls on links at v, indirect calls with v as an endpoint,
    and indirect calls routed through v.
    """
    _require_compatible(x, y)
    iv = _node_index(x, v)
    pu, pv, _ = pair_arrays(x.n)
    dd = np.abs(x.direct - y.direct)
    di = np.abs(x.indirect - y.indirect)
    endpoint = (pu == iv) | (pv == iv)
    total = int(dd[endpoint].sum() + di[endpoint].sum())
    rows = np.nonzero(~endpoint)[0]
    cols = iv - (iv > pu[rows]).astype(np.int64) - (iv > pv[rows]).astype(np.int64)
    total += int(di[rows, cols].sum())
    return total


def unbalanced_links(x: NetworkState, y: NetworkState) -> list[tuple[int, int]]:
    """Links whose loads differ between the two states, as 1-based (u, v)."""
    _require_compatible(x, y)
    pu, pv, _ = pair_arrays(x.n)
    diff = np.nonzero(x.loads() != y.loads())[0]
    return [(int(pu[p]) + 1, int(pv[p]) + 1) for p in diff]


def weighted_distance(x: NetworkState, y: NetworkState) -> int:
    """Coupling distance: (4C+1) per indirect-call difference plus a headroom
    term C - min(load) on every unbalanced link."""
    _require_compatible(x, y)
    C = x.C
    lx, ly = x.loads(), y.loads()
    unb = lx != ly
    headroom = int((C - np.minimum(lx, ly))[unb].sum())
    indirect = int(np.abs(x.indirect - y.indirect).sum())
    return (4 * C + 1) * indirect + headroom


def weighted_node_distance(x: NetworkState, y: NetworkState, v: int) -> int:
    """weighted_distance restricted to routes and links incident to v."""
    _require_compatible(x, y)
    iv = _node_index(x, v)
    C = x.C
    pu, pv, _ = pair_arrays(x.n)
    di = np.abs(x.indirect - y.indirect)
    endpoint = (pu == iv) | (pv == iv)
    ind_v = int(di[endpoint].sum())
    rows = np.nonzero(~endpoint)[0]
    cols = iv - (iv > pu[rows]).astype(np.int64) - (iv > pv[rows]).astype(np.int64)
    ind_v += int(di[rows, cols].sum())
    lx, ly = x.loads(), y.loads()
    unb_v = endpoint & (lx != ly)
    headroom = int((C - np.minimum(lx, ly))[unb_v].sum())
    return (4 * C + 1) * ind_v + headroom


def call_accounting(x: NetworkState, y: NetworkState) -> tuple[int, int, int]:
    """(a, b, c): unbalanced links, unmatched indirect calls, covered direct calls.

    An unmatched direct call sitting on link uv in one state is covered when
    that state's load on uv does not exceed the other state's. Each covered
    call is induced by some unmatched indirect call occupying the link in the
    other state, and one indirect call accounts for at most two of them, so
    c <= 2b always.
    """
    _require_compatible(x, y)
    lx, ly = x.loads(), y.loads()
    a = int((lx != ly).sum())
    b = int(np.abs(x.indirect - y.indirect).sum())
    dx, dy = x.direct, y.direct
    cov_x = (dx > dy) & (lx <= ly)
    cov_y = (dy > dx) & (ly <= lx)
    c = int((dx - dy)[cov_x].sum() + (dy - dx)[cov_y].sum())
    if c > 2 * b:
        raise AssertionError(
            f"covered-call bound violated: c={c} > 2b={2 * b} (a={a})"
        )
    return a, b, c


@dataclass(frozen=True)
class Pairing:
    """Departure pairing derived from a pair of states.

    matched[q] calls on route q are paired across the chains; x_extra and
    y_extra hold each chain's surplus per route. Surplus calls are zipped by
    position in canonical route order; positions past the shorter surplus are
    unpaired.
    """

    matched: np.ndarray
    x_extra: np.ndarray
    y_extra: np.ndarray

    @property
    def matched_total(self) -> int:
        return int(self.matched.sum())

    @property
    def x_extra_total(self) -> int:
        return int(self.x_extra.sum())

    @property
    def y_extra_total(self) -> int:
        return int(self.y_extra.sum())

    @property
    def unpaired_total(self) -> int:
        return abs(self.x_extra_total - self.y_extra_total)


@dataclass
class CoupledPair:
    x: NetworkState
    y: NetworkState

    def __post_init__(self):
        _require_compatible(self.x, self.y)

    @classmethod
    def from_states(cls, x: NetworkState, y: NetworkState) -> "CoupledPair":
        return cls(x.copy(), y.copy())

    def pairing(self) -> Pairing:
        cx = self.x.counts_vector()
        cy = self.y.counts_vector()
        m = np.minimum(cx, cy)
        return Pairing(matched=m, x_extra=cx - m, y_extra=cy - m)

    @property
    def l1(self) -> int:
        return l1_distance(self.x, self.y)

    @property
    def coalesced(self) -> bool:
        return self.l1 == 0


def _kth_route(counts: np.ndarray, k: int) -> int:
    """Route id holding the k-th unit (0-based) of a multiplicity vector."""
    cum = np.cumsum(counts)
    return int(np.searchsorted(cum, k, side="right"))


def _remove_route_call(state: NetworkState, q: int) -> NetworkState:
    new = state.copy()
    n = state.n
    L = pair_count(n)
    pu, pv, _ = pair_arrays(n)
    if q < L:
        new.add_direct(int(pu[q]) + 1, int(pv[q]) + 1, -1)
    else:
        t = q - L
        p, k = divmod(t, n - 2)
        u, v = int(pu[p]), int(pv[p])
        w = intermediate_from_rank(u, v, k)
        new.add_indirect(u + 1, w + 1, v + 1, -1)
    return new


def coupled_step(
    pair: CoupledPair,
    params: ModelParams,
    rng: Xoshiro256,
    variant: str = VARIANT_BDAR,
) -> CoupledPair:
    """One shared event on both chains (reference implementation).

    Consumes randomness in the same order as the solo chain, so the compiled
    coupled kernel replays it exactly: event draw, then endpoint pair and d
    intermediates (arrival) or one slot (departure).
    """
    x, y = pair.x, pair.y
    if x.n != params.n or x.C != params.C:
        raise ValueError("pair does not match params")
    router = route_bdar if variant == VARIANT_BDAR else route_fdar
    n = params.n
    if rng.u01() < params.p_arrival:
        pu, pv, _ = pair_arrays(n)
        p = rng.randbelow(params.num_pairs)
        u, v = int(pu[p]), int(pv[p])
        mids = tuple(
            intermediate_from_rank(u, v, rng.randbelow(n - 2)) + 1
            for _ in range(params.d)
        )
        event = ArrivalEvent(u=u + 1, v=v + 1, intermediates=mids)
        nx, ny = x.copy(), y.copy()
        for state in (nx, ny):
            decision = router(state, event)
            if decision.kind == DIRECT:
                state.add_direct(event.u, event.v)
            elif decision.kind == INDIRECT:
                state.add_indirect(event.u, decision.intermediate, event.v)
        return CoupledPair(nx, ny)
    s = rng.randbelow(params.slot_count)
    cx = x.counts_vector()
    cy = y.counts_vector()
    m = np.minimum(cx, cy)
    ex = cx - m
    ey = cy - m
    tm = int(m.sum())
    if s < tm:
        q = _kth_route(m, s)
        return CoupledPair(_remove_route_call(x, q), _remove_route_call(y, q))
    i = s - tm
    nx, ny = x, y
    if i < ex.sum():
        nx = _remove_route_call(x, _kth_route(ex, i))
    if i < ey.sum():
        ny = _remove_route_call(y, _kth_route(ey, i))
    if nx is x:
        nx = x.copy()
    if ny is y:
        ny = y.copy()
    return CoupledPair(nx, ny)


def in_R(state: NetworkState, params: ModelParams) -> bool:
    """Whether every node has at least (n-1)(1 - 1/(60Cd)) fully loaded links.

    Evaluated exactly in integers: node v qualifies when its count of
    non-full links times 60Cd does not exceed n-1.
    """
    if state.n != params.n or state.C != params.C:
        raise ValueError("state does not match params")
    n = state.n
    pu, pv, _ = pair_arrays(n)
    notfull = state.loads() < state.C
    per_node = np.zeros(n, dtype=np.int64)
    np.add.at(per_node, pu[notfull], 1)
    np.add.at(per_node, pv[notfull], 1)
    return bool((per_node * (60 * params.C * params.d) <= n - 1).all())


# -- experiments ----------------------------------------------------------


def _install_rng(kernel, rng: Xoshiro256):
    kernel.set_rng_state(rng.get_state())


def _collect_rng(kernel, rng: Xoshiro256):
    rng.set_state(kernel.rng_state())


def coalescence_experiment(
    params: ModelParams,
    x0: NetworkState,
    y0: NetworkState,
    max_steps: int,
    rng: Xoshiro256,
    variant: str = VARIANT_BDAR,
) -> Optional[int]:
    """Coupled steps until the chains meet; None when censored at max_steps."""
    if max_steps < 0:
        raise ValueError("max_steps must be nonnegative")
    kernel = CoupledKernel(
        params.n,
        params.C,
        params.d,
        params.lam,
        fdar=1 if variant == VARIANT_FDAR else 0,
        counts_x=x0.counts_vector(),
        counts_y=y0.counts_vector(),
    )
    _install_rng(kernel, rng)
    hit = kernel.run_until_coalesced(max_steps)
    _collect_rng(kernel, rng)
    return None if hit < 0 else int(hit)


@dataclass
class CoalescenceBatch:
    params: ModelParams
    max_steps: int
    seeds: list[int]
    times: list[Optional[int]]

    @property
    def replicas(self) -> int:
        return len(self.times)

    @property
    def coalesced(self) -> int:
        return sum(1 for t in self.times if t is not None)

    @property
    def fraction_coalesced(self) -> float:
        return self.coalesced / self.replicas if self.replicas else math.nan

    @property
    def median(self) -> Optional[float]:
        """Median hitting time; None unless at least 90% of replicas met.

        Censored replicas enter the order statistics as +inf, which cannot
        move the median once 90% of the sample is finite.
        """
        if not self.times or self.fraction_coalesced < 0.9:
            return None
        vals = [float(t) if t is not None else math.inf for t in self.times]
        return float(np.median(vals))


def coalescence_batch(
    params: ModelParams,
    replicas: int,
    max_steps: int,
    seed: int,
    x0: Optional[NetworkState] = None,
    y0: Optional[NetworkState] = None,
    variant: str = VARIANT_BDAR,
) -> CoalescenceBatch:
    """Independent coalescence runs from (full, empty) unless told otherwise."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if x0 is None:
        x0 = NetworkState.fully_loaded(params.n, params.C)
    if y0 is None:
        y0 = NetworkState.empty(params.n, params.C)
    cx = x0.counts_vector()
    cy = y0.counts_vector()
    seeds = [int(s) for s in spawn_seeds(seed, replicas)]
    kernel = CoupledKernel(
        params.n,
        params.C,
        params.d,
        params.lam,
        fdar=1 if variant == VARIANT_FDAR else 0,
        counts_x=cx,
        counts_y=cy,
    )
    times: list[Optional[int]] = []
    for s in seeds:
        kernel.reset(cx, cy, reseed=s)
        hit = kernel.run_until_coalesced(max_steps)
        times.append(None if hit < 0 else int(hit))
    return CoalescenceBatch(params=params, max_steps=max_steps, seeds=seeds, times=times)


def theoretical_contraction_factor(params: ModelParams) -> float:
    """One-step expected contraction of the route-count l1 distance,
    1 - (1 - (8d+4) lam) / ((lam+C) binom(n,2)).

    The guarantee behind it needs lam < 1/(8d+4) and n >= max(d^2, 6); above
    that rate the value may exceed 1 and is reported without any claim.
    """
    lam, C, d = params.lam, params.C, params.d
    return 1.0 - (1.0 - (8 * d + 4) * lam) / ((lam + C) * params.num_pairs)


class DistanceOnePairs:
    """Generator of state pairs at route-count l1 distance exactly 1.

    Draws a base state from a continuously evolving warmed-up solo chain,
    then adds one uniformly chosen feasible call to a copy. When no call fits
    (every link full) it removes one existing call instead; either way the
    pair differs in exactly one route coordinate by one call.
    """

    def __init__(
        self,
        params: ModelParams,
        seed: int,
        warm_time: float = 5.0,
        gap_time: float = 1.0,
        variant: str = VARIANT_BDAR,
    ):
        self.params = params
        self.kernel = ChainKernel(
            params.n,
            params.C,
            params.d,
            params.lam,
            fdar=1 if variant == VARIANT_FDAR else 0,
            seed=seed,
        )
        self.rng = Xoshiro256(spawn_seeds(seed, 2)[1])
        self.gap_steps = max(1, params.steps_for_time(gap_time))
        self.kernel.run(max(1, params.steps_for_time(warm_time)))

    def __call__(self) -> tuple[np.ndarray, np.ndarray]:
        self.kernel.run(self.gap_steps)
        base = self.kernel.counts_array()
        loads = self.kernel.loads_array()
        n, C = self.params.n, self.params.C
        leg1, leg2 = leg_arrays(n)
        feasible = np.nonzero(
            (loads[leg1] < C) & ((leg2 < 0) | (loads[np.maximum(leg2, 0)] < C))
        )[0]
        other = base.copy()
        if feasible.size:
            q = int(feasible[self.rng.randbelow(feasible.size)])
            other[q] += 1
        else:
            occupied = np.nonzero(base)[0]
            q = int(occupied[self.rng.randbelow(occupied.size)])
            other[q] -= 1
        return base, other


@dataclass
class ContractionResult:
    params: ModelParams
    replicas: int
    estimate: float
    stderr: float
    theoretical: float
    records: np.ndarray = field(repr=False)

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.stderr
        return (self.estimate - half, self.estimate + half)


def contraction_estimate(
    params: ModelParams,
    pair_generator: Callable[[], tuple[np.ndarray, np.ndarray]],
    replicas: int,
    rng: Xoshiro256,
    variant: str = VARIANT_BDAR,
) -> ContractionResult:
    """Monte Carlo mean of (l1 after one coupled step) / (l1 before).

    pair_generator supplies route-count vectors for the two chains; pairs at
    distance zero are rejected outright since the ratio is undefined there.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    kernel = CoupledKernel(
        params.n,
        params.C,
        params.d,
        params.lam,
        fdar=1 if variant == VARIANT_FDAR else 0,
    )
    records = np.empty((replicas, 2), dtype=np.int64)
    ratios = np.empty(replicas, dtype=np.float64)
    for i in range(replicas):
        cx, cy = pair_generator()
        pre = int(np.abs(np.asarray(cx) - np.asarray(cy)).sum())
        if pre == 0:
            raise ValueError("pair generator emitted two identical states")
        kernel.reset(cx, cy)
        _install_rng(kernel, rng)
        kernel.run(1)
        _collect_rng(kernel, rng)
        post = kernel.l1
        records[i, 0] = pre
        records[i, 1] = post
        ratios[i] = post / pre
    estimate = float(ratios.mean())
    stderr = float(ratios.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return ContractionResult(
        params=params,
        replicas=replicas,
        estimate=estimate,
        stderr=stderr,
        theoretical=theoretical_contraction_factor(params),
        records=records,
    )


if __name__ == "__main__":
    params = ModelParams(n=10, C=1, d=1, lam=0.05)
    batch = coalescence_batch(params, replicas=20, max_steps=10**7, seed=11)
    print(f"coalescence n={params.n}: median={batch.median} of {batch.replicas}")
    gen = DistanceOnePairs(params, seed=23)
    res = contraction_estimate(params, gen, replicas=2000, rng=Xoshiro256(5))
    print(
        f"contraction: {res.estimate:.6f} +- {res.stderr:.6f}"
        f" (theory {res.theoretical:.6f})"
    )
