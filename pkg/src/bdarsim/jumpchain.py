"""One-step dynamics of the lazy jump chain.

A step is an arrival with probability lam/(lam+C), else a potential
departure through a slot drawn uniformly from {1 .. C*binom(n,2)} and matched
against the canonical call list (no-op when the slot lands past the occupied
prefix). Arrival events always carry their d candidate intermediates, drawn
with replacement from the endpoints' complement, so the same event stream
drives either routing variant and both chains of a coupling.

Randomness is consumed in a fixed order per step: event type, then endpoint
pair and the d intermediates (arrivals) or the slot (departures). The
compiled and pure-Python kernels replay exactly this order; tests assert
trajectory equality between this reference implementation and the kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    ModelParams,
    NetworkState,
    intermediate_from_rank,
    pair_arrays,
    pair_count,
)
from .rng import Xoshiro256

DIRECT = "direct"
INDIRECT = "indirect"
BLOCKED = "blocked"

VARIANT_BDAR = "bdar"
VARIANT_FDAR = "fdar"


@dataclass(frozen=True)
class ArrivalEvent:
    """Arrival for endpoint pair {u, v} with candidate intermediates.

    Labels are 1-based, u < v; intermediates has length d, entries drawn
    uniformly with replacement from the other n-2 nodes (duplicates allowed).
    """

    u: int
    v: int
    intermediates: tuple[int, ...]


@dataclass(frozen=True)
class DepartureEvent:
    """Potential departure at 1-based slot in {1 .. C*binom(n,2)}."""

    slot: int


Event = Union[ArrivalEvent, DepartureEvent]


@dataclass(frozen=True)
class RouteDecision:
    """Outcome of routing one arrival.

    kind is 'direct', 'indirect' or 'blocked'; for indirect routes,
    intermediate is the chosen node and position its 1-based index r in the
    event's candidate list.
    """

    kind: str
    intermediate: Optional[int] = None
    position: Optional[int] = None


@dataclass(frozen=True)
class TransitionRecord:
    event: Event
    decision: Optional[RouteDecision]
    departed: Optional[tuple]
    noop: bool
    pre_calls: int
    post_calls: int


def sample_event(params: ModelParams, rng: Xoshiro256) -> Event:
    """Draw one jump-chain event (arrival with probability lam/(lam+C))."""
    if rng.u01() < params.p_arrival:
        n = params.n
        pu, pv, _ = pair_arrays(n)
        p = rng.randbelow(params.num_pairs)
        u, v = int(pu[p]), int(pv[p])
        mids = tuple(
            intermediate_from_rank(u, v, rng.randbelow(n - 2)) + 1
            for _ in range(params.d)
        )
        return ArrivalEvent(u=u + 1, v=v + 1, intermediates=mids)
    return DepartureEvent(slot=rng.randbelow(params.slot_count) + 1)


def route_bdar(state: NetworkState, event: ArrivalEvent) -> RouteDecision:
    """Balanced routing: direct if it has spare capacity, else the feasible
    alternative minimizing the larger leg load, ties to the earliest listed."""
    C = state.C
    if state.link_load(event.u, event.v) < C:
        return RouteDecision(DIRECT)
    best_r = -1
    best_w = -1
    best_max = C
    for r, w in enumerate(event.intermediates):
        a = state.link_load(event.u, w)
        b = state.link_load(w, event.v)
        if a < C and b < C:
            m = a if a > b else b
            if m < best_max:
                best_max = m
                best_r = r
                best_w = w
    if best_r < 0:
        return RouteDecision(BLOCKED)
    return RouteDecision(INDIRECT, intermediate=best_w, position=best_r + 1)


def route_fdar(state: NetworkState, event: ArrivalEvent) -> RouteDecision:
    """First-fit routing: direct if possible, else the first feasible alternative."""
    C = state.C
    if state.link_load(event.u, event.v) < C:
        return RouteDecision(DIRECT)
    for r, w in enumerate(event.intermediates):
        if state.link_load(event.u, w) < C and state.link_load(w, event.v) < C:
            return RouteDecision(INDIRECT, intermediate=w, position=r + 1)
    return RouteDecision(BLOCKED)


_ROUTERS = {VARIANT_BDAR: route_bdar, VARIANT_FDAR: route_fdar}


def _check_decision(state: NetworkState, event: ArrivalEvent, decision: RouteDecision):
    C = state.C
    direct_load = state.link_load(event.u, event.v)
    if decision.kind == DIRECT:
        if direct_load >= C:
            raise ValueError("inconsistent decision: direct route has no spare capacity")
        return
    if direct_load < C:
        raise ValueError("inconsistent decision: direct route was available")
    feasible = [
        r
        for r, w in enumerate(event.intermediates)
        if state.link_load(event.u, w) < C and state.link_load(w, event.v) < C
    ]
    if decision.kind == BLOCKED:
        if feasible:
            raise ValueError("inconsistent decision: a feasible alternative exists")
        return
    r = decision.position - 1
    if r not in feasible or event.intermediates[r] != decision.intermediate:
        raise ValueError("inconsistent decision: chosen alternative is not feasible")


def apply_arrival(
    state: NetworkState,
    event: ArrivalEvent,
    decision: RouteDecision,
    check: bool = False,
) -> NetworkState:
    """Apply a routing decision, returning the successor state.

    With check=True the decision is re-validated against the state first
    (used by tests; inconsistent decisions raise ValueError).
    """
    if check:
        _check_decision(state, event, decision)
    new = state.copy()
    _arrive_inplace(new, event, decision)
    return new


def _arrive_inplace(state: NetworkState, event: ArrivalEvent, decision: RouteDecision):
    if decision.kind == DIRECT:
        state.add_direct(event.u, event.v)
    elif decision.kind == INDIRECT:
        state.add_indirect(event.u, decision.intermediate, event.v)
    # blocked arrivals leave the state unchanged


def _slot_route(state: NetworkState, slot: int) -> Optional[int]:
    """Route id holding the slot-th canonical call, or None past the prefix."""
    if slot > state.total_calls:
        return None
    counts = state.counts_vector()
    cum = np.cumsum(counts)
    return int(np.searchsorted(cum, slot, side="left"))


def _depart_inplace(state: NetworkState, slot: int) -> Optional[tuple]:
    route = _slot_route(state, slot)
    if route is None:
        return None
    n = state.n
    L = pair_count(n)
    pu, pv, _ = pair_arrays(n)
    if route < L:
        u, v = int(pu[route]), int(pv[route])
        state.add_direct(u + 1, v + 1, -1)
        return ("D", u + 1, v + 1)
    p, k = divmod(route - L, n - 2)
    u, v = int(pu[p]), int(pv[p])
    w = intermediate_from_rank(u, v, k)
    state.add_indirect(u + 1, w + 1, v + 1, -1)
    return ("I", u + 1, v + 1, w + 1)


def apply_departure(state: NetworkState, slot: int) -> NetworkState:
    """Remove the slot-th canonical call; identity when the slot is empty."""
    if not (1 <= slot <= state.C * pair_count(state.n)):
        raise ValueError(f"slot must lie in 1..{state.C * pair_count(state.n)}, got {slot}")
    new = state.copy()
    _depart_inplace(new, slot)
    return new


def step(
    state: NetworkState,
    params: ModelParams,
    rng: Xoshiro256,
    variant: str = VARIANT_BDAR,
) -> tuple[NetworkState, TransitionRecord]:
    """Advance one jump-chain step, returning the new state and a record."""
    router = _ROUTERS[variant]
    event = sample_event(params, rng)
    pre = state.total_calls
    new = state.copy()
    if isinstance(event, ArrivalEvent):
        decision = router(new, event)
        _arrive_inplace(new, event, decision)
        record = TransitionRecord(
            event=event,
            decision=decision,
            departed=None,
            noop=decision.kind == BLOCKED,
            pre_calls=pre,
            post_calls=new.total_calls,
        )
    else:
        departed = _depart_inplace(new, event.slot)
        record = TransitionRecord(
            event=event,
            decision=None,
            departed=departed,
            noop=departed is None,
            pre_calls=pre,
            post_calls=new.total_calls,
        )
    return new, record


def steps_for_time(params: ModelParams, t: float) -> int:
    """Jump-chain steps corresponding to continuous time t (rounded)."""
    return params.steps_for_time(t)


@dataclass
class RunTally:
    steps: int = 0
    arrivals: int = 0
    blocked: int = 0
    departures: int = 0
    noop_departures: int = 0


def simulate(
    params: ModelParams,
    steps: int,
    rng: Xoshiro256,
    variant: str = VARIANT_BDAR,
    state: Optional[NetworkState] = None,
    validate_every: int = 0,
) -> tuple[NetworkState, RunTally]:
    """Reference trajectory runner (clarity over speed; kernels are the fast lane).

    validate_every > 0 re-checks all state invariants at that period and
    raises on the first violation.
    """
    router = _ROUTERS[variant]
    if state is None:
        state = NetworkState(params.n, params.C)
    else:
        state = state.copy()
    tally = RunTally()
    for i in range(steps):
        event = sample_event(params, rng)
        if isinstance(event, ArrivalEvent):
            tally.arrivals += 1
            decision = router(state, event)
            if decision.kind == BLOCKED:
                tally.blocked += 1
            else:
                _arrive_inplace(state, event, decision)
        else:
            tally.departures += 1
            if _depart_inplace(state, event.slot) is None:
                tally.noop_departures += 1
        tally.steps += 1
        if validate_every and (i + 1) % validate_every == 0:
            problems = state.validate()
            if problems:
                raise AssertionError(
                    f"invariant violation at step {i + 1}: " + "; ".join(problems)
                )
    return state, tally
