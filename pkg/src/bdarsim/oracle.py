"""Exact ground truth for tiny instances.

Enumerates every feasible state, builds the one-step transition matrix of
the lazy jump chain and the generator of the continuous chain from first
principles, solves for the stationary distribution, and evaluates exact
equilibrium expectations. Everything is dense and deterministic; a hard
guard refuses instances whose state space could exceed a million states.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ModelParams,
    NetworkState,
    intermediate_from_rank,
    intermediate_rank,
    leg_arrays,
    pair_arrays,
    pair_count,
    route_count,
)
from .jumpchain import BLOCKED, ArrivalEvent, route_bdar, route_fdar

STATE_GUARD = 10**6
RESIDUAL_TOL = 1e-12


class StateSpaceTooLarge(RuntimeError):
    def __init__(self, params: ModelParams, estimate: int):
        self.estimate = estimate
        super().__init__(
            f"state space for n={params.n}, C={params.C} may hold up to "
            f"{estimate} states, above the {STATE_GUARD} guard"
        )


class OracleError(RuntimeError):
    pass


@dataclass
class StateIndex:
    params: ModelParams
    states: list
    keys: np.ndarray
    key_to_index: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def key_space(self) -> int:
        return (self.params.C + 1) ** route_count(self.params.n)

    def index_of(self, state: NetworkState) -> int:
        return self.key_to_index[_state_key(state.counts_vector(), self.params.C)]


def _state_key(counts: np.ndarray, C: int) -> int:
    key = 0
    base = C + 1
    for c in reversed(counts.tolist()):
        key = key * base + int(c)
    return key


def enumerate_states(params: ModelParams) -> StateIndex:
    """All capacity-feasible route-count vectors, in ascending key order
    (the empty state first)."""
    n, C = params.n, params.C
    R = route_count(n)
    estimate = (C + 1) ** R
    if estimate > STATE_GUARD:
        raise StateSpaceTooLarge(params, estimate)
    leg1, leg2 = leg_arrays(n)
    L = pair_count(n)
    states: list[NetworkState] = []
    keys: list[int] = []
    counts = np.zeros(R, dtype=np.int64)
    load = np.zeros(L, dtype=np.int64)

    def extend(q: int):
        if q == R:
            states.append(NetworkState.from_counts(n, C, counts))
            keys.append(_state_key(counts, C))
            return
        a, b = int(leg1[q]), int(leg2[q])
        cap = C - int(load[a])
        if b >= 0:
            cap = min(cap, C - int(load[b]))
        for c in range(cap + 1):
            counts[q] = c
            load[a] += c
            if b >= 0:
                load[b] += c
            extend(q + 1)
            load[a] -= c
            if b >= 0:
                load[b] -= c
        counts[q] = 0

    extend(0)
    key_arr = np.asarray(keys, dtype=np.int64)
    order = np.argsort(key_arr, kind="stable")
    states = [states[i] for i in order]
    key_arr = key_arr[order]
    return StateIndex(
        params=params,
        states=states,
        keys=key_arr,
        key_to_index={int(k): i for i, k in enumerate(key_arr)},
    )


@dataclass
class TransitionMatrix:
    P: np.ndarray
    Q: np.ndarray
    params: ModelParams

    def validate(self) -> list[str]:
        problems = []
        rp = np.abs(self.P.sum(axis=1) - 1.0).max()
        if rp > RESIDUAL_TOL:
            problems.append(f"P row sums off by {rp}")
        if self.P.min() < -RESIDUAL_TOL:
            problems.append(f"negative P entry {self.P.min()}")
        rq = np.abs(self.Q.sum(axis=1)).max()
        if rq > RESIDUAL_TOL:
            problems.append(f"Q row sums off by {rq}")
        off = self.Q - np.diag(np.diag(self.Q))
        if off.min() < -RESIDUAL_TOL:
            problems.append(f"negative off-diagonal Q entry {off.min()}")
        return problems


def _arrival_targets(state: NetworkState, params: ModelParams, variant: str):
    """Yield (target_key_delta, weight) per routed arrival outcome and the
    total blocked weight, for one state. Weights sum to num_pairs."""
    n, C, d = params.n, params.C, params.d
    L = pair_count(n)
    router = route_fdar if variant == "fdar" else route_bdar
    pu, pv, _ = pair_arrays(n)
    tuple_weight = 1.0 / (n - 2) ** d
    blocked_weight = 0.0
    outcomes = []
    for p in range(L):
        u, v = int(pu[p]), int(pv[p])
        if state.link_load(u + 1, v + 1) < C:
            outcomes.append((p, 1.0))
            continue
        for ranks in itertools.product(range(n - 2), repeat=d):
            mids = tuple(intermediate_from_rank(u, v, r) + 1 for r in ranks)
            ev = ArrivalEvent(u + 1, v + 1, mids)
            dec = router(state, ev)
            if dec.kind == BLOCKED:
                blocked_weight += tuple_weight
            else:
                w0 = dec.intermediate - 1
                q = L + p * (n - 2) + intermediate_rank(u, v, w0)
                outcomes.append((q, tuple_weight))
    return outcomes, blocked_weight


def build_transition_matrix(
    params: ModelParams, index: StateIndex, variant: str = "bdar"
) -> TransitionMatrix:
    """Dense jump-chain matrix P and, independently, the continuous-time
    generator Q (arrivals at rate lambda per pair, unit per-call departure
    rates)."""
    n, C, lam = params.n, params.C, params.lam
    M = index.size
    L = pair_count(n)
    K = params.slot_count
    R = route_count(n)
    base = C + 1
    p_arr = params.p_arrival
    P = np.zeros((M, M))
    Q = np.zeros((M, M))
    powers = [base**q for q in range(R)]
    for i, state in enumerate(index.states):
        key = int(index.keys[i])
        counts = state.counts_vector()
        total = state.total_calls
        outcomes, blocked_w = _arrival_targets(state, params, variant)
        # jump chain: arrival with prob p_arr, pair uniform, tuple uniform
        P[i, i] += p_arr * blocked_w / L
        for q, w in outcomes:
            j = index.key_to_index[key + powers[q]]
            P[i, j] += p_arr * w / L
            Q[i, j] += lam * w
        # jump chain: departure slot uniform over K, noop on empty slots
        dep_p = (1.0 - p_arr) / K
        for q in np.flatnonzero(counts):
            j = index.key_to_index[key - powers[int(q)]]
            c = int(counts[q])
            P[i, j] += dep_p * c
            Q[i, j] += float(c)
        P[i, i] += dep_p * (K - total)
        Q[i, i] = -(lam * sum(w for _, w in outcomes) + total)
    return TransitionMatrix(P=P, Q=Q, params=params)


def stationary(P: np.ndarray, max_power_iters: int = 500000) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1; dense solve for small matrices, power
    iteration for large ones. Fails loudly if the residual stays above
    1e-12."""
    M = P.shape[0]
    if P.shape != (M, M):
        raise ValueError("P must be square")
    if M <= 10**4:
        A = P.T - np.eye(M)
        A[-1, :] = 1.0
        b = np.zeros(M)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
    else:
        pi = np.full(M, 1.0 / M)
        for _ in range(max_power_iters):
            nxt = pi @ P
            nxt /= nxt.sum()
            if np.abs(nxt - pi).sum() <= 1e-14:
                pi = nxt
                break
            pi = nxt
    residual = float(np.abs(pi @ P - pi).sum())
    if residual > RESIDUAL_TOL:
        raise OracleError(
            f"stationary solve failed: L1 residual {residual} above {RESIDUAL_TOL}"
        )
    return pi


@dataclass
class ExactExpectations:
    zeta: np.ndarray
    phi_tilde: float
    g_node: np.ndarray
    node: int

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta.tolist(),
            "phi_tilde": self.phi_tilde,
            "g_node": self.g_node.tolist(),
            "node": self.node,
        }


def node_zeta(pi: np.ndarray, index: StateIndex, v: int) -> np.ndarray:
    """E_pi f_{v,j} / (n-1) as an exact weighted sum."""
    from .stats import f_counts

    n, C = index.params.n, index.params.C
    acc = np.zeros(C + 1)
    for p, state in zip(pi, index.states):
        acc += p * f_counts(state, v)
    return acc / (n - 1)


def exact_expectations(
    pi: np.ndarray, index: StateIndex, v: int = 1
) -> ExactExpectations:
    from .stats import _phi_from_load_matrix, empirical_g

    params = index.params
    C = params.C
    zeta = node_zeta(pi, index, v)
    phi_acc = 0.0
    g_acc = np.zeros(C)
    for p, state in zip(pi, index.states):
        phi_acc += p * _phi_from_load_matrix(state.load_matrix(), C).phi_tilde
        g_acc += p * empirical_g(state, v, params)
    return ExactExpectations(zeta=zeta, phi_tilde=phi_acc, g_node=g_acc, node=v)


def balance_defect(
    P: np.ndarray, pi: np.ndarray, values: np.ndarray
) -> float:
    """|E_pi[(P h)(x) - h(x)]| for an arbitrary state functional h."""
    return float(abs(pi @ (P @ values - values)))


def fixed_point_identity_defect(
    pi: np.ndarray, index: StateIndex, v: int = 1
) -> float:
    """Worst-case defect of -lam*zeta(k) - (lam/(n-1)) E g_{v,k}
    + (k+1) zeta(k+1) over k, computed exactly from pi."""
    params = index.params
    lam, C, n = params.lam, params.C, params.n
    ex = exact_expectations(pi, index, v)
    worst = 0.0
    for k in range(C):
        r = abs(
            -lam * ex.zeta[k]
            - lam * ex.g_node[k] / (n - 1)
            + (k + 1) * ex.zeta[k + 1]
        )
        worst = max(worst, r)
    return worst


def q_matrix_check(
    params: ModelParams, index: StateIndex, variant: str = "bdar"
) -> float:
    """Max-norm defect of P - (Q/((lam+C) binom(n,2)) + I); the two matrices
    are assembled from separate laws so this is a real consistency check."""
    tm = build_transition_matrix(params, index, variant)
    scale = (params.lam + params.C) * pair_count(params.n)
    recon = tm.Q / scale + np.eye(index.size)
    diff = np.abs(tm.P - recon)
    defect = float(diff.max())
    if defect > RESIDUAL_TOL:
        i, j = np.unravel_index(int(diff.argmax()), diff.shape)
        raise OracleError(
            f"jump-chain / generator mismatch {defect} at entry ({i}, {j}): "
            f"P={tm.P[i, j]!r}, reconstructed={recon[i, j]!r}"
        )
    return defect


def empirical_visit_distribution(
    params: ModelParams, index: StateIndex, steps: int, rng=0
) -> np.ndarray:
    """State-visit frequencies of a kernel run, folded onto the index."""
    from .kernels import ChainKernel
    from .rng import Xoshiro256

    if isinstance(rng, Xoshiro256):
        seed_state = rng.get_state()
        ker = ChainKernel(params.n, params.C, params.d, params.lam)
        ker.set_rng_state(seed_state)
    else:
        ker = ChainKernel(params.n, params.C, params.d, params.lam, seed=int(rng))
    visits = np.zeros(index.key_space, dtype=np.int64)
    ker.run(steps, visits=visits)
    if isinstance(rng, Xoshiro256):
        rng.set_state(ker.rng_state())
    freq = visits[index.keys].astype(np.float64) / steps
    return freq


def permute_state(state: NetworkState, perm) -> NetworkState:
    """Relabel nodes by perm (perm[v-1] is the new 1-based name of node v)."""
    n, C = state.n, state.C
    if sorted(perm) != list(range(1, n + 1)):
        raise ValueError("perm must be a permutation of 1..n")
    out = NetworkState.empty(n, C)
    for kind_call in state.canonical_call_list():
        if kind_call[0] == "D":
            _, u, v = kind_call
            out.add_direct(perm[u - 1], perm[v - 1])
        else:
            _, u, v, w = kind_call
            out.add_indirect(perm[u - 1], perm[w - 1], perm[v - 1])
    return out


if __name__ == "__main__":
    p = ModelParams(n=3, C=1, d=1, lam=0.05)
    idx = enumerate_states(p)
    print(f"{idx.size} feasible states at n=3, C=1")
    tm = build_transition_matrix(p, idx)
    print("matrix problems:", tm.validate() or "none")
    pi = stationary(tm.P)
    print("defect:", q_matrix_check(p, idx))
    ex = exact_expectations(pi, idx)
    print("zeta:", ex.zeta, "E phi:", ex.phi_tilde)
    print("balance identity defect:", fixed_point_identity_defect(pi, idx))
