"""Observables on simulated trajectories.

Per-node load histograms f_{v,j}, the empirical indirect-routing rates
g_{v,j}, the uniformity functionals phi, ergodic averaging with batch-means
errors, and replica concentration experiments. Everything here reads states
or kernel counters; nothing mutates a chain except the experiment drivers,
which own their kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import ModelParams, NetworkState, pair_arrays, pair_count
from .jumpchain import RunTally
from .kernels import ChainKernel
from .rng import Xoshiro256, spawn_seeds

BATCH_COUNT = 30


def _load_matrix_from_loads(n: int, loads: np.ndarray) -> np.ndarray:
    pu, pv, _ = pair_arrays(n)
    m = np.full((n, n), -1, dtype=np.int64)
    m[pu, pv] = loads
    m[pv, pu] = loads
    return m


def f_counts(state: NetworkState, v: int) -> np.ndarray:
    """Histogram over loads of the n-1 links incident to node v (1-based)."""
    if not 1 <= v <= state.n:
        raise ValueError(f"node {v} out of range 1..{state.n}")
    row = state.load_matrix()[v - 1]
    out = np.empty(state.C + 1, dtype=np.int64)
    for j in range(state.C + 1):
        out[j] = int((row == j).sum())
    return out


def f_matrix(state: NetworkState) -> np.ndarray:
    """All per-node histograms at once, shape (n, C+1)."""
    m = state.load_matrix()
    return np.stack([(m == j).sum(axis=1) for j in range(state.C + 1)], axis=1)


class PhiValues(NamedTuple):
    phi1: float
    phi2: float
    phi_tilde: float


def _phi_from_load_matrix(m: np.ndarray, C: int) -> PhiValues:
    """phi on a symmetric load matrix with -1 on the diagonal; needs n >= 3."""
    n = m.shape[0]
    nm2 = n - 2
    ind = np.stack([(m == j).astype(np.float64) for j in range(C + 1)])
    fmat = ind.sum(axis=2)  # fmat[j, u] = f_{u,j}
    phi2 = float(max((fmat[j].max() - fmat[j].min()) for j in range(C + 1))) / nm2
    off = ~np.eye(n, dtype=bool)
    phi1 = 0.0
    for j in range(C + 1):
        sj = fmat[j][:, None] - ind[j]  # sums over w not in {u, v}
        for k in range(C + 1):
            cross = ind[j] @ ind[k]
            sk = fmat[k][None, :] - ind[k]
            val = cross / nm2 - (sj * sk) / (nm2 * nm2)
            worst = float(np.abs(val[off]).max())
            if worst > phi1:
                phi1 = worst
    return PhiValues(phi1, phi2, max(phi1, phi2))


def phi_functionals(state: NetworkState) -> PhiValues:
    """Max deviation from product structure (phi1) and from per-node
    histogram equality (phi2), plus their max. Defined for n >= 4."""
    if state.n < 4:
        raise ValueError(f"phi functionals need n >= 4, got n={state.n}")
    return _phi_from_load_matrix(state.load_matrix(), state.C)


def _rank_sum(p_at: int, p_below: int, d: int) -> int:
    """sum_{r=1}^{d} p_at^(r-1) * p_below^(d-r)."""
    acc = 0
    for r in range(1, d + 1):
        acc += p_at ** (r - 1) * p_below ** (d - r)
    return acc


def _empirical_g_direct(state: NetworkState, v: int, params: ModelParams):
    """Literal d=1 case: one intermediate per arrival, no blocking products."""
    n, C = state.n, state.C
    m = state.load_matrix()
    iv = v - 1
    tot = [0] * C
    for u in range(n):
        if u == iv or m[iv, u] != C:
            continue
        for w in range(n):
            if w == u or w == iv:
                continue
            j = int(m[iv, w])
            if j < C and int(m[u, w]) < C:
                tot[j] += 1
    for u in range(n):
        if u == iv:
            continue
        j0 = int(m[iv, u])
        if j0 >= C:
            continue
        for vp in range(n):
            if vp == u or vp == iv:
                continue
            if m[u, vp] == C and int(m[iv, vp]) < C:
                tot[j0] += 1
    return tot


def _empirical_g_profile(state: NetworkState, v: int, params: ModelParams):
    """General d via per-node load-profile counting.

    For each candidate arrival the d-tuple expectation factorizes: the rank-r
    term contributes (count of admissible intermediates) times
    (non-blocking count at the route level)^(r-1) times
    (non-blocking count one level down)^(d-r).
    """
    n, C, d = state.n, state.C, params.d
    m = state.load_matrix()
    iv = v - 1
    nm2 = n - 2
    tot = [0] * C
    # arrivals with v an endpoint: counted link is (v, w_r)
    bv = m[iv]
    for u in range(n):
        if u == iv or m[iv, u] != C:
            continue
        mask = np.ones(n, dtype=bool)
        mask[iv] = False
        mask[u] = False
        a = m[u][mask]
        b = bv[mask]
        blocked = [int(((a <= l) & (b <= l)).sum()) for l in range(C)]
        p = [nm2 - x for x in blocked]
        rsum = [
            _rank_sum(p[l], nm2 if l == 0 else p[l - 1], d) for l in range(C)
        ]
        for j in range(C):
            n_at = int(((b == j) & (a <= j)).sum())
            if n_at:
                tot[j] += n_at * rsum[j]
            for i in range(j + 1, C):
                n_hi = int(((b == j) & (a == i)).sum())
                if n_hi:
                    tot[j] += n_hi * rsum[i]
    # arrivals with v an intermediate: counted link is (u, v), call on (u, vp)
    for u in range(n):
        if u == iv:
            continue
        j0 = int(m[iv, u])
        if j0 >= C:
            continue
        for vp in range(n):
            if vp == u or vp == iv or m[u, vp] != C:
                continue
            o = int(m[iv, vp])
            if o >= C:
                continue
            level = j0 if o <= j0 else o
            mask = np.ones(n, dtype=bool)
            mask[u] = False
            mask[vp] = False
            a = m[u][mask]
            b = m[vp][mask]
            p_at = nm2 - int(((a <= level) & (b <= level)).sum())
            if level == 0:
                p_below = nm2
            else:
                p_below = nm2 - int(((a <= level - 1) & (b <= level - 1)).sum())
            tot[j0] += _rank_sum(p_at, p_below, d)
    return tot


def empirical_g(state: NetworkState, v: int, params: ModelParams) -> np.ndarray:
    """Expected number of links incident to v at each load j < C that would
    receive an indirectly routed call, summed over all possible arrivals and
    averaged over the intermediate tuple draw."""
    if state.n < 3:
        raise ValueError("empirical g needs n >= 3")
    if not 1 <= v <= state.n:
        raise ValueError(f"node {v} out of range 1..{state.n}")
    if (params.n, params.C) != (state.n, state.C):
        raise ValueError("params do not match the state's n, C")
    if params.d == 1:
        tot = _empirical_g_direct(state, v, params)
    else:
        tot = _empirical_g_profile(state, v, params)
    denom = (state.n - 2) ** params.d
    return np.asarray([t / denom for t in tot], dtype=np.float64)


@dataclass
class StatSnapshot:
    step: int
    f: np.ndarray
    phi1: float
    phi2: float
    phi_tilde: float
    in_R: bool
    N: int
    blocked_so_far: int


def make_snapshot(
    state: NetworkState, params: ModelParams, step: int, blocked_so_far: int = 0
) -> StatSnapshot:
    from .coupling import in_R as _in_R

    m = state.load_matrix()
    fm = np.stack([(m == j).sum(axis=1) for j in range(state.C + 1)], axis=1)
    if state.n >= 3:
        phi = _phi_from_load_matrix(m, state.C)
    else:
        phi = PhiValues(0.0, 0.0, 0.0)
    return StatSnapshot(
        step=step,
        f=fm,
        phi1=phi.phi1,
        phi2=phi.phi2,
        phi_tilde=phi.phi_tilde,
        in_R=_in_R(state, params),
        N=state.total_calls,
        blocked_so_far=blocked_so_far,
    )


def default_burn_in(params: ModelParams) -> int:
    """Larger of the high-rate burn-in step count and 20 continuous
    time units; the former dominates for large lambda, the latter keeps
    low-rate runs honest."""
    return max(params.burn_in_steps, params.steps_for_time(20.0))


def default_thinning(params: ModelParams) -> int:
    return params.num_pairs


@dataclass
class EquilibriumEstimate:
    params: ModelParams
    zeta_hat: np.ndarray
    zeta_stderr: np.ndarray
    samples: int
    burn_in_steps: int
    thinning: int
    total_steps: int
    batch_means: np.ndarray = field(repr=False)
    arrivals: int = 0
    blocked: int = 0
    phi_series: Optional[np.ndarray] = field(default=None, repr=False)
    g_node_mean: Optional[np.ndarray] = None

    @property
    def blocking(self) -> Optional[float]:
        if self.arrivals == 0:
            return None
        return self.blocked / self.arrivals

    @property
    def phi_mean(self) -> Optional[float]:
        if self.phi_series is None or self.phi_series.size == 0:
            return None
        return float(self.phi_series.mean())

    def to_dict(self) -> dict:
        out = {
            "params": self.params.to_dict(),
            "zeta_hat": self.zeta_hat.tolist(),
            "zeta_stderr": self.zeta_stderr.tolist(),
            "samples": self.samples,
            "burn_in_steps": self.burn_in_steps,
            "thinning": self.thinning,
            "total_steps": self.total_steps,
            "arrivals": self.arrivals,
            "blocked": self.blocked,
            "blocking": self.blocking,
        }
        if self.phi_series is not None:
            out["phi_mean"] = self.phi_mean
            out["phi_median"] = float(np.median(self.phi_series))
        if self.g_node_mean is not None:
            out["g_node_mean"] = self.g_node_mean.tolist()
        return out


def _as_xoshiro(rng) -> Xoshiro256:
    if isinstance(rng, Xoshiro256):
        return rng
    return Xoshiro256(int(rng))


def equilibrium_average(
    params: ModelParams,
    total_steps: int,
    burn_in_steps: Optional[int] = None,
    thinning: Optional[int] = None,
    rng=0,
    variant: str = "bdar",
    collect_phi: bool = False,
    collect_g_node: Optional[int] = None,
) -> EquilibriumEstimate:
    """Ergodic average of the load-proportion vector over a single chain.

    Snapshots are taken every `thinning` steps after `burn_in_steps`; the
    estimate averages f_{v,j}/(n-1) over all nodes and snapshots, which
    equals the fraction of links at each load. Standard errors come from
    30 batch means over the snapshot sequence.
    """
    if burn_in_steps is None:
        burn_in_steps = default_burn_in(params)
    if thinning is None:
        thinning = default_thinning(params)
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    if not 0 <= burn_in_steps < total_steps:
        raise ValueError(
            f"need 0 <= burn_in_steps < total_steps, got {burn_in_steps}, {total_steps}"
        )
    rng = _as_xoshiro(rng)
    ker = ChainKernel(
        params.n, params.C, params.d, params.lam, fdar=1 if variant == "fdar" else 0
    )
    ker.set_rng_state(rng.get_state())
    ker.run(burn_in_steps)
    nsnap = (total_steps - burn_in_steps) // thinning
    if nsnap < 1:
        raise ValueError("no snapshots: total_steps - burn_in_steps < thinning")
    L = params.num_pairs
    rows = np.empty((nsnap, params.C + 1))
    phis = np.empty(nsnap) if collect_phi else None
    gacc = np.zeros(params.C) if collect_g_node is not None else None
    arr0, blk0 = ker.arrivals, ker.blocked
    for i in range(nsnap):
        ker.run(thinning)
        rows[i] = ker.linkcount_array() / L
        if collect_phi:
            m = _load_matrix_from_loads(params.n, ker.loads_array())
            phis[i] = _phi_from_load_matrix(m, params.C).phi_tilde
        if gacc is not None:
            st = NetworkState.from_counts(params.n, params.C, ker.counts_array())
            gacc += empirical_g(st, collect_g_node, params)
    rng.set_state(ker.rng_state())
    nb = min(BATCH_COUNT, nsnap)
    bsize = nsnap // nb
    used = nb * bsize
    batch_means = rows[:used].reshape(nb, bsize, -1).mean(axis=1)
    zeta_hat = rows.mean(axis=0)
    if nb >= 2:
        zeta_stderr = batch_means.std(axis=0, ddof=1) / math.sqrt(nb)
    else:
        zeta_stderr = np.full(params.C + 1, np.nan)
    return EquilibriumEstimate(
        params=params,
        zeta_hat=zeta_hat,
        zeta_stderr=zeta_stderr,
        samples=nsnap,
        burn_in_steps=burn_in_steps,
        thinning=thinning,
        total_steps=burn_in_steps + nsnap * thinning,
        batch_means=batch_means,
        arrivals=ker.arrivals - arr0,
        blocked=ker.blocked - blk0,
        phi_series=phis,
        g_node_mean=(gacc / nsnap) if gacc is not None else None,
    )


@dataclass
class HighLoadAudit:
    params: ModelParams
    burn_in_steps: int
    window_steps: int
    r_fraction: float
    blocking: Optional[float]
    zeta_hat: np.ndarray


def high_load_audit(
    params: ModelParams, rng=0, window_factor: int = 10
) -> HighLoadAudit:
    """Burn the chain in for the prescribed number of steps, then measure
    restricted-set occupancy, blocking, and the load profile over the next
    window_factor * burn_in steps."""
    rng = _as_xoshiro(rng)
    ker = ChainKernel(params.n, params.C, params.d, params.lam)
    ker.set_rng_state(rng.get_state())
    s = params.burn_in_steps
    ker.run(s)
    window = window_factor * s
    zacc = np.zeros(params.C + 1, dtype=np.int64)
    arr0, blk0 = ker.arrivals, ker.blocked
    hits = ker.run(window, track_R=True, zeta=zacc)
    rng.set_state(ker.rng_state())
    arrivals = ker.arrivals - arr0
    blocked = ker.blocked - blk0
    return HighLoadAudit(
        params=params,
        burn_in_steps=s,
        window_steps=window,
        r_fraction=hits / window,
        blocking=(blocked / arrivals) if arrivals else None,
        zeta_hat=zacc / (window * params.num_pairs),
    )


@dataclass
class ConcentrationResult:
    params: ModelParams
    v: int
    j: int
    t_eval: float
    replicas: int
    samples: np.ndarray = field(repr=False)
    mean: float = 0.0
    variance: float = 0.0
    tail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "v": self.v,
            "j": self.j,
            "t_eval": self.t_eval,
            "replicas": self.replicas,
            "mean": self.mean,
            "variance": self.variance,
            "tail": {str(k): v for k, v in self.tail.items()},
        }


TAIL_MULTIPLIERS = (1.0, 2.0, 4.0)


def concentration_experiment(
    params: ModelParams,
    replicas: int,
    t_eval: float,
    rng=0,
    v: int = 1,
    j: int = 0,
) -> ConcentrationResult:
    """Distribution of f_{v,j} at time t_eval across independent replicas.

    Reports the empirical mean, variance, and tail fractions
    P(|f - mean| > m*sqrt(n)) for m in 1, 2, 4.
    """
    if replicas < 100:
        raise ValueError("concentration experiment needs replicas >= 100")
    if not 1 <= v <= params.n:
        raise ValueError(f"node {v} out of range 1..{params.n}")
    if not 0 <= j <= params.C:
        raise ValueError(f"load {j} out of range 0..{params.C}")
    master = rng if isinstance(rng, int) else _as_xoshiro(rng).next_u64()
    seeds = spawn_seeds(master, replicas)
    steps = params.steps_for_time(t_eval)
    pu, pv, _ = pair_arrays(params.n)
    incident = np.flatnonzero((pu == v - 1) | (pv == v - 1))
    samples = np.empty(replicas, dtype=np.int64)
    for i, s in enumerate(seeds):
        ker = ChainKernel(params.n, params.C, params.d, params.lam, seed=int(s))
        ker.run(steps)
        samples[i] = int((ker.loads_array()[incident] == j).sum())
    return concentration_from_samples(params, v, j, t_eval, samples)


def concentration_from_samples(
    params: ModelParams, v: int, j: int, t_eval: float, samples: np.ndarray
) -> ConcentrationResult:
    """Summarize replica samples of f_{v,j}: mean, variance, and the
    fraction beyond 1, 2, and 4 times sqrt(n) from the mean."""
    samples = np.asarray(samples, dtype=np.int64)
    mean = float(samples.mean())
    variance = float(samples.var(ddof=1))
    root = math.sqrt(params.n)
    tail = {
        m: float((np.abs(samples - mean) > m * root).mean())
        for m in TAIL_MULTIPLIERS
    }
    return ConcentrationResult(
        params=params,
        v=v,
        j=j,
        t_eval=t_eval,
        replicas=int(samples.size),
        samples=samples,
        mean=mean,
        variance=variance,
        tail=tail,
    )


def blocking_rate(tally: RunTally) -> Optional[float]:
    """Fraction of arrivals that found no feasible route; None with no data."""
    if tally.arrivals == 0:
        return None
    return tally.blocked / tally.arrivals


if __name__ == "__main__":
    p = ModelParams(n=20, C=1, d=1, lam=0.05)
    est = equilibrium_average(p, total_steps=400000, rng=11, collect_phi=True)
    print("zeta_hat:", np.array2string(est.zeta_hat, precision=4))
    print("stderr:  ", np.array2string(est.zeta_stderr, precision=1))
    print("phi_mean:", est.phi_mean, "blocking:", est.blocking)
