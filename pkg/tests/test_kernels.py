import random

import numpy as np
import pytest

from bdarsim.core import ModelParams, NetworkState, pair_count, route_count
from bdarsim.coupling import CoupledPair, coupled_step
from bdarsim.jumpchain import VARIANT_FDAR, simulate
from bdarsim.kernels import COMPILED, ChainKernel, CoupledKernel
from bdarsim.kernels import _pykernels
from bdarsim.rng import Xoshiro256

from oracles import random_feasible_state

try:
    from bdarsim.kernels import _ckernels
except ImportError:
    _ckernels = None


def _chain_signature(kernel):
    return (
        tuple(kernel.rng_state()),
        kernel.counts_array().tolist(),
        kernel.loads_array().tolist(),
        kernel.linkcount_array().tolist(),
        kernel.arrivals,
        kernel.blocked,
        kernel.steps,
        bool(kernel.in_R),
    )


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_chain_lanes_bit_identical():
    rng = random.Random(17)
    for n, C, d, lam in [(6, 1, 1, 0.3), (9, 2, 2, 0.8), (5, 3, 2, 2.5)]:
        start = random_feasible_state(n, C, rng).counts_vector()
        a = _pykernels.ChainKernel(n, C, d, lam, seed=1234, counts=start)
        b = _ckernels.ChainKernel(n, C, d, lam, seed=1234, counts=start)
        for chunk in (1, 7, 500, 2500):
            ra = a.run(chunk, track_R=True)
            rb = b.run(chunk, track_R=True)
            assert ra == rb
            assert _chain_signature(a) == _chain_signature(b)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_coupled_lanes_bit_identical():
    rng = random.Random(23)
    for n, C, d, lam in [(6, 1, 1, 0.3), (8, 2, 2, 0.9)]:
        cx = random_feasible_state(n, C, rng).counts_vector()
        cy = random_feasible_state(n, C, rng).counts_vector()
        a = _pykernels.CoupledKernel(n, C, d, lam, seed=77, counts_x=cx, counts_y=cy)
        b = _ckernels.CoupledKernel(n, C, d, lam, seed=77, counts_x=cx, counts_y=cy)
        for chunk in (1, 9, 800):
            a.run(chunk)
            b.run(chunk)
            assert tuple(a.rng_state()) == tuple(b.rng_state())
            assert a.counts_x_array().tolist() == b.counts_x_array().tolist()
            assert a.counts_y_array().tolist() == b.counts_y_array().tolist()
            assert a.l1 == b.l1
            assert (a.blocked_x, a.blocked_y) == (b.blocked_x, b.blocked_y)


def test_chain_kernel_matches_reference_trajectory():
    # The kernel replays exactly the jump chain the reference runner walks.
    for variant, fdar in (("bdar", 0), ("fdar", 1)):
        params = ModelParams(n=7, C=2, d=2, lam=0.7)
        steps = 3000
        ref_state, ref_tally = simulate(
            params, steps, Xoshiro256(55), variant=variant
        )
        ker = ChainKernel(7, 2, 2, 0.7, fdar=fdar, seed=55)
        ker.run(steps)
        assert ker.counts_array().tolist() == ref_state.counts_vector().tolist()
        assert ker.arrivals == ref_tally.arrivals
        assert ker.blocked == ref_tally.blocked
        assert ker.noop_departures == ref_tally.noop_departures


def test_chain_kernel_from_nonempty_start():
    rng = random.Random(2)
    s0 = random_feasible_state(8, 2, rng)
    params = ModelParams(n=8, C=2, d=1, lam=0.5)
    ref_state, _ = simulate(params, 1500, Xoshiro256(91), state=s0)
    ker = ChainKernel(8, 2, 1, 0.5, seed=91, counts=s0.counts_vector())
    ker.run(1500)
    assert ker.counts_array().tolist() == ref_state.counts_vector().tolist()


def test_chain_kernel_linkcount_consistency():
    ker = ChainKernel(9, 2, 2, 0.9, seed=8)
    ker.run(4000)
    loads = ker.loads_array()
    expect = [int((loads == j).sum()) for j in range(3)]
    assert ker.linkcount_array().tolist() == expect
    state = NetworkState.from_counts(9, 2, ker.counts_array())
    assert state.validate() == []


def test_chain_kernel_visits_and_zeta():
    n, C = 3, 1
    params = ModelParams(n=n, C=C, d=1, lam=0.5)
    steps = 2000
    key_space = (C + 1) ** route_count(n)
    visits = np.zeros(key_space, dtype=np.int64)
    zeta = np.zeros(C + 1, dtype=np.int64)
    ker = ChainKernel(n, C, 1, 0.5, seed=10)
    in_r_steps = ker.run(steps, visits=visits, track_R=True, zeta=zeta)
    assert visits.sum() == steps
    assert zeta.sum() == steps * pair_count(n)
    assert 0 <= in_r_steps <= steps
    # Replaying the same run and accumulating by hand gives the same totals.
    ker2 = ChainKernel(n, C, 1, 0.5, seed=10)
    z2 = np.zeros(C + 1, dtype=np.int64)
    for _ in range(steps):
        ker2.run(1)
        z2 += ker2.linkcount_array()
    assert z2.tolist() == zeta.tolist()


def test_chain_kernel_in_r_tracking():
    # n=61 at C=1, d=1: a state is in the good region iff every node has at
    # most one non-full incident link.
    ker = ChainKernel(61, 1, 1, 43846.0, seed=1)
    assert not ker.in_R  # empty state: every node has 60 non-full links
    full = NetworkState.fully_loaded(61, 1).counts_vector()
    ker2 = ChainKernel(61, 1, 1, 43846.0, seed=1, counts=full)
    assert ker2.in_R


def test_coupled_kernel_matches_reference_coupled_step():
    rng = random.Random(44)
    for variant in ("bdar", "fdar"):
        x = random_feasible_state(6, 1, rng)
        y = random_feasible_state(6, 1, rng)
        params = ModelParams(n=6, C=1, d=2, lam=0.4)
        pair = CoupledPair.from_states(x, y)
        ext = Xoshiro256(500)
        ker = CoupledKernel(
            6, 1, 2, 0.4,
            fdar=1 if variant == "fdar" else 0,
            counts_x=x.counts_vector(),
            counts_y=y.counts_vector(),
        )
        ker.set_rng_state(ext.get_state())
        for _ in range(400):
            pair = coupled_step(pair, params, ext, variant=variant)
            ker.run(1)
            assert ker.counts_x_array().tolist() == pair.x.counts_vector().tolist()
            assert ker.counts_y_array().tolist() == pair.y.counts_vector().tolist()
            assert ker.l1 == pair.l1
            assert tuple(ker.rng_state()) == ext.get_state()


def test_coupled_identical_margins_match_solo_chain():
    # When both chains start equal the coupling degenerates to one chain,
    # and it must consume randomness exactly like the solo kernel.
    rng = random.Random(13)
    s0 = random_feasible_state(8, 1, rng)
    solo = ChainKernel(8, 1, 1, 0.3, seed=66, counts=s0.counts_vector())
    both = CoupledKernel(
        8, 1, 1, 0.3, seed=66,
        counts_x=s0.counts_vector(), counts_y=s0.counts_vector(),
    )
    solo.run(3000)
    both.run(3000)
    assert both.l1 == 0
    assert both.counts_x_array().tolist() == solo.counts_array().tolist()
    assert both.counts_y_array().tolist() == solo.counts_array().tolist()
    assert tuple(both.rng_state()) == tuple(solo.rng_state())


def test_coupled_l1_never_increases_by_more_than_two():
    # One shared event moves each chain by at most one call.
    rng = random.Random(71)
    x = random_feasible_state(7, 1, rng)
    y = random_feasible_state(7, 1, rng)
    ker = CoupledKernel(
        7, 1, 1, 0.6, seed=3,
        counts_x=x.counts_vector(), counts_y=y.counts_vector(),
    )
    prev = ker.l1
    for _ in range(2000):
        ker.run(1)
        assert abs(ker.l1 - prev) <= 2
        prev = ker.l1


def test_coupled_reset_reproduces_run():
    ker = CoupledKernel(6, 1, 1, 0.5, seed=21)
    full = NetworkState.fully_loaded(6, 1).counts_vector()
    empty = NetworkState.empty(6, 1).counts_vector()
    ker.reset(full, empty, reseed=21)
    t1 = ker.run_until_coalesced(50000)
    ker.reset(full, empty, reseed=21)
    t2 = ker.run_until_coalesced(50000)
    assert t1 == t2 and t1 > 0


def test_run_until_coalesced_zero_when_equal():
    ker = CoupledKernel(5, 1, 1, 0.5, seed=2)
    assert ker.run_until_coalesced(10) == 0


def test_compiled_flag_is_bool():
    assert isinstance(COMPILED, bool)


if __name__ == "__main__":
    ker = ChainKernel(20, 1, 1, 0.05, seed=0)
    ker.run(100000)
    print("blocked fraction:", ker.blocked / max(ker.arrivals, 1))
