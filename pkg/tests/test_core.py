import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdarsim.core import (
    ModelParams,
    NetworkState,
    REGIME_HIGH,
    REGIME_LOW,
    REGIME_UNSUPPORTED,
    intermediate_from_rank,
    intermediate_rank,
    loads_from_counts,
    pair_arrays,
    pair_count,
    pair_index,
    route_count,
)

from oracles import random_feasible_state


def test_pair_index_lexicographic():
    n = 5
    expected = 0
    for u in range(n - 1):
        for v in range(u + 1, n):
            assert pair_index(n, u, v) == expected
            expected += 1
    assert expected == pair_count(n)


def test_pair_arrays_match_pair_index():
    pu, pv, pmat = pair_arrays(6)
    for p in range(pair_count(6)):
        u, v = int(pu[p]), int(pv[p])
        assert pair_index(6, u, v) == p
        assert pmat[u, v] == p and pmat[v, u] == p


def test_intermediate_rank_roundtrip():
    n = 7
    for u in range(n - 1):
        for v in range(u + 1, n):
            ws = [w for w in range(n) if w not in (u, v)]
            ranks = [intermediate_rank(u, v, w) for w in ws]
            assert ranks == list(range(n - 2))
            for r, w in zip(ranks, ws):
                assert intermediate_from_rank(u, v, r) == w


def test_route_count():
    assert route_count(3) == 3 + 3 * 1
    assert route_count(10) == 45 + 45 * 8


def test_link_load_indirect_example():
    # One indirect call between nodes 1 and 2 via 3 loads both legs, not
    # the direct link.
    s = NetworkState.empty(3, 1)
    s.add_indirect(1, 3, 2)
    assert s.link_load(1, 3) == 1
    assert s.link_load(3, 2) == 1
    assert s.link_load(1, 2) == 0
    assert s.total_calls == 1


def test_link_load_symmetry():
    s = NetworkState.empty(5, 2)
    s.add_direct(2, 4)
    assert s.link_load(2, 4) == s.link_load(4, 2) == 1


def test_canonical_call_list_example():
    s = NetworkState.empty(3, 1)
    s.add_indirect(1, 2, 3)
    s.add_direct(1, 2)
    assert s.canonical_call_list() == [("D", 1, 2), ("I", 1, 3, 2)]


def test_canonical_call_list_ordering_and_repeats():
    s = NetworkState.empty(4, 3)
    s.add_direct(3, 4, count=2)
    s.add_direct(1, 2)
    s.add_indirect(2, 1, 4)
    s.add_indirect(1, 4, 3)
    calls = s.canonical_call_list()
    assert calls == [
        ("D", 1, 2),
        ("D", 3, 4),
        ("D", 3, 4),
        ("I", 1, 3, 4),
        ("I", 2, 4, 1),
    ]


def test_validate_clean_state_empty_list():
    s = NetworkState.empty(4, 2)
    s.add_indirect(1, 2, 3)
    assert s.validate() == []


def test_validate_reports_overload():
    s = NetworkState.empty(3, 1)
    s.add_direct(1, 2)
    # Second call on the same link pushes the load past capacity.
    s.add_direct(1, 2)
    problems = s.validate()
    assert problems and any("load" in p or "capacity" in p for p in problems)


def test_add_direct_rejects_bad_nodes():
    s = NetworkState.empty(4, 1)
    with pytest.raises(ValueError):
        s.add_direct(1, 1)
    with pytest.raises(ValueError):
        s.add_direct(0, 2)
    with pytest.raises(ValueError):
        s.add_indirect(1, 5, 2)


def test_counts_vector_roundtrip():
    rng = random.Random(11)
    s = random_feasible_state(6, 2, rng)
    t = NetworkState.from_counts(6, 2, s.counts_vector())
    assert t == s
    assert np.array_equal(t.loads(), s.loads())


def test_loads_from_counts_matches_state():
    rng = random.Random(3)
    s = random_feasible_state(5, 3, rng)
    assert np.array_equal(loads_from_counts(5, s.counts_vector()), s.loads())


def test_load_matrix_symmetric_sentinel_diagonal():
    rng = random.Random(4)
    s = random_feasible_state(6, 2, rng)
    m = s.load_matrix()
    assert np.array_equal(m, m.T)
    # Self links do not exist; the diagonal carries a -1 sentinel.
    assert np.all(np.diag(m) == -1)
    assert m[0, 2] == s.link_load(1, 3)


def test_json_schema_example():
    s = NetworkState.empty(3, 1)
    s.add_indirect(1, 3, 2)
    data = s.to_dict()
    assert set(data) == {"n", "C", "direct", "indirect"}
    assert data["n"] == 3 and data["C"] == 1
    assert data["direct"] == []
    assert data["indirect"] == [[1, 2, 3, 1]]
    again = NetworkState.from_dict(json.loads(json.dumps(data)))
    assert again == s


def test_json_roundtrip_random():
    rng = random.Random(8)
    for _ in range(10):
        s = random_feasible_state(rng.choice([3, 5, 7]), rng.choice([1, 2]), rng)
        assert NetworkState.from_json(s.to_json()) == s


def test_from_dict_validates():
    bad = {"n": 3, "C": 1, "direct": [[1, 2, 1], [1, 2, 1]], "indirect": []}
    with pytest.raises(ValueError):
        NetworkState.from_dict(bad)
    with pytest.raises(ValueError):
        NetworkState.from_dict({"n": 3, "C": 1, "direct": [[1, 1, 1]], "indirect": []})


def test_fully_loaded():
    s = NetworkState.fully_loaded(4, 2)
    assert s.total_calls == 2 * pair_count(4)
    assert all(
        s.link_load(u, v) == 2 for u in range(1, 4) for v in range(u + 1, 5)
    )
    assert s.validate() == []


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(n=2, C=1, d=1, lam=0.1)
    with pytest.raises(ValueError):
        ModelParams(n=10, C=0, d=1, lam=0.1)
    with pytest.raises(ValueError):
        ModelParams(n=10, C=1, d=0, lam=0.1)
    with pytest.raises(ValueError):
        ModelParams(n=10, C=1, d=1, lam=0.0)
    with pytest.raises(ValueError):
        ModelParams(n=10, C=1, d=1, lam=float("nan"))


def test_model_params_thresholds():
    p = ModelParams(n=10, C=1, d=1, lam=0.05)
    assert p.lambda0 == pytest.approx(1.0 / 12.0, abs=0)
    assert p.lambda1 == pytest.approx(43845.11, abs=0.01)
    assert p.lambda1 == pytest.approx(8000.0 * math.log(240.0), rel=1e-15)
    p2 = ModelParams(n=10, C=2, d=3, lam=0.05)
    assert p2.lambda0 == pytest.approx(1.0 / 28.0)
    assert p2.lambda1 == pytest.approx(8000 * 4 * 3 * math.log(240 * 4 * 3), rel=1e-15)


def test_regimes():
    assert ModelParams(n=5, C=1, d=1, lam=0.08).regime == REGIME_LOW
    assert ModelParams(n=5, C=1, d=1, lam=1.0 / 12.0).regime == REGIME_UNSUPPORTED
    assert ModelParams(n=5, C=1, d=1, lam=50000.0).regime == REGIME_HIGH
    lam1 = ModelParams(n=5, C=1, d=1, lam=1.0).lambda1
    assert ModelParams(n=5, C=1, d=1, lam=lam1).regime == REGIME_HIGH


def test_burn_in_formula():
    p_lam = ModelParams(n=3, C=1, d=1, lam=1.0).lambda1
    p = ModelParams(n=61, C=1, d=1, lam=p_lam)
    want = 3.0 * (61 * 60 // 2) * 1 * (p_lam + 1) / p_lam * math.log(240.0)
    assert p.s_burn_in == pytest.approx(want, rel=1e-15)
    assert p.burn_in_steps == math.ceil(p.s_burn_in)


def test_steps_for_time_examples():
    assert ModelParams(n=10, C=1, d=1, lam=1.0).steps_for_time(1.0) == 90
    assert ModelParams(n=100, C=1, d=1, lam=0.05).steps_for_time(2.0) == 10395
    with pytest.raises(ValueError):
        ModelParams(n=10, C=1, d=1, lam=1.0).steps_for_time(-1.0)


def test_p_arrival_and_slot_count():
    p = ModelParams(n=10, C=1, d=1, lam=1.0)
    assert p.p_arrival == 0.5
    assert ModelParams(n=10, C=1, d=1, lam=3.0).p_arrival == 0.75
    assert p.slot_count == 45
    assert ModelParams(n=4, C=3, d=1, lam=1.0).slot_count == 18


def test_params_dict_roundtrip():
    p = ModelParams(n=12, C=2, d=2, lam=0.03)
    d = p.to_dict()
    assert d == {"n": 12, "C": 2, "d": 2, "lambda": 0.03}
    assert ModelParams.from_dict(d) == p


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=3, max_value=9), st.integers(min_value=1, max_value=3),
       st.integers(min_value=0, max_value=10**6))
def test_state_equality_and_hash_props(n, C, seed):
    rng = random.Random(seed)
    s = random_feasible_state(n, C, rng)
    t = s.copy()
    assert s == t and hash(s) == hash(t)
    # Mutating the copy must not touch the original.
    free = [
        (u, v)
        for u in range(1, n + 1)
        for v in range(u + 1, n + 1)
        if s.link_load(u, v) < C
    ]
    if free:
        u, v = free[0]
        t.add_direct(u, v)
        assert s != t
        assert s.link_load(u, v) + 1 == t.link_load(u, v)


if __name__ == "__main__":
    s = NetworkState.empty(3, 1)
    s.add_indirect(1, 3, 2)
    print(s.to_json(indent=2))
