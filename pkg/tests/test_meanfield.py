import numpy as np
import pytest

from bdarsim.core import ModelParams
from bdarsim.meanfield import (
    F,
    H,
    IntegrationError,
    barycenter,
    default_starts,
    fixed_point,
    fixed_point_residual,
    g,
    g_h_form,
    g_lipschitz_probe,
    ode_integrate,
    random_simplex,
    simplex_vertex,
    validate_simplex,
)

from oracles import scalar_fixed_point_c1


P11 = ModelParams(n=50, C=1, d=1, lam=1.0 / 12.0)


def test_simplex_helpers():
    assert barycenter(2).tolist() == [1 / 3, 1 / 3, 1 / 3]
    assert simplex_vertex(2, 1).tolist() == [0.0, 1.0, 0.0]
    pts = random_simplex(3, 20, np.random.default_rng(0))
    assert pts.shape == (20, 4)
    assert np.all(pts >= 0)
    assert np.allclose(pts.sum(axis=1), 1.0)


def test_validate_simplex_errors():
    with pytest.raises(ValueError):
        validate_simplex([0.5, 0.6])
    with pytest.raises(ValueError):
        validate_simplex([-0.2, 1.2])
    with pytest.raises(ValueError):
        validate_simplex([1.0])
    with pytest.raises(ValueError):
        validate_simplex([0.5, 0.5], C=2)
    got = validate_simplex([0.25, 0.75])
    assert got.tolist() == [0.25, 0.75]


def test_h_frozen_values():
    assert H(1.0, 0.0, 2) == pytest.approx(1.0, abs=1e-15)
    assert H(1.0, 0.0, 1) == pytest.approx(1.0, abs=1e-15)
    # d=1 the kernel reduces to a - b.
    assert H(0.7, 0.2, 1) == pytest.approx(0.5, rel=1e-15)
    # 0 <= H(a, b, d) <= d (a - b) on its domain 0 <= b <= a <= 1.
    for d in (1, 2, 3):
        for a, b in ((0.6, 0.3), (1.0, 0.0), (0.9, 0.9), (0.2, 0.1)):
            val = H(a, b, d)
            assert -1e-15 <= val <= d * (a - b) + 1e-15
        assert H(0.4, 0.4, d) == 0.0


def test_h_domain():
    with pytest.raises(ValueError):
        H(1.5, 0.0, 1)
    with pytest.raises(ValueError):
        H(0.5, -0.1, 1)
    with pytest.raises(ValueError):
        H(0.5, 0.5, 0)


def test_g_frozen_barycenter_values():
    # C=1, d=1 at the barycenter: one empty-level term, value 1/4.
    got = g([0.5, 0.5], ModelParams(n=50, C=1, d=1, lam=0.05))
    assert got.shape == (1,)
    assert got[0] == pytest.approx(0.25, abs=1e-15)
    # Two alternatives raise it to 7/16.
    got2 = g([0.5, 0.5], ModelParams(n=50, C=1, d=2, lam=0.05))
    assert got2[0] == pytest.approx(0.4375, abs=1e-15)


def test_g_zero_when_no_full_links():
    # With no mass at the top level nothing ever overflows.
    p = ModelParams(n=50, C=2, d=2, lam=0.05)
    got = g([0.6, 0.4, 0.0], p)
    assert np.allclose(got, 0.0)


def test_g_matches_h_form_random():
    rng = np.random.default_rng(42)
    for C in (1, 2, 3):
        for d in (1, 2):
            p = ModelParams(n=50, C=C, d=d, lam=0.05)
            for xi in random_simplex(C, 50, rng):
                a = g(xi, p)
                b = g_h_form(xi, p)
                assert np.max(np.abs(a - b)) <= 1e-12


def test_g_upper_bound():
    rng = np.random.default_rng(7)
    for C, d in ((1, 1), (2, 2), (3, 1)):
        p = ModelParams(n=50, C=C, d=d, lam=0.05)
        for xi in random_simplex(C, 40, rng):
            gv = g(xi, p)
            cap = 2.0 * d * xi[:C] * xi[C]
            assert np.all(gv <= cap + 1e-12)


def test_drift_sums_to_zero():
    rng = np.random.default_rng(3)
    for C, d, lam in ((1, 1, 1 / 12), (2, 1, 0.03), (3, 2, 5.0)):
        p = ModelParams(n=50, C=C, d=d, lam=lam)
        for xi in random_simplex(C, 30, rng):
            assert abs(float(F(xi, p).sum())) <= 1e-12


def test_drift_frozen_value():
    # j=0 component at the C=1 barycenter, lam=1/12:
    # lam*(-eta0 - g0) + eta1 = (1/12)(-3/4) + 1/2 = 7/16.
    got = F([0.5, 0.5], P11)
    assert got[0] == pytest.approx(0.4375, abs=1e-15)
    assert got[1] == pytest.approx(-0.4375, abs=1e-15)


def test_residual_frozen_values():
    assert fixed_point_residual([1.0, 0.0], P11) == pytest.approx(1 / 12, abs=1e-15)
    assert fixed_point_residual([0.5, 0.5], P11) == pytest.approx(0.4375, abs=1e-15)


def test_fixed_point_matches_scalar_oracle():
    res = fixed_point(P11)
    assert res.converged
    assert res.residual <= 1e-10
    want = scalar_fixed_point_c1(1.0 / 12.0, 1)
    assert abs(res.eta[0] - want) <= 1e-8
    assert abs(res.eta[0] - 0.9117952570361) <= 1e-10
    assert res.diameter <= 1e-9


def test_fixed_point_scalar_oracle_other_rates():
    for lam, d in ((0.05, 1), (0.02, 2), (44000.0, 1)):
        p = ModelParams(n=50, C=1, d=d, lam=lam)
        res = fixed_point(p)
        want = scalar_fixed_point_c1(lam, d)
        assert res.converged, (lam, d)
        assert abs(res.eta[0] - want) <= 1e-8, (lam, d, res.eta[0], want)


def test_fixed_point_is_stationary_for_ode():
    p = ModelParams(n=50, C=2, d=2, lam=0.03)
    res = fixed_point(p)
    drift = F(res.eta, p)
    assert np.max(np.abs(drift)) <= 1e-10


def test_default_starts_cover_vertices_and_barycenter():
    starts = default_starts(2)
    assert len(starts) == 4
    assert starts[0].tolist() == [1.0, 0.0, 0.0]
    assert starts[-1].tolist() == [1 / 3, 1 / 3, 1 / 3]


def test_fixed_point_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        fixed_point(P11, tolerance=0.0)


def test_ode_constant_at_fixed_point():
    res = fixed_point(P11)
    traj = ode_integrate(res.eta, P11, t_end=5.0, step=1e-3)
    assert np.max(np.abs(traj.final - res.eta)) <= 1e-12
    assert traj.max_step_deviation <= 1e-12


def test_ode_converges_to_fixed_point():
    p = ModelParams(n=50, C=2, d=1, lam=0.05)
    res = fixed_point(p)
    for start in ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], barycenter(2)):
        traj = ode_integrate(start, p, t_end=200.0, step=1e-2)
        assert np.max(np.abs(traj.final - res.eta)) <= 1e-9


def test_ode_step_halving_agrees():
    p = ModelParams(n=50, C=1, d=2, lam=0.08)
    a = ode_integrate([1.0, 0.0], p, t_end=10.0, step=2e-3)
    b = ode_integrate([1.0, 0.0], p, t_end=10.0, step=1e-3)
    assert np.max(np.abs(a.final - b.final)) <= 1e-11


def test_ode_records_and_deviation_fields():
    traj = ode_integrate([1.0, 0.0], P11, t_end=1.0, step=1e-3, record_every=100)
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(1.0, abs=1e-12)
    assert traj.points.shape[1] == 2
    assert len(traj.times) == len(traj.points)
    assert 0.0 <= traj.max_step_deviation <= 1e-9
    assert traj.deviation_per_unit_time >= 0.0


def test_ode_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ode_integrate([0.7, 0.7], P11, t_end=1.0, step=1e-3)
    with pytest.raises(ValueError):
        ode_integrate([1.0, 0.0], P11, t_end=1.0, step=0.0)
    with pytest.raises(ValueError):
        ode_integrate([1.0, 0.0], P11, t_end=-1.0, step=1e-3)


def test_ode_escape_detection():
    # Euler-style blowup: a rate so large the solver overshoots at this step
    # size, which must surface as an integration failure, not silent output.
    p = ModelParams(n=50, C=1, d=1, lam=43846.0)
    with pytest.raises(IntegrationError):
        ode_integrate([1.0, 0.0], p, t_end=1.0, step=1e-3)


def test_lipschitz_probe_runs_and_bounds_hold():
    p = ModelParams(n=50, C=1, d=1, lam=0.05)
    worst = g_lipschitz_probe(p, 300, rng=11)
    assert worst >= 0.0
    # Near the barycenter the closed-form ceiling evaluates to 4.25 for
    # C=1, d=1; the measured ratio must sit below it.
    eps = 1e-6
    xi = np.array([0.5 + eps, 0.5 - eps])
    eta = np.array([0.5, 0.5])
    num = float(np.abs(g(xi, p) - g(eta, p)).sum())
    assert num / (2 * eps) <= 4.25 + 1e-9


def test_lipschitz_probe_rejects_zero_samples():
    with pytest.raises(ValueError):
        g_lipschitz_probe(P11, 0, rng=1)


if __name__ == "__main__":
    res = fixed_point(P11)
    print("eta*:", res.eta, "residual:", res.residual)
