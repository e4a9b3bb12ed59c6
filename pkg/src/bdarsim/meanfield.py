"""Deterministic side of the model: drift on the load-proportion simplex,
its indirect-routing components, the ODE integrator, and the equilibrium
fixed-point solver.

Vectors xi = (xi(0), ..., xi(C)) live on the probability simplex and play
the role of per-load link proportions. The drift F has one coordinate per
load level and sums to zero, so the simplex is invariant for the flow. The
components g_j capture the rate at which indirectly routed arrivals land on
links of load j; they vanish unless some links are fully loaded (factor
xi(C)) and some arrivals target load j (factor xi(j)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ModelParams

SIMPLEX_ATOL = 1e-9


class IntegrationError(RuntimeError):
    """Raised when the integrator leaves the simplex beyond tolerance."""


def _as_simplex(xi, C: Optional[int] = None) -> list[float]:
    arr = np.asarray(xi, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"expected a vector of length >= 2, got shape {arr.shape}")
    if C is not None and arr.size != C + 1:
        raise ValueError(f"expected {C + 1} coordinates for C={C}, got {arr.size}")
    if not np.isfinite(arr).all():
        raise ValueError("simplex vector has non-finite coordinates")
    if arr.min() < -1e-12:
        raise ValueError(f"simplex vector has a negative coordinate: {arr.min()}")
    total = float(arr.sum())
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"simplex vector sums to {total}, not 1")
    return [float(v) for v in arr]


def validate_simplex(xi, C: Optional[int] = None) -> np.ndarray:
    """Check the simplex invariants and return the vector as an array."""
    return np.asarray(_as_simplex(xi, C), dtype=np.float64)


def barycenter(C: int) -> np.ndarray:
    return np.full(C + 1, 1.0 / (C + 1))


def simplex_vertex(C: int, k: int) -> np.ndarray:
    v = np.zeros(C + 1)
    v[k] = 1.0
    return v


def random_simplex(C: int, size: int, rng) -> np.ndarray:
    """Uniform samples on the simplex, shape (size, C+1)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.dirichlet(np.ones(C + 1), size=size)


def H(a: float, b: float, d: int) -> float:
    """(a - b) * sum_{r=1}^{d} (1 - a^2)^(r-1) (1 - b^2)^(d-r) for 0 <= b <= a <= 1.

    Satisfies 0 <= H(a, b, d) <= d (a - b); collapses to a - b at d = 1.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not (-1e-12 <= b <= a + 1e-12 and a <= 1.0 + 1e-12):
        raise ValueError(f"need 0 <= b <= a <= 1, got a={a}, b={b}")
    a = min(max(a, 0.0), 1.0)
    b = min(max(b, 0.0), a)
    qa = 1.0 - a * a
    qb = 1.0 - b * b
    acc = 0.0
    for r in range(1, d + 1):
        acc += qa ** (r - 1) * qb ** (d - r)
    return (a - b) * acc


def _g_list(xi: Sequence[float], C: int, d: int) -> list[float]:
    """g_0..g_{C-1} via the double-sum form (no input validation)."""
    s = [0.0] * (C + 1)
    run = 0.0
    for j in range(C + 1):
        run += xi[j]
        s[j] = run
    # A[l] = sum_{r=1}^{d} (1 - s(l)^2)^(r-1) (1 - s(l-1)^2)^(d-r)
    A = [0.0] * C
    for l in range(C):
        qa = 1.0 - s[l] * s[l]
        qb = 1.0 - (s[l - 1] * s[l - 1] if l > 0 else 0.0)
        acc = 0.0
        for r in range(1, d + 1):
            acc += qa ** (r - 1) * qb ** (d - r)
        A[l] = acc
    # suffix[j] = sum_{i=j}^{C-1} xi(i) A[i]
    suffix = [0.0] * (C + 1)
    for i in range(C - 1, -1, -1):
        suffix[i] = suffix[i + 1] + xi[i] * A[i]
    out = [0.0] * C
    for j in range(C):
        out[j] = 2.0 * xi[C] * xi[j] * (s[j] * A[j] + suffix[j + 1])
    return out


def g(xi, params: ModelParams) -> np.ndarray:
    """Indirect-routing drift components (g_0, ..., g_{C-1})."""
    vec = _as_simplex(xi, params.C)
    return np.asarray(_g_list(vec, params.C, params.d), dtype=np.float64)


def g_h_form(xi, params: ModelParams) -> np.ndarray:
    """Same components assembled from H terms; cross-check of g."""
    C, d = params.C, params.d
    vec = _as_simplex(xi, C)
    s = np.minimum(np.cumsum(vec), 1.0)
    sm1 = lambda l: float(s[l - 1]) if l > 0 else 0.0
    hvals = [H(float(s[l]), sm1(l), d) for l in range(C)]
    out = np.empty(C)
    for k in range(C):
        tail = sum(hvals[i] for i in range(k + 1, C))
        out[k] = 2.0 * vec[C] * (float(s[k]) * hvals[k] + vec[k] * tail)
    return out


def _drift_list(xi: Sequence[float], lam: float, C: int, d: int) -> list[float]:
    gv = _g_list(xi, C, d)
    out = [0.0] * (C + 1)
    out[0] = -lam * xi[0] - lam * gv[0] + xi[1]
    for k in range(1, C):
        out[k] = (
            lam * (xi[k - 1] - xi[k])
            + lam * (gv[k - 1] - gv[k])
            - k * xi[k]
            + (k + 1) * xi[k + 1]
        )
    out[C] = lam * xi[C - 1] + lam * gv[C - 1] - C * xi[C]
    return out


def F(xi, params: ModelParams) -> np.ndarray:
    """Simplex drift; coordinates sum to zero up to roundoff."""
    vec = _as_simplex(xi, params.C)
    return np.asarray(
        _drift_list(vec, params.lam, params.C, params.d), dtype=np.float64
    )


@dataclass
class OdeTrajectory:
    times: np.ndarray
    points: np.ndarray
    max_step_deviation: float
    deviation_per_unit_time: float

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]


def ode_integrate(
    xi0,
    params: ModelParams,
    t_end: float,
    step: float,
    record_every: int = 1,
    escape_tol: float = 1e-6,
) -> OdeTrajectory:
    """Classical 4th-order integration of dxi/dt = F(xi).

    Every accepted point is renormalized back onto the simplex; the size of
    those corrections is tracked and an IntegrationError is raised if a raw
    step strays from the simplex by more than escape_tol.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if t_end < 0:
        raise ValueError(f"t_end must be nonnegative, got {t_end}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    lam, C, d = params.lam, params.C, params.d
    xi = _as_simplex(xi0, C)
    nsteps = max(0, int(math.ceil(t_end / step - 1e-12)))
    times = [0.0]
    points = [list(xi)]
    total_dev = 0.0
    max_dev = 0.0
    t = 0.0
    for i in range(nsteps):
        h = min(step, t_end - t)
        k1 = _drift_list(xi, lam, C, d)
        y2 = [x + 0.5 * h * v for x, v in zip(xi, k1)]
        k2 = _drift_list(y2, lam, C, d)
        y3 = [x + 0.5 * h * v for x, v in zip(xi, k2)]
        k3 = _drift_list(y3, lam, C, d)
        y4 = [x + h * v for x, v in zip(xi, k3)]
        k4 = _drift_list(y4, lam, C, d)
        sixth = h / 6.0
        xi = [
            x + sixth * (a + 2.0 * b + 2.0 * c + e)
            for x, a, b, c, e in zip(xi, k1, k2, k3, k4)
        ]
        t += h
        total = sum(xi)
        low = min(xi)
        dev = max(abs(total - 1.0), -low if low < 0.0 else 0.0)
        if dev > escape_tol:
            raise IntegrationError(
                f"trajectory left the simplex at t={t:.6g} (deviation {dev:.3e})"
            )
        total_dev += dev
        if dev > max_dev:
            max_dev = dev
        if low < 0.0:
            xi = [x if x > 0.0 else 0.0 for x in xi]
            total = sum(xi)
        xi = [x / total for x in xi]
        if (i + 1) % record_every == 0 or i == nsteps - 1:
            times.append(t)
            points.append(list(xi))
    return OdeTrajectory(
        times=np.asarray(times),
        points=np.asarray(points),
        max_step_deviation=max_dev,
        deviation_per_unit_time=(total_dev / t_end) if t_end > 0 else 0.0,
    )


def fixed_point_residual(eta, params: ModelParams) -> float:
    """max_j |-lam eta(j) - lam g_j(eta) + (j+1) eta(j+1)| over j = 0..C-1."""
    arr = np.asarray(eta, dtype=np.float64)
    vec = [float(v) for v in arr]
    return _residual(vec, params.lam, params.C, params.d)


def _residual(eta: Sequence[float], lam: float, C: int, d: int) -> float:
    gv = _g_list(eta, C, d)
    worst = 0.0
    for j in range(C):
        r = abs(-lam * eta[j] - lam * gv[j] + (j + 1) * eta[j + 1])
        if r > worst:
            worst = r
    return worst


def _apply_map(eta: Sequence[float], lam: float, C: int, d: int, upward: bool):
    """One sweep of the balance equations, solved for the chosen side.

    Upward reads eta(j) and yields eta(j+1) (stable when lam is small);
    downward reads eta(j+1) and yields eta(j) (stable when lam is large).
    The remaining coordinate absorbs the normalization.
    """
    gv = _g_list(eta, C, d)
    u = [0.0] * (C + 1)
    if upward:
        for j in range(C):
            u[j + 1] = lam * (eta[j] + gv[j]) / (j + 1)
        u[0] = 1.0 - sum(u[1:])
    else:
        for j in range(C):
            u[j] = (j + 1) * eta[j + 1] / lam - gv[j]
        u[C] = 1.0 - sum(u[:C])
    return u


@dataclass
class StartRun:
    start: np.ndarray
    eta: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass
class FixedPointResult:
    """Best solution of the balance equations plus multi-start diagnostics.

    converged means every start reached the residual tolerance; diameter is
    the largest max-norm gap between any two starts' answers.
    """

    eta: np.ndarray
    residual: float
    iterations: int
    converged: bool
    diameter: float
    runs: list[StartRun] = field(repr=False)


def _solve_from(
    eta0: Sequence[float], lam: float, C: int, d: int, tolerance: float, max_iters: int
) -> StartRun:
    upward = lam < 1.0
    theta = 0.5
    eta = [float(v) for v in eta0]
    best_eta = list(eta)
    best_res = _residual(eta, lam, C, d)
    iters = 0
    last_improve = 0
    flipped = False
    bary = [1.0 / (C + 1)] * (C + 1)
    while iters < max_iters:
        u = _apply_map(eta, lam, C, d, upward)
        iters += 1
        # project back onto the simplex; a sweep can leave it when the
        # iterate is far from the fixed point
        u = [min(max(v, 0.0), 1.0) for v in u]
        total = sum(u)
        if total <= 0.0:
            eta = list(bary)
            continue
        u = [v / total for v in u]
        new = [(1.0 - theta) * e + theta * v for e, v in zip(eta, u)]
        update = max(abs(a - b) for a, b in zip(new, eta))
        eta = new
        res = _residual(eta, lam, C, d)
        if res < best_res:
            best_res = res
            best_eta = list(eta)
            last_improve = iters
        if update < tolerance:
            break
        if iters - last_improve > 500:
            # no residual progress for a while: try the other sweep direction
            if flipped:
                break
            flipped = True
            upward = not upward
            theta = 0.5
            eta = list(bary)
            last_improve = iters
    # undamped polish: iterate the bare sweep while the residual improves
    eta = list(best_eta)
    while iters < max_iters:
        u = _apply_map(eta, lam, C, d, upward)
        iters += 1
        if min(u) < -1e-6:
            break
        u = [min(max(v, 0.0), 1.0) for v in u]
        total = sum(u)
        if total <= 0.0:
            break
        u = [v / total for v in u]
        res = _residual(u, lam, C, d)
        if res >= best_res:
            break
        best_res = res
        best_eta = list(u)
        eta = u
    return StartRun(
        start=np.asarray(eta0, dtype=np.float64),
        eta=np.asarray(best_eta),
        residual=best_res,
        iterations=iters,
        converged=best_res <= tolerance,
    )


def default_starts(C: int) -> list[np.ndarray]:
    """The C+1 simplex vertices plus the barycenter."""
    return [simplex_vertex(C, k) for k in range(C + 1)] + [barycenter(C)]


def fixed_point(
    params: ModelParams,
    tolerance: float = 1e-12,
    max_iters: int = 100000,
    starts: Optional[Sequence] = None,
) -> FixedPointResult:
    """Solve the equilibrium balance equations from several starting points.

    Returns the lowest-residual answer; converged is true only when every
    start met the tolerance. In the middle rate regime distinct starts can
    settle on different solutions, which shows up as a large diameter rather
    than an error.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    C, d, lam = params.C, params.d, params.lam
    if starts is None:
        starts = default_starts(C)
    start_list = [_as_simplex(s, C) for s in starts]
    if not start_list:
        raise ValueError("need at least one starting point")
    runs = [_solve_from(s, lam, C, d, tolerance, max_iters) for s in start_list]
    diameter = 0.0
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            gap = float(np.max(np.abs(runs[i].eta - runs[j].eta)))
            if gap > diameter:
                diameter = gap
    best = min(runs, key=lambda r: r.residual)
    return FixedPointResult(
        eta=best.eta.copy(),
        residual=best.residual,
        iterations=sum(r.iterations for r in runs),
        converged=all(r.converged for r in runs),
        diameter=diameter,
        runs=runs,
    )


def g_lipschitz_probe(params: ModelParams, samples: int, rng) -> float:
    """Empirical max of |g(xi) - g(eta)|_1 / |xi - eta|_1 over random pairs.

    Each ratio is checked against the closed-form bound
    (1 + eta(C)(12C+3)) d max(xi(<=C-1), eta(<=C-1)) evaluated at that pair;
    a violation raises AssertionError. Identical pairs are skipped.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    C, d = params.C, params.d
    alpha = np.ones(C + 1)
    worst = 0.0
    for _ in range(samples):
        xi = rng.dirichlet(alpha)
        eta = rng.dirichlet(alpha)
        denom = float(np.abs(xi - eta).sum())
        if denom == 0.0:
            continue
        gx = _g_list([float(v) for v in xi], C, d)
        ge = _g_list([float(v) for v in eta], C, d)
        ratio = sum(abs(a - b) for a, b in zip(gx, ge)) / denom
        bound = (
            (1.0 + float(eta[C]) * (12 * C + 3))
            * d
            * max(float(xi[:C].sum()), float(eta[:C].sum()))
        )
        if ratio > bound + 1e-9:
            raise AssertionError(
                f"smoothness bound violated: ratio {ratio} > bound {bound} "
                f"for xi={xi.tolist()}, eta={eta.tolist()}"
            )
        if ratio > worst:
            worst = ratio
    return worst


if __name__ == "__main__":
    for lam in (1.0 / 12, 43846.0):
        p = ModelParams(n=3, C=1, d=1, lam=lam)
        r = fixed_point(p)
        print(
            f"lam={lam:g}: eta*={np.array2string(r.eta, precision=6)} "
            f"residual={r.residual:.2e} diameter={r.diameter:.2e} "
            f"converged={r.converged}"
        )
