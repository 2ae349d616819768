"""Property-based checks of the structural invariants."""

import math

import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from reflectch.mc import McEstimate, batched_map
from reflectch.measures import PenalizationParams, u_eps
from reflectch.solver import SolverConfig, coupled_contraction, penalization_drift, solve_path
from reflectch.spectral import (
    Field,
    GridSpec,
    analyze,
    apply_A,
    apply_Qbar,
    h_inner,
    kernel_q,
    project_pi,
    synthesize,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
unit = st.floats(0, 1, allow_nan=False)


@st.composite
def fields(draw, min_modes=1, max_modes=12):
    n = draw(st.integers(min_modes, max_modes))
    return Field(draw(arrays(float, n + 1, elements=finite)))


@given(fields())
def test_projection_is_idempotent_and_kills_the_average(f):
    p = project_pi(f)
    assert project_pi(p).allclose(p)
    assert p.average == 0.0


@given(fields())
def test_inner_with_constant_is_the_average(f):
    assert math.isclose(h_inner(f, Field.basis(0, f.n_modes)), f.average, abs_tol=1e-12)


@given(fields())
def test_minus_A_Qbar_is_the_projection(f):
    assert (-apply_A(apply_Qbar(f))).allclose(project_pi(f), atol=1e-9)


@given(fields())
def test_grid_round_trip(f):
    grid = GridSpec.for_modes(f.n_modes)
    back = analyze(synthesize(f.coeffs, grid), grid, f.n_modes)
    assert np.allclose(back, f.coeffs, atol=1e-10)


@given(unit, unit)
def test_kernel_is_symmetric(s, t):
    assert math.isclose(float(kernel_q(s, t)), float(kernel_q(t, s)), abs_tol=1e-14)


# values below 1e-100 in size are flushed to zero: their square underflows
not_tiny = finite.map(lambda v: 0.0 if abs(v) < 1e-100 else v)


@given(arrays(float, 33, elements=not_tiny), st.floats(1e-3, 10))
def test_u_eps_is_nonnegative_and_vanishes_on_nonnegative_paths(x, eps):
    grid = GridSpec(33)
    params = PenalizationParams(eps)
    value = float(u_eps(x, params, grid))
    assert value >= 0.0
    assert (value == 0.0) == bool(np.all(x >= 0.0))


@given(fields(max_modes=8), st.floats(1e-3, 1.0))
def test_penalty_drift_preserves_the_average(f, eps):
    assert penalization_drift(f, eps).coeffs[0] == 0.0


@given(fields(max_modes=6), st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_average_is_conserved_and_contact_is_nonpositive(f, seed, eps):
    cfg = SolverConfig(n_modes=f.n_modes, T=0.02, eps=eps, c=f.average, dt=1e-3)
    traj = solve_path(f, cfg, seed=seed)
    assert np.all(traj.coeffs[:, 0] == f.average)
    assert np.all(traj.contact_per_step <= 0.0)
    assert np.all(traj.eta_mass_per_step >= 0.0)


@given(fields(max_modes=6), fields(max_modes=6), st.integers(0, 2**31))
def test_same_noise_coupling_contracts(x, y, seed):
    n = max(x.n_modes, y.n_modes)
    x, y = x.padded(n), y.padded(n)
    y = y + Field.constant(x.average - y.average, n)
    cfg = SolverConfig(n_modes=n, T=0.02, eps=0.1, c=x.average, dt=1e-3)
    curve = coupled_contraction(x, y, cfg, seed=seed)
    assert np.all(curve.values <= curve.reference * (1 + 1e-9) + 1e-12)


@given(finite, st.floats(0, 1), finite, st.floats(0, 1), finite)
def test_mc_estimate_arithmetic(m1, s1, m2, s2, k):
    a, b = McEstimate(m1, s1, 10), McEstimate(m2, s2, 20)
    c = a + b
    assert math.isclose(c.mean, m1 + m2, abs_tol=1e-12)
    assert math.isclose(c.stderr, math.hypot(s1, s2))
    assert math.isclose((a - b).stderr, c.stderr)
    assert math.isclose(a.scaled(k).stderr, s1 * abs(k), abs_tol=1e-15)


@given(st.integers(1, 5000), st.integers(0, 10**6), st.integers(1, 4), st.integers(100, 2000))
def test_batched_map_ignores_worker_count(n, root, workers, batch):
    def fn(rng, m):
        return rng.standard_normal(m)

    one = np.concatenate(batched_map(fn, n, root, "prop", batch_size=batch, workers=1))
    many = np.concatenate(batched_map(fn, n, root, "prop", batch_size=batch, workers=workers))
    assert one.size == n and np.array_equal(one, many)
