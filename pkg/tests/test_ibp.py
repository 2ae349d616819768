import math

import numpy as np
import pytest
from scipy import stats

from reflectch.ibp import (
    CylindricalFunctional,
    HalfFunctional,
    boundary_72,
    bridge_profile,
    conditional_bridge,
    conditional_bridge_paths,
    directional_derivative,
    finite_difference,
    get_functional,
    survival_weight,
    verify_b4_identity,
    verify_cor_72,
    verify_ibp_72,
    verify_lemma_b1,
    verify_prop_a1,
    weight_rho,
)
from reflectch.mc import ks_two_sample
from reflectch.measures import PathSample, mu_c_paths, mu_paths
from reflectch.spectral import Field, GridSpec, l2_inner

GRID = GridSpec(257)
SMALL = GridSpec(129)


def e(n, N=4):
    return Field.basis(n, N)


# ---------------------------------------------------------------- derivatives


def test_linear_functional_derivative_is_constant():
    g = Field([0.2, -0.4, 0.7])
    phi = CylindricalFunctional("linear", (g,), "lin")
    h = Field([0.0, 1.0, 0.5, -0.3])
    X = mu_paths(5, GRID, 0)
    d = phi.directional_derivative(h, X, GRID)
    assert np.allclose(d, l2_inner(h, g), atol=1e-14)


def test_chain_rule_for_sine():
    phi = get_functional("sin-e1")
    x = PathSample(mu_paths(1, GRID, 1)[0], GRID)
    y = phi.projections(x.values, GRID)[0, 0]
    assert directional_derivative(phi, e(1), x) == pytest.approx(math.cos(y), abs=1e-14)


@pytest.mark.parametrize("name", ["mean", "sin-e1", "cos-e1", "bump-e1", "bump-e2", "sin-e1*cos-e2"])
def test_finite_difference_agrees(name):
    phi = get_functional(name)
    rng = np.random.default_rng(2)
    X = mu_paths(20, GRID, rng)
    h = Field(rng.standard_normal(5))
    closed = directional_derivative(phi, h, (X, GRID))
    fd = finite_difference(phi, h, X, GRID, 1e-5)
    assert np.max(np.abs(closed - fd)) < 1e-8


def test_functional_validation():
    with pytest.raises(ValueError):
        get_functional("nope")
    with pytest.raises(ValueError):
        CylindricalFunctional("sin", ())
    with pytest.raises(ValueError):
        HalfFunctional("nope")


def test_weight_rho():
    assert weight_rho(0.0) == pytest.approx(0.39894, abs=1e-5)
    assert weight_rho(40.0) == 0.0
    assert weight_rho(1.3) == weight_rho(-1.3)


def test_survival_weight_bounds():
    X = mu_c_paths(1000, 1.0, GRID, 3)
    w = survival_weight(X, GRID.h)
    g = survival_weight(X, GRID.h, "grid")
    assert np.all((0 <= w) & (w <= g))
    with pytest.raises(ValueError):
        survival_weight(X, GRID.h, "other")


# ---------------------------------------------------------------- mean-tilt density


def test_prop_a1_normalization_and_mean():
    one = verify_prop_a1(get_functional("one"), 100_000, 4, grid=SMALL)
    assert abs((one.bulk.mean - 1.0) / one.bulk.stderr) <= 3
    mean = verify_prop_a1(get_functional("mean"), 100_000, 5, grid=SMALL)
    assert abs(mean.lhs.z) <= 3
    assert mean.passed


def test_prop_a1_sine():
    assert verify_prop_a1(get_functional("sin-e1"), 200_000, 6, grid=SMALL).passed


# ---------------------------------------------------------------- cone identity


def test_cone_zero_direction():
    rep = verify_ibp_72(get_functional("sin-e1"), Field(np.zeros(3)), 2000, 7, grid=SMALL)
    assert rep.lhs.mean == rep.bulk.mean == rep.boundary.mean == 0.0


def test_cone_constant_functional_balance():
    rep = verify_ibp_72(get_functional("one"), e(0), 100_000, 8, grid=SMALL)
    assert rep.lhs.mean == 0.0
    assert rep.passed


def test_cone_sine():
    rep = verify_ibp_72(get_functional("sin-e1"), e(1), 100_000, 9, grid=SMALL)
    assert rep.passed
    assert rep.as_dict()["residual_se_units"] == rep.z


def test_boundary_designs_agree():
    phi, h = get_functional("bump-e2"), e(2)
    a = boundary_72(phi, h, 50_000, 10, SMALL)
    b = boundary_72(phi, h, 50_000, 10, SMALL, design="chebyshev")
    assert abs((a - b).z) <= 3
    with pytest.raises(ValueError):
        boundary_72(phi, h, 100, 0, SMALL, design="nope")


# ---------------------------------------------------------------- fixed average


def test_fixed_average_constant_direction_vanishes():
    rep = verify_cor_72(get_functional("sin-e1"), e(0), 1.0, 20_000, 11, grid=SMALL)
    assert rep.lhs.mean == rep.bulk.mean == rep.boundary.mean == 0.0


@pytest.mark.slow
def test_fixed_average_and_bandwidth_halving():
    reps = [verify_cor_72(get_functional("one"), e(1), 1.0, 400_000, 12, bandwidth=b, grid=SMALL) for b in (0.05, 0.025)]
    assert all(r.passed for r in reps)
    assert abs((reps[0].residual - reps[1].residual).z) <= 4


def test_fixed_average_low_ess_rejected():
    with pytest.raises(ValueError, match="effective sample size"):
        verify_cor_72(get_functional("one"), e(1), 1.0, 200, 13, grid=SMALL, bandwidth=1e-4)


# ---------------------------------------------------------------- half-interval identities


def test_half_identities_constant():
    b2, b3 = verify_lemma_b1(HalfFunctional("one"), 1.0, 100_000, 14, grid=SMALL)
    assert abs((b2.bulk.mean - 1.0) / b2.bulk.stderr) <= 3
    assert b3.lhs.mean == 0.0
    assert b3.passed


def test_half_identities_sine():
    b2, b3 = verify_lemma_b1(HalfFunctional("sin-quarter"), 1.0, 100_000, 15, grid=SMALL)
    assert b2.passed and b3.passed


def test_half_penalized_large_eps():
    rep = verify_b4_identity(HalfFunctional("one"), 1.0, 10.0, 100_000, 16, grid=SMALL)
    assert rep.passed
    assert rep.details["sigma_mass"]["mean"] >= 0.0
    with pytest.raises(ValueError):
        verify_b4_identity(HalfFunctional("one"), 1.0, 0.0, 10, 0)


def test_half_grid_requirement():
    with pytest.raises(ValueError):
        verify_lemma_b1(HalfFunctional("one"), 1.0, 100, 0, grid=GridSpec(100))


# ---------------------------------------------------------------- conditional bridge


def test_bridge_profile_mass():
    s = np.linspace(0, 0.5, 100_001)
    assert np.trapezoid(bridge_profile(s), s) == pytest.approx(1.0, abs=1e-9)


def test_conditional_bridge_continuity_and_average():
    m = (SMALL.m_points + 1) // 2
    half = mu_c_paths(1, 0.8, SMALL, 17)[0, :m]
    p = conditional_bridge(0.8, half, 18, SMALL)
    assert p.values[m - 1] == half[-1]
    np.testing.assert_array_equal(p.values[:m], half)
    averages = [conditional_bridge(0.8, half, s, SMALL).average for s in range(200)]
    assert np.max(np.abs(np.array(averages) - 0.8)) < 1e-12


def test_conditional_bridge_law():
    Y = mu_c_paths(20_000, 1.0, GRID, 19)
    m = (GRID.m_points + 1) // 2
    Z = conditional_bridge_paths(1.0, Y[:, :m], GRID, 20)
    ref = mu_c_paths(20_000, 1.0, GRID, 21)
    for th in (0.6, 0.8, 1.0):
        i = GRID.index_of(th)
        assert ks_two_sample(Z[:, i], ref[:, i]).pvalue > 0.01
    with pytest.raises(ValueError):
        conditional_bridge_paths(1.0, Y[:, :10], GRID, 0)
