import math

import numpy as np
import pytest
from scipy import stats

from reflectch.mc import ks_two_sample
from reflectch.meander import (
    MeanderPath,
    arcsine_cdf,
    arcsine_pdf,
    arcsine_samples,
    build_T_r,
    build_U_r,
    build_V_r,
    composite_paths,
    conditioned_walk_samples,
    denisov_check,
    meander_at_times,
    meander_paths,
    sample_arcsine,
    sample_meander,
    trapezoid_with_kink,
)
from reflectch.spectral import GridSpec

GRID = GridSpec(257)


def test_meander_endpoint_is_rayleigh():
    M = meander_at_times(np.ones((100_000, 1)), 1)[:, 0]
    assert stats.kstest(M, lambda x: 1 - np.exp(-x * x / 2)).pvalue > 0.01


def test_meander_matches_conditioned_walk():
    M = meander_at_times(np.tile([0.5, 1.0], (20_000, 1)), 2)
    W = conditioned_walk_samples(10_000, (0.5, 1.0), 20_000, 3)
    assert ks_two_sample(M[:, 0], W[:, 0]).pvalue > 0.005
    assert ks_two_sample(M[:, 1], W[:, 1]).pvalue > 0.005


def test_meander_path_properties():
    m = sample_meander(GRID, 4)
    assert m.values[0] == 0.0
    assert np.all(m.values >= 0.0)
    assert m.at(1.0) == m.endpoint
    with pytest.raises(ValueError):
        MeanderPath(np.ones(GRID.m_points), GRID)
    with pytest.raises(ValueError):
        meander_at_times(np.array([[0.5, 0.2]]), 0)


def test_meander_interior_zeros_vanish_under_refinement():
    fractions = []
    for m in (33, 257, 2049):
        P = meander_paths(200, GridSpec(m), 5)
        fractions.append(np.mean(P[:, 1:] == 0.0))
    assert fractions[-1] == 0.0


def test_arcsine_law():
    r = arcsine_samples(1_000_000, 6)
    se = r.std(ddof=1) / 1000
    assert abs(r.mean() - 0.5) <= 3 * se
    hist, edges = np.histogram(r, bins=50, range=(0, 1), density=True)
    assert hist[24] == pytest.approx(2 / math.pi, rel=0.02)
    assert arcsine_pdf(0.5) == pytest.approx(2 / math.pi)
    assert stats.kstest(r[:100_000], arcsine_cdf).pvalue > 0.01
    assert 0.0 < sample_arcsine(7) < 1.0


def _pair(seed):
    rng = np.random.default_rng(seed)
    return sample_meander(GRID, rng), sample_meander(GRID, rng)


def test_U_r_structure():
    m, mh = _pair(8)
    r = 0.375  # grid point
    U = build_U_r(r, m, mh)
    assert U.values[GRID.index_of(r)] == 0.0
    assert U.values[0] == pytest.approx(math.sqrt(r) * m.endpoint)
    assert np.all(U.values >= 0.0)
    with pytest.raises(ValueError):
        build_U_r(0.0, m, mh)


def test_V_r_structure():
    m, mh = _pair(9)
    r = 0.25
    U, V = build_U_r(r, m, mh), build_V_r(r, m, mh)
    assert V.values[0] == pytest.approx(0.0, abs=1e-15)
    assert np.min(V.values) == pytest.approx(-math.sqrt(r) * m.endpoint)
    assert np.argmin(V.values) == GRID.index_of(r)
    assert np.max(np.abs(V.values + math.sqrt(r) * m.endpoint - U.values)) < 1e-12


def test_T_r_structure_and_scaling():
    m, mh = _pair(10)
    T = build_T_r(0.125, m, mh)
    assert T.values[np.argmin(np.abs(T.theta - 0.125))] == 0.0
    assert T.values[0] == pytest.approx(math.sqrt(0.125) * m.endpoint)
    rng = np.random.default_rng(11)
    r = arcsine_samples(20_000, rng, 0.5)
    t_half = np.array([0.1, 0.3, 0.5])
    T = composite_paths(r, t_half, 0.5, rng)
    U = composite_paths(2 * arcsine_samples(20_000, rng, 0.5), 2 * t_half, 1.0, rng)
    for j in range(3):
        assert ks_two_sample(T[:, j], U[:, j] / math.sqrt(2)).pvalue > 0.005


def test_trapezoid_with_kink_exact_for_piecewise_linear():
    theta = np.linspace(0, 1, 11)
    r = np.array([0.33])
    v = np.abs(theta - r[0])[None, :]
    exact = (0.33**2 + 0.67**2) / 2
    assert trapezoid_with_kink(v, theta, r)[0] == pytest.approx(exact, abs=1e-14)


def test_denisov_moments_and_argmin():
    res = denisov_check(40_000, GRID, 12)
    assert res["passed"]
    m = res["mean_V1"]
    assert abs(m["mean"]) <= 3 * m["stderr"]
    v = res["var_Vhalf"]
    assert abs(v["value"] - 0.5) <= 4 * v["stderr"]
    # the exact minimum time is tau; grid argmins are compared with direct paths inside the check
    assert stats.kstest(res["_tau"], arcsine_cdf).pvalue > 0.01


def test_composite_minimum_sits_at_r():
    rng = np.random.default_rng(13)
    r = arcsine_samples(500, rng)
    theta = np.sort(np.concatenate([GRID.theta, [0.123456]]))
    r[:] = 0.123456
    U = composite_paths(r, theta, 1.0, rng)
    k = np.searchsorted(theta, 0.123456)
    assert np.all(U[:, k] == 0.0)
    assert np.all(np.delete(U, k, axis=1) > 0.0)
