import math

import numpy as np
import pytest

from reflectch.mc import ks_two_sample
from reflectch.measures import (
    PathSample,
    PenalizationParams,
    RejectionBudgetExceeded,
    brownian_paths,
    mu_covariance,
    mu_c_paths,
    mu_paths,
    nu_c_eps_paths,
    nu_c_paths,
    penalty_F,
    penalty_f,
    prob_sup_abs_bm_below,
    sample_brownian,
    sample_mu,
    sample_nu_c,
    sample_nu_c_eps,
    u_eps,
)
from reflectch.spectral import Field, GridSpec, kernel_q

GRID = GridSpec(257)


def within(samples, exact, k):
    x = np.asarray(samples, dtype=float)
    se = x.std(ddof=1) / math.sqrt(x.size)
    return abs(x.mean() - exact) <= k * se


def test_brownian_start_variance_and_covariance():
    B = brownian_paths(100_000, GRID, 1)
    assert np.all(B[:, 0] == 0.0)
    i, j = GRID.index_of(0.3), GRID.index_of(0.8)
    assert within(B[:, j] ** 2, 0.8, 3)
    assert within(B[:, i] * B[:, j], 0.3, 3)
    assert sample_brownian(GRID, 3).values[0] == 0.0


def test_mu_variance_and_average():
    Y = mu_paths(100_000, GRID, 2)
    assert within(Y[:, 0] ** 2, 4.0 / 3.0, 3)
    avg = GRID.integrate(Y)
    assert within(avg, 0.0, 3)
    assert within(avg**2, 1.0, 3)
    i, j = GRID.index_of(0.25), GRID.index_of(0.75)
    assert within(Y[:, i] * Y[:, j], kernel_q(0.25, 0.75) + 1.0, 3)
    assert mu_covariance(0.25, 0.75) == pytest.approx(kernel_q(0.25, 0.75) + 1.0)
    assert isinstance(sample_mu(GRID, 0), PathSample)


def test_mu_c_average_and_covariance():
    Y = mu_c_paths(100_000, 0.7, GRID, 3)
    assert np.max(np.abs(GRID.integrate(Y) - 0.7)) < 1e-12
    Z = mu_c_paths(100_000, 0.0, GRID, 4)
    assert within(Z[:, 0] ** 2, 1.0 / 3.0, 3)
    i, j = GRID.index_of(0.1), GRID.index_of(0.6)
    assert within(Z[:, i] * Z[:, j], kernel_q(0.1, 0.6), 3)
    for k in (0, 64, 128, 256):
        assert within(Y[:, k], 0.7, 4)


def test_nu_c_acceptance_bound_and_support():
    X, rep = nu_c_paths(2000, 1.0, GRID, 5)
    assert rep.acceptance_rate >= prob_sup_abs_bm_below(0.5)
    assert prob_sup_abs_bm_below(0.5) == pytest.approx(0.0092, abs=2e-4)
    assert X.min() >= 0.0
    assert np.max(np.abs(GRID.integrate(X) - 1.0)) < 1e-12


def test_nu_c_budget_exceeded_carries_report():
    with pytest.raises(RejectionBudgetExceeded) as info:
        nu_c_paths(100, 0.05, GRID, 6, max_proposals=2000, chunk=1000)
    assert info.value.report.proposals == 2000
    with pytest.raises(ValueError):
        nu_c_paths(10, 0.0, GRID, 0)


def test_single_path_samplers():
    s, rep = sample_nu_c(1.0, GRID, 7)
    assert s.values.min() >= 0 and rep.accepted >= 1
    s, rep = sample_nu_c_eps(1.0, 0.1, GRID, 7)
    assert s.average == pytest.approx(1.0, abs=1e-12)


def test_u_eps_examples():
    g = GridSpec(1001)
    assert u_eps(np.ones(1001), PenalizationParams(0.3), g) == 0.0
    assert u_eps(-np.ones(1001), PenalizationParams(0.5), g) == pytest.approx(1.0)
    assert u_eps(-g.theta, PenalizationParams(1.0), g) == pytest.approx(1.0 / 6.0, abs=1e-6)
    assert u_eps(Field([1.0, 0.1]), PenalizationParams(0.1)) == 0.0
    assert u_eps(PathSample(-np.ones(1001), g), PenalizationParams(0.5)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        u_eps(np.ones(3), PenalizationParams(1.0))
    with pytest.raises(ValueError):
        PenalizationParams(0.0)


def test_penalty_pair():
    u = np.linspace(-2, 2, 41)
    for kind in ("negative_part", "smooth"):
        f, F = penalty_f(u, kind), penalty_F(u, kind)
        assert np.all(f >= 0) and np.all(F >= 0)
        assert np.all(f[u >= 0] == 0) and np.all(F[u >= 0] == 0)
        dF = np.gradient(F, u)
        assert np.allclose(dF[2:18], -f[2:18], atol=0.06)


def test_nu_c_eps_acceptance_monotone_in_eps():
    rates = [nu_c_eps_paths(2000, 0.5, e, GRID, 8)[1].acceptance_rate for e in (0.03, 0.3, 3.0)]
    assert rates[0] <= rates[1] <= rates[2]


def test_nu_c_eps_large_eps_is_mu_c():
    X, _ = nu_c_eps_paths(5000, 1.0, 1e6, GRID, 9)
    Y = mu_c_paths(5000, 1.0, GRID, 10)
    i = GRID.index_of(0.5)
    assert ks_two_sample(X[:, i], Y[:, i]).pvalue > 0.01


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at eps = 0.01 the penalized law differs from the reflected one by KS distance about 0.03")
def test_nu_c_eps_small_eps_matches_nu_c():
    X, _ = nu_c_eps_paths(20_000, 1.0, 0.01, GRID, 11)
    Y, _ = nu_c_paths(20_000, 1.0, GRID, 12)
    for th in (0.25, 0.5, 0.75):
        i = GRID.index_of(th)
        assert ks_two_sample(X[:, i], Y[:, i]).pvalue > 0.01
