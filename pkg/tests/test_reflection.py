import math

import numpy as np
import pytest

from reflectch.reflection import (
    StationaryRun,
    contact_support_check,
    eps_sweep,
    eta_loglog_slopes,
    stationary_law_compare,
    weak_form_residual,
)
from reflectch.mc import McEstimate
from reflectch.solver import NoiseRealization, SolverConfig, solve_path
from reflectch.spectral import Field


def _x0(N, c=0.2):
    a = np.zeros(N + 1)
    a[0], a[1], a[2] = c, 0.5, -0.2
    return Field(a)


def test_weak_form_linear_run_is_exact():
    cfg = SolverConfig(16, 0.05, math.inf, 0.2, dt=1e-3, seed=1)
    tr = solve_path(_x0(16), cfg)
    for n in (1, 3, 7):
        assert abs(weak_form_residual(tr, Field.basis(n, 16), 0.01, 0.05)) < 1e-8


def test_weak_form_average_direction_is_exact():
    cfg = SolverConfig(16, 0.05, 0.1, 0.2, seed=2)
    tr = solve_path(_x0(16), cfg)
    assert weak_form_residual(tr, Field.basis(0, 16), tr.times[3], tr.times[-1]) == 0.0


def test_weak_form_penalized_first_order():
    N, T = 16, 0.04
    dt_fine = 1.25e-4
    noise = NoiseRealization.draw(int(round(T / dt_fine)), N, dt_fine, 3)
    res = []
    for level in range(4):
        dt = dt_fine * 2**level
        cfg = SolverConfig(N, T, 0.1, 0.2, dt=dt)
        tr = solve_path(_x0(N), cfg, noise=noise)
        res.append(abs(weak_form_residual(tr, Field.basis(1, N), 0.01, T)))
        if level < 3:
            noise = noise.coarsen()
    order = np.polyfit(np.log(dt_fine * 2.0 ** np.arange(4)), np.log(res), 1)[0]
    assert order >= 0.95
    with pytest.raises(ValueError):
        weak_form_residual(tr, Field.basis(1, N), 0.02, 0.01)


def test_contact_support():
    cfg = SolverConfig(16, 0.05, 0.05, 0.1, seed=4)
    tr = solve_path(_x0(16, 0.1), cfg)
    rep = contact_support_check(tr)
    assert rep["all_negative"] and rep["total_weight"] > 0
    assert rep["total_weight"] == pytest.approx(tr.eta_mass, rel=1e-12)
    lin = solve_path(_x0(16, 0.1), cfg.with_(eps=math.inf))
    assert contact_support_check(lin)["hist"] == []


def test_eta_slopes():
    rates = [McEstimate(r, 0.0, 2) for r in (1.0, 2.0, 4.0)]
    assert eta_loglog_slopes([1.0, 0.1, 0.01], rates) == pytest.approx([math.log10(2)] * 2)


def test_small_sweep_signs_and_trends():
    run = StationaryRun(n_modes=16, n_replicas=300, n_snapshots=2, batch=150)
    res = eps_sweep(1.0, [0.03, 0.3], run, 5, compare_limit=False)
    assert res.eps == [0.3, 0.03]
    checks = res.checks()
    assert checks["contact_rate_nonpositive"]
    assert checks["negative_fraction_decreasing"]
    assert len(res.table()) == 2
    assert "checks" in res.as_dict()
    with pytest.raises(ValueError):
        eps_sweep(0.0, [0.1], run, 0)


def test_stationary_compare_mid_eps():
    run = StationaryRun(n_modes=32, n_replicas=1000)
    res = stationary_law_compare(1.0, 0.1, run, 6, thetas=(0.5,), n_reference=10_000)
    assert res["passed"]
    with pytest.raises(ValueError):
        stationary_law_compare(1.0, 0.1, run, 6, reference="other")
