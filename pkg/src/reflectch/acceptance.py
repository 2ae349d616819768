"""Acceptance checks shared by the test suite and ``reflectch selftest``.

Every check takes a :class:`Scale`, a root seed and a worker count and
returns a :class:`CheckResult` whose payload is pure data (no timings), so
reruns with the same seed give byte-identical payloads for any worker count.

Some sub-checks fail for reasons analysed in the project notes; they are
listed in ``KNOWN_LIMITATIONS`` and reported as failures with an
explanation.  ``CheckResult.passed`` still includes them; callers decide
whether a known limitation counts toward an exit status.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .ibp import (
    HalfFunctional,
    boundary_72_many,
    get_functional,
    sigma_mass,
    verify_b4_identity,
    verify_ibp_72_many,
    verify_lemma_b1_many,
    verify_prop_a1_many,
)
from .io import canonical_json
from .mc import McEstimate, batched_map
from .meander import denisov_check
from .measures import mu_covariance, mu_paths
from .reflection import StationaryRun, eps_sweep, stationary_law_compare
from .solver import SolverConfig, coupled_contraction, decay_rates, ensemble_snapshots, solve_path
from .spectral import Field, GridSpec, apply_A, apply_Qbar, h_norm, project_pi, synthesize

KNOWN_LIMITATIONS = {
    "half_sigma_trend_consistent": (
        "the penalized boundary mass approaches its limit only logarithmically slowly in eps; "
        "at eps = 0.03 it is far below the limit by many SE"
    ),
    "contact_rate_magnitude_decreasing": (
        "under the exact penalized invariant law the contact-integral magnitude grows as eps decreases "
        "over 0.3 to 0.01; the solver reproduces that law"
    ),
    "limit_marginals_ks": (
        "at eps = 0.01 the penalized invariant law is still measurably different from the reflected one "
        "(KS distance about 0.03), so KS rejects at a few thousand samples"
    ),
}


@dataclass(frozen=True)
class Scale:
    """Sample sizes for one run of the suite."""

    name: str
    cov_paths: int = 100_000
    cov_grid: int = 513
    conservation_steps: int = 10_000
    contraction_seeds: int = 10
    linear_replicas: int = 10_000
    stationary_replicas: int = 2000
    denisov_samples: int = 100_000
    a1_samples: int = 1_000_000
    cone_samples: int = 1_000_000
    half_samples: int = 500_000
    sigma_samples: int = 500_000
    sweep_replicas: int = 2000
    n_reference: int = 20_000


FULL = Scale("full")
FAST = Scale(
    "fast",
    cov_paths=20_000,
    conservation_steps=10_000,
    contraction_seeds=3,
    linear_replicas=4000,
    stationary_replicas=1000,
    denisov_samples=40_000,
    a1_samples=100_000,
    cone_samples=60_000,
    half_samples=60_000,
    sigma_samples=60_000,
    sweep_replicas=600,
    n_reference=8000,
)
# tiny sizes for determinism comparisons
TINY = Scale(
    "tiny",
    cov_paths=4000,
    cov_grid=129,
    conservation_steps=200,
    contraction_seeds=2,
    linear_replicas=600,
    stationary_replicas=600,
    denisov_samples=4000,
    a1_samples=6000,
    cone_samples=6000,
    half_samples=6000,
    sigma_samples=6000,
    sweep_replicas=300,
    n_reference=2000,
)
SCALES = {s.name: s for s in (FULL, FAST, TINY)}

IBP_GRID = GridSpec(257)
HALF_C = 1.0


@dataclass
class CheckResult:
    key: str
    title: str
    subchecks: dict[str, bool]
    payload: dict
    seconds: float = 0.0
    known: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.subchecks.values())

    @property
    def passed_excluding_known(self) -> bool:
        return all(v for k, v in self.subchecks.items() if k not in self.known)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [k for k, v in self.subchecks.items() if not v]
        extra = ""
        if failed:
            tags = [f"{k}{' (known limitation)' if k in self.known else ''}" for k in failed]
            extra = " failed: " + ", ".join(tags)
        return f"{status} [{self.key}] {self.title} ({self.seconds:.1f}s){extra}"

    def as_dict(self) -> dict:
        return {
            "check": self.key,
            "title": self.title,
            "passed": self.passed,
            "subchecks": self.subchecks,
            "known_limitations": {k: self.known[k] for k in self.subchecks if k in self.known},
            "payload": self.payload,
        }


def _result(key, title, subchecks, payload) -> CheckResult:
    known = {k: KNOWN_LIMITATIONS[k] for k in subchecks if k in KNOWN_LIMITATIONS}
    return CheckResult(key, title, {k: bool(v) for k, v in subchecks.items()}, payload, known=known)


def _unit_field(k: int, n_modes: int = 4) -> Field:
    return Field.basis(k, n_modes)


# ---------------------------------------------------------------- 1


def check_operators(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    """-A Qbar = Pi on every mode; Qbar agrees with quadrature against its kernel."""
    N = 64
    worst = 0.0
    for n in range(N + 1):
        e = Field.basis(n, N)
        worst = max(worst, float(np.max(np.abs(-apply_A(apply_Qbar(e)).coeffs - project_pi(e).coeffs))))
    rng = np.random.default_rng(seed)
    f = Field(rng.standard_normal(9) / (1.0 + np.arange(9)) ** 2)
    coarse = GridSpec(33)
    qf = synthesize(apply_Qbar(f).coeffs, coarse)

    # Qbar f(t) = int (q(t, s) + 1) f(s) ds, split at the kink s = t
    quad = np.array(
        [
            integrate.quad(lambda s, t=t: mu_covariance(t, s) * _eval(f, s), 0.0, 1.0, points=[t], epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            for t in coarse.theta
        ]
    )
    qerr = float(np.max(np.abs(quad - qf)))
    return _result(
        "1",
        "operator identities",
        {"minus_A_Qbar_is_Pi": worst <= 1e-12, "Qbar_vs_kernel": qerr <= 1e-6},
        {"max_mode_error": worst, "max_kernel_quadrature_error": qerr, "n_modes": N},
    )


def _eval(f: Field, s: float) -> float:
    k = np.arange(f.n_modes + 1)
    e = math.sqrt(2.0) * np.cos(np.pi * k * s)
    e[0] = 1.0
    return float(e @ f.coeffs)


# ---------------------------------------------------------------- 2

COV_POINTS = (0.0, 0.1, 0.25, 0.5, 0.8, 1.0)
COV_PAIRS = ((0.0, 0.0), (0.0, 1.0), (0.1, 0.1), (0.1, 0.8), (0.25, 0.5), (0.5, 0.5), (0.5, 1.0), (0.8, 0.8), (1.0, 1.0))


def check_covariance(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    grid = GridSpec(scale.cov_grid)
    idx = [grid.index_of(t) for t in COV_POINTS]

    def fn(rng, n):
        return mu_paths(n, grid, rng)[:, idx]

    X = np.concatenate(batched_map(fn, scale.cov_paths, seed, "covariance", workers=workers))
    X = X - X.mean(axis=0)
    rows, ok = [], []
    for s, t in COV_PAIRS:
        p = X[:, COV_POINTS.index(s)] * X[:, COV_POINTS.index(t)]
        est = McEstimate.from_samples(p)
        exact = float(mu_covariance(s, t))
        z = (est.mean - exact) / est.stderr
        ok.append(abs(z) <= 4.0)
        rows.append({"theta": s, "sigma": t, "empirical": est.mean, "stderr": est.stderr, "exact": exact, "z": z})
    return _result("2", "Gaussian covariances", {"nine_pairs_within_4se": all(ok)}, {"pairs": rows, "n_paths": scale.cov_paths, "m_points": grid.m_points})


# ---------------------------------------------------------------- 3


def check_conservation(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    base = SolverConfig(32, 1.0, 0.1, 0.3, seed=seed)
    cfg = base.with_(T=base.dt * scale.conservation_steps)
    rng = np.random.default_rng(seed)
    a = np.zeros(33)
    a[0] = 0.3
    a[1:9] = 0.4 * rng.standard_normal(8) / np.arange(1, 9)
    traj = solve_path(Field(a), cfg)
    drift0 = float(np.max(np.abs(traj.drift[:, 0])))
    avg_dev = float(np.max(np.abs(traj.coeffs[:, 0] - 0.3)))
    return _result(
        "3",
        "conservation of the average",
        {"average_drift_below_1e-12": drift0 < 1e-12, "average_preserved": avg_dev < 1e-12},
        {"steps": cfg.n_steps, "max_average_drift": drift0, "max_average_deviation": avg_dev, "eta_mass": traj.eta_mass},
    )


# ---------------------------------------------------------------- 4


def check_contraction(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    N, c = 32, 0.3
    x = Field.constant(c, N).coeffs.copy()
    y = x.copy()
    x[1], x[3] = 0.5, -0.2
    y[2], y[5] = -0.4, 0.3
    x, y = Field(x), Field(y)
    cfg = SolverConfig(N, 0.1, 0.1, c, dt=1e-3, seed=seed)
    worst = 0.0
    runs = []
    for r in range(scale.contraction_seeds):
        curve = coupled_contraction(x, y, cfg, seed=seed * 1000 + r)
        ratio = curve.values / curve.reference
        worst = max(worst, float(np.max(ratio)))
        runs.append({"seed": seed * 1000 + r, "max_ratio_to_bound": float(np.max(ratio)), "final_distance": float(curve.values[-1])})
    lin = cfg.with_(eps=math.inf)
    tx = solve_path(x, lin, seed=seed)
    ty = solve_path(y, lin, seed=seed)
    diff0 = x.coeffs - y.coeffs
    lam = decay_rates(N)
    k = np.arange(0, lin.n_steps + 1, max(1, lin.n_steps // 20))
    exact = diff0[None, :] * np.exp(-np.outer(tx.times[k], lam))
    lin_err = float(np.max(np.abs((tx.coeffs[k] - ty.coeffs[k]) - exact)))
    return _result(
        "4",
        "same-noise contraction",
        {"ratio_below_bound": worst <= 1.02, "linear_modewise_rate_exact": lin_err <= 1e-12},
        {"max_ratio_to_bound": worst, "replicas": runs, "linear_max_error": lin_err, "initial_distance": h_norm(Field(diff0))},
    )


# ---------------------------------------------------------------- 5


def check_linear_variance(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    times = (0.001, 0.01, 0.1)
    cfg = SolverConfig(8, 0.1, math.inf, 0.0, dt=1e-4, seed=seed)
    snaps = ensemble_snapshots(Field.constant(0.0, 8), cfg, scale.linear_replicas, seed, "linear-variance", times, workers=workers, snapshot_values=False)
    rows, ok = [], []
    for t, s in zip(times, snaps):
        for n in range(1, 9):
            est = McEstimate.from_samples(s[:, n] ** 2)
            exact = (1.0 - math.exp(-((n * math.pi) ** 4) * t)) / (n * math.pi) ** 2
            z = (est.mean - exact) / est.stderr
            ok.append(abs(z) <= 4.0)
            rows.append({"t": t, "mode": n, "variance": est.mean, "stderr": est.stderr, "exact": exact, "z": z})
    return _result("5", "linear per-mode variance", {"all_modes_within_4se": all(ok)}, {"rows": rows, "replicas": scale.linear_replicas})


# ---------------------------------------------------------------- 6


def check_invariance(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    run = StationaryRun(n_replicas=scale.stationary_replicas)
    res = stationary_law_compare(1.0, 0.1, run, seed, reference="nu_c_eps", n_reference=scale.n_reference, workers=workers)
    return _result("6", "penalized invariant law", {"ks_all_thetas": res["passed"]}, res)


# ---------------------------------------------------------------- 7


def check_denisov(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    res = denisov_check(scale.denisov_samples, GridSpec(257), seed)
    return _result("7", "minimum-time path decomposition", {"ks_bonferroni": res["passed"]}, {k: v for k, v in res.items() if not k.startswith("_")})


# ---------------------------------------------------------------- 8

A1_FUNCTIONALS = ("mean", "sin-e1", "sin-e1*cos-e2")


def check_absolute_continuity(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    reports = verify_prop_a1_many([get_functional(n) for n in A1_FUNCTIONALS], scale.a1_samples, seed, grid=IBP_GRID, workers=workers)
    return _result("8", "density of mu against the mean-tilted law", {r.name: r.passed for r in reports}, {"reports": [r.as_dict() for r in reports]})


# ---------------------------------------------------------------- 9

CONE_PAIRS = (("one", 0), ("sin-e1", 1), ("bump-e2", 2))


def check_cone_ibp(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    pairs = [(get_functional(p), _unit_field(k)) for p, k in CONE_PAIRS]
    reports = verify_ibp_72_many(pairs, scale.cone_samples, seed, grid=IBP_GRID, workers=workers)
    cheb = boundary_72_many(pairs, scale.cone_samples, seed, IBP_GRID, workers=workers, design="chebyshev")
    sub = {r.name: r.passed for r in reports}
    agree = []
    for r, b in zip(reports, cheb):
        d = r.boundary - b
        sub[f"boundary_designs_agree[{r.name}]"] = abs(d.z) <= 3.0
        agree.append({"identity": r.name, "arcsine": r.boundary.as_dict(), "chebyshev": b.as_dict(), "difference_se_units": d.z})
    return _result("9", "integration by parts on the cone", sub, {"reports": [r.as_dict() for r in reports], "boundary_designs": agree})


# ---------------------------------------------------------------- 10

SIGMA_EPS = (1.0, 0.3, 0.1, 0.03)


def check_half_identities(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    psis = [HalfFunctional("one"), HalfFunctional("sin-quarter")]
    pairs = verify_lemma_b1_many(psis, HALF_C, scale.half_samples, seed, grid=IBP_GRID, workers=workers)
    mass, _ = pairs[0]
    b4 = verify_b4_identity(HalfFunctional("one"), HALF_C, 1.0, scale.half_samples, seed, grid=IBP_GRID, workers=workers)
    S = sigma_mass(HALF_C, SIGMA_EPS, scale.sigma_samples, seed, grid=IBP_GRID, workers=workers)
    limit = pairs[0][1].boundary.scaled(-1.0)
    monotone = all(b.mean >= a.mean for a, b in zip(S, S[1:]))
    gaps = [(s - limit).z for s in S]
    sub = {
        "half_density_mass_one": mass.passed,
        **{b3.name: b3.passed for _, b3 in pairs},
        "half_ibp_penalized_eps1": b4.passed,
        "half_sigma_monotone_toward_limit": monotone and S[-1].mean <= limit.mean + 3.0 * math.hypot(S[-1].stderr, limit.stderr),
        "half_sigma_trend_consistent": abs(gaps[-1]) <= 3.0,
    }
    payload = {
        "c": HALF_C,
        "density": [a.as_dict() for a, _ in pairs],
        "ibp": [b.as_dict() for _, b in pairs],
        "penalized": b4.as_dict(),
        "sigma_mass": [{"eps": e, **s.as_dict(), "gap_se_units": g} for e, s, g in zip(SIGMA_EPS, S, gaps)],
        "sigma_limit": limit.as_dict(),
    }
    return _result("10", "half-interval identities", sub, payload)


# ---------------------------------------------------------------- 11

SWEEP_EPS = (0.3, 0.1, 0.03, 0.01)


def check_eps_sweep(scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    run = StationaryRun(n_replicas=scale.sweep_replicas)
    res, data = eps_sweep(1.0, SWEEP_EPS, run, seed, workers=workers, compare_limit=False, keep_data=True)
    cmp = stationary_law_compare(1.0, SWEEP_EPS[-1], run, seed, reference="nu_c", n_reference=scale.n_reference, data=data[-1])
    checks = res.checks()
    sub = {
        "contact_rate_nonpositive": checks["contact_rate_nonpositive"],
        "contact_rate_magnitude_decreasing": checks["contact_rate_magnitude_decreasing"],
        "eta_mass_bounded": checks["eta_mass_bounded"],
        "limit_marginals_ks": cmp["passed"],
    }
    return _result("11", "penalization sweep", sub, {"sweep": res.as_dict(), "limit_compare": cmp})


# ---------------------------------------------------------------- registry

CHECKS = {
    "operators": check_operators,
    "covariance": check_covariance,
    "conservation": check_conservation,
    "contraction": check_contraction,
    "linear-variance": check_linear_variance,
    "invariance": check_invariance,
    "denisov": check_denisov,
    "absolute-continuity": check_absolute_continuity,
    "cone-ibp": check_cone_ibp,
    "half-identities": check_half_identities,
    "eps-sweep": check_eps_sweep,
}
# checks whose randomness is spread over workers
PARALLEL_CHECKS = ("covariance", "linear-variance", "invariance", "absolute-continuity", "cone-ibp", "half-identities")


def run_check(name: str, scale: Scale = FULL, seed: int = 0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    res = CHECKS[name](scale, seed, workers)
    res.seconds = time.perf_counter() - t0
    return res


def check_determinism(scale: Scale = TINY, seed: int = 0, worker_counts=(1, 3), names=PARALLEL_CHECKS) -> CheckResult:
    """Rerun checks with different worker counts and compare payload bytes."""
    same = {}
    digests = {}
    for name in names:
        texts = [canonical_json(CHECKS[name](scale, seed, w).as_dict()) for w in worker_counts]
        same[name] = all(t == texts[0] for t in texts)
        digests[name] = len(texts[0])
    return _result("12", "determinism across worker counts", same, {"worker_counts": list(worker_counts), "payload_bytes": digests})
