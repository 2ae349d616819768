"""Small-eps behaviour of the penalized dynamics.

Stationary statistics come from ensembles of independent replicas started
at the constant profile c, run through a burn-in of many relaxation times
2 / pi^4 and then sampled at spaced snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mc import KsResult, McEstimate, batched_map, ks_two_sample, make_rng
from .measures import nu_c_eps_paths, nu_c_paths, penalty_f
from .solver import (
    HIST_EDGES,
    RELAXATION_TIME,
    SolverConfig,
    Trajectory,
    _analysis_matrix,
    decay_rates,
    max_stable_dt,
    simulate_ensemble,
)
from .spectral import Field, mode_numbers


@dataclass(frozen=True)
class StationaryRun:
    """Ensemble settings for stationary statistics."""

    n_modes: int = 64
    n_replicas: int = 2000
    burn_in: float = 10 * RELAXATION_TIME
    n_snapshots: int = 5
    snapshot_every: float = 5 * RELAXATION_TIME
    dt_cap: float = 1e-3
    guard_fraction: float = 0.8
    batch: int = 500
    kind: str = "negative_part"

    def config(self, c: float, eps: float, seed: int = 0) -> SolverConfig:
        dt = min(self.dt_cap, self.guard_fraction * max_stable_dt(self.n_modes, eps))
        T = self.burn_in + (self.n_snapshots - 1) * self.snapshot_every
        return SolverConfig(self.n_modes, T, eps, c, dt=dt, seed=seed, kind=self.kind)

    @property
    def snapshot_times(self) -> list[float]:
        return [self.burn_in + j * self.snapshot_every for j in range(self.n_snapshots)]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _weighted_quantile(hist: np.ndarray, edges: np.ndarray, q: float) -> float:
    total = hist.sum()
    if total <= 0:
        return float("nan")
    cdf = np.concatenate([[0.0], np.cumsum(hist)]) / total
    return float(np.interp(q, cdf, edges))


@dataclass
class StationaryData:
    eps: float
    cfg: SolverConfig
    samples: np.ndarray  # (n_snapshots, replicas, m_points)
    eta_mass_rate: McEstimate
    contact_rate: McEstimate
    negative_fraction: McEstimate
    weighted_hist: np.ndarray
    snapshot_lag_correlation: float

    def marginal(self, theta: float, thin: int = 1) -> np.ndarray:
        i = self.cfg.grid.index_of(theta)
        return self.samples[::thin, :, i].ravel()

    def weighted_abs_u_quantile(self, q: float) -> float:
        return _weighted_quantile(self.weighted_hist, HIST_EDGES, q)


def stationary_ensemble(c: float, eps: float, run: StationaryRun, seed: int, workers: int = 1) -> StationaryData:
    cfg = run.config(c, eps, seed)
    x0 = Field.constant(c, cfg.n_modes)
    window = cfg.n_steps * cfg.dt - run.burn_in

    def fn(rng, n):
        return simulate_ensemble(x0, cfg, n, rng, run.snapshot_times, stats_from=run.burn_in)

    parts = batched_map(fn, run.n_replicas, seed, f"stationary-{eps!r}", batch_size=run.batch, workers=workers)
    samples = np.stack([np.concatenate([p[0][j] for p in parts]) for j in range(run.n_snapshots)])
    acc = {k: np.concatenate([p[1][k] for p in parts]) for k in ("eta_mass", "contact", "negative_steps")}
    hist = np.sum([p[1]["hist"] for p in parts], axis=0)
    steps = max(1, int(round(window / cfg.dt)))
    a1 = samples @ _analysis_matrix(cfg.m_points, 1)[:, 1]
    lag = float(np.mean([np.corrcoef(a1[j], a1[j + 1])[0, 1] for j in range(run.n_snapshots - 1)])) if run.n_snapshots > 1 else 0.0
    return StationaryData(
        eps,
        cfg,
        samples,
        McEstimate.from_samples(acc["eta_mass"] / window),
        McEstimate.from_samples(acc["contact"] / window),
        McEstimate.from_samples(acc["negative_steps"] / steps),
        hist,
        lag,
    )


def _thinning(data: StationaryData, max_corr: float = 0.2) -> int:
    thin = 1
    rho = abs(data.snapshot_lag_correlation)
    while rho > max_corr and thin < data.samples.shape[0]:
        thin += 1
        rho *= abs(data.snapshot_lag_correlation)
    return thin


def stationary_law_compare(
    c: float,
    eps: float,
    run: StationaryRun,
    seed: int,
    reference: str = "nu_c_eps",
    thetas=(0.25, 0.5, 0.75),
    n_reference: int = 20_000,
    alpha: float = 0.01,
    min_samples: int = 500,
    workers: int = 1,
    data: StationaryData | None = None,
) -> dict:
    """Two-sample KS between long-run solver marginals and an exact sampler."""
    data = data or stationary_ensemble(c, eps, run, seed, workers)
    grid = data.cfg.grid
    rng = make_rng(seed, "stationary-reference", reference, repr(eps))
    if reference == "nu_c_eps":
        ref, rep = nu_c_eps_paths(n_reference, c, eps, grid, rng, kind=run.kind)
    elif reference == "nu_c":
        ref, rep = nu_c_paths(n_reference, c, grid, rng)
    else:
        raise ValueError(f"unknown reference {reference!r}")
    thin = _thinning(data)
    n_eff = data.samples[::thin].shape[0] * data.samples.shape[1]
    if n_eff < min_samples:
        raise ValueError(
            f"only {n_eff} effectively independent samples (lag correlation {data.snapshot_lag_correlation:.2f}); "
            "add replicas or snapshots"
        )
    tests: list[KsResult] = []
    for th in thetas:
        tests.append(ks_two_sample(data.marginal(th, thin), ref[:, grid.index_of(th)], f"theta={th}"))
    return {
        "eps": eps,
        "c": c,
        "reference": reference,
        "reference_acceptance": rep.acceptance_rate,
        "n_solver_samples": n_eff,
        "thinning": thin,
        "snapshot_lag_correlation": data.snapshot_lag_correlation,
        "alpha": alpha,
        "tests": [t.as_dict() | {"passed": t.passed(alpha)} for t in tests],
        "max_ks_statistic": max(t.statistic for t in tests),
        "passed": all(t.passed(alpha) for t in tests),
        "config": data.cfg.as_dict(),
    }


# ---------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    c: float
    eps: list[float]
    eta_mass_rate: list[McEstimate] = field(default_factory=list)
    contact_rate: list[McEstimate] = field(default_factory=list)
    negative_fraction: list[McEstimate] = field(default_factory=list)
    abs_u_q90: list[float] = field(default_factory=list)
    marginals: list[dict] = field(default_factory=list)
    min_value_hist: list[list[int]] = field(default_factory=list)
    min_value_edges: list[float] = field(default_factory=list)
    limit_gap: list[dict] = field(default_factory=list)

    def checks(self) -> dict:
        """Trend checks along decreasing eps (the list is sorted that way)."""
        contact_nonpos = all(m.mean <= 0.0 for m in self.contact_rate)
        # magnitude must not increase beyond 2 combined SE between consecutive eps
        dec = []
        for a, b in zip(self.contact_rate, self.contact_rate[1:]):
            diff = abs(b.mean) - abs(a.mean)
            dec.append(diff <= 2.0 * math.hypot(a.stderr, b.stderr))
        slopes = eta_loglog_slopes(self.eps, self.eta_mass_rate)
        neg = [f.mean for f in self.negative_fraction]
        return {
            "contact_rate_nonpositive": contact_nonpos,
            "contact_rate_magnitude_decreasing": all(dec),
            "eta_mass_loglog_slopes": slopes,
            "eta_mass_bounded": bool(slopes) and max(slopes) < 1.0 and slopes[-1] <= slopes[0],
            "negative_fraction_decreasing": all(b <= a for a, b in zip(neg, neg[1:])),
            "abs_u_q90_decreasing": all(b <= a for a, b in zip(self.abs_u_q90, self.abs_u_q90[1:])),
        }

    def as_dict(self) -> dict:
        return {
            "c": self.c,
            "eps": self.eps,
            "eta_mass_rate": [m.as_dict() for m in self.eta_mass_rate],
            "contact_rate": [m.as_dict() for m in self.contact_rate],
            "negative_fraction": [m.as_dict() for m in self.negative_fraction],
            "eta_weighted_abs_u_q90": self.abs_u_q90,
            "marginals": self.marginals,
            "min_value_hist": self.min_value_hist,
            "min_value_edges": self.min_value_edges,
            "limit_gap": self.limit_gap,
            "checks": self.checks(),
        }

    def table(self) -> list[dict]:
        rows = []
        for i, e in enumerate(self.eps):
            rows.append(
                {
                    "eps": e,
                    "eta_mass_rate": self.eta_mass_rate[i].mean,
                    "eta_mass_rate_se": self.eta_mass_rate[i].stderr,
                    "contact_rate": self.contact_rate[i].mean,
                    "contact_rate_se": self.contact_rate[i].stderr,
                    "negative_fraction": self.negative_fraction[i].mean,
                    "abs_u_q90": self.abs_u_q90[i],
                }
            )
        return rows


def eta_loglog_slopes(eps, rates) -> list[float]:
    """-d log(rate) / d log(eps) between consecutive sweep points; 1 would mean a 1/eps blow-up."""
    out = []
    for (e1, m1), (e2, m2) in zip(zip(eps, rates), zip(eps[1:], rates[1:])):
        if m1.mean > 0 and m2.mean > 0:
            out.append(-math.log(m2.mean / m1.mean) / math.log(e2 / e1))
    return out


MIN_EDGES = np.linspace(-1.0, 2.0, 61)


def eps_sweep(
    c: float,
    eps_list,
    run: StationaryRun,
    seed: int,
    thetas=(0.25, 0.5, 0.75),
    workers: int = 1,
    compare_limit: bool = True,
    n_reference: int = 20_000,
    keep_data: bool = False,
):
    """Stationary penalty statistics for each eps, sorted from large to small."""
    if not c > 0:
        raise ValueError("c must be positive")
    eps_sorted = sorted((float(e) for e in eps_list), reverse=True)
    res = SweepResult(c, eps_sorted, min_value_edges=MIN_EDGES.tolist())
    data_all = []
    ref = None
    if compare_limit:
        grid = run.config(c, eps_sorted[-1]).grid
        ref, _ = nu_c_paths(n_reference, c, grid, make_rng(seed, "sweep-limit"))
    for e in eps_sorted:
        d = stationary_ensemble(c, e, run, seed, workers)
        res.eta_mass_rate.append(d.eta_mass_rate)
        res.contact_rate.append(d.contact_rate)
        res.negative_fraction.append(d.negative_fraction)
        res.abs_u_q90.append(d.weighted_abs_u_quantile(0.9))
        marg = {}
        for th in thetas:
            x = d.marginal(th)
            marg[str(th)] = {"mean": float(x.mean()), "sd": float(x.std(ddof=1)), "q05": float(np.quantile(x, 0.05)), "q50": float(np.median(x))}
        res.marginals.append(marg)
        res.min_value_hist.append(np.histogram(d.samples.min(axis=2).ravel(), bins=MIN_EDGES)[0].tolist())
        if ref is not None:
            g = d.cfg.grid
            res.limit_gap.append({str(th): ks_two_sample(d.marginal(th), ref[:, g.index_of(th)]).statistic for th in thetas})
        if keep_data:
            data_all.append(d)
    return (res, data_all) if keep_data else res


# ---------------------------------------------------------------- single-trajectory diagnostics


def weak_form_residual(traj: Trajectory, h: Field, delta: float, t: float) -> float:
    """Residual of the weak formulation on [delta, t] along a stored trajectory.

    <u_t - u_delta, h> + 1/2 int <u_s, A^2 h> ds + 1/2 int int A h deta - int <h', dW>,
    with the time integral of the state taken exactly over each step (frozen
    penalty) and the penalty measure integrated by the trapezoid rule in
    time.  The linear part is exact, so the residual measures only the time
    quadrature of the penalty, which is O(dt).
    """
    N = traj.n_modes
    if h.n_modes > N and np.any(h.coeffs[N + 1 :] != 0.0):
        raise ValueError("h has modes the trajectory does not resolve")
    hc = np.zeros(N + 1)
    k = min(N, h.n_modes)
    hc[: k + 1] = h.coeffs[: k + 1]
    i0, i1 = traj.index_of_time(delta), traj.index_of_time(t)
    if not i0 < i1:
        raise ValueError("need delta < t")
    dt = traj.cfg.dt
    lam = decay_rates(N)
    kpi = mode_numbers(N) * np.pi
    da = traj.coeffs[i1] - traj.coeffs[i0]
    S = traj.state_integrals[i0:i1].sum(axis=0)
    D = 0.5 * dt * (traj.drift[i0:i1] + traj.drift[i0 + 1 : i1 + 1]).sum(axis=0)
    dW = traj.noise.dW[i0:i1].sum(axis=0)
    per_mode = da + lam * S - D - kpi * dW
    return float(hc @ per_mode)


def contact_support_check(traj: Trajectory, quantiles=(0.5, 0.9)) -> dict:
    """eta-weighted distribution of u: where the penalty measure puts its mass."""
    K = traj.times.size - 1
    u = traj.values()[:K]
    if not traj.cfg.penalized:
        return {"total_weight": 0.0, "all_negative": True, "quantiles_abs_u": {}, "hist": [], "edges": []}
    f = penalty_f(u, traj.cfg.kind)
    w = traj.cfg.dt / traj.cfg.eps * f * traj.cfg.grid.weights
    mask = w > 0
    vals = -u[mask]
    wts = w[mask]
    hist = np.histogram(vals, bins=HIST_EDGES, weights=wts)[0] if vals.size else np.zeros(HIST_EDGES.size - 1)
    q = {}
    if vals.size:
        order = np.argsort(vals)
        cdf = np.cumsum(wts[order]) / wts.sum()
        q = {str(p): float(vals[order][np.searchsorted(cdf, p)]) for p in quantiles}
    return {
        "total_weight": float(wts.sum()),
        "all_negative": bool(np.all(u[mask] < 0.0)),
        "quantiles_abs_u": q,
        "hist": hist.tolist(),
        "edges": HIST_EDGES.tolist(),
    }
