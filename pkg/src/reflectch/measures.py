"""Exact samplers for the Gaussian reference laws and their tilted versions.

``mu``      law of Y = B - mean(B) - a, a ~ N(0, 1) independent of B
``mu_c``    law of Y^c = B - mean(B) + c (Gaussian with mean c and kernel q)
``nu_c``    mu_c conditioned to be nonnegative (rejection on grid points)
``nu_c_eps`` the tilt exp(-U_eps) mu_c, sampled by rejection

Batch samplers return ``(n, m_points)`` arrays; the single-path wrappers
return :class:`PathSample` objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Field, GridSpec, kernel_q, synthesize, to_coeffs

DEFAULT_MAX_PROPOSALS = 10_000_000


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class PathSample:
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.m_points,):
            raise ValueError(f"expected {self.grid.m_points} values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def average(self) -> float:
        return float(self.grid.integrate(self.values))

    def to_field(self, n_modes: int) -> Field:
        return to_coeffs(self.values, self.grid, n_modes)


@dataclass(frozen=True)
class PenalizationParams:
    """Penalty strength ``eps`` and the choice of f.

    ``kind="negative_part"`` is f(u) = max(-u, 0).  ``kind="smooth"`` is
    f(u) = v - log(1 + v) with v = max(-u, 0), a C^1 alternative with the same
    sign structure, used for robustness checks.
    """

    eps: float
    kind: str = "negative_part"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.kind not in ("negative_part", "smooth"):
            raise ValueError(f"unknown penalization kind {self.kind!r}")

    def f(self, u):
        return penalty_f(u, self.kind)

    def F(self, u):
        return penalty_F(u, self.kind)


def penalty_f(u, kind: str = "negative_part"):
    v = np.maximum(-np.asarray(u, dtype=float), 0.0)
    if kind == "negative_part":
        return v
    return v - np.log1p(v)


def penalty_F(u, kind: str = "negative_part"):
    """Antiderivative with F' = -f and F = 0 on [0, inf)."""
    v = np.maximum(-np.asarray(u, dtype=float), 0.0)
    if kind == "negative_part":
        return 0.5 * v * v
    return 0.5 * v * v - ((1.0 + v) * np.log1p(v) - v)


@dataclass
class RejectionReport:
    proposals: int = 0
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def as_dict(self) -> dict:
        return {"proposals": self.proposals, "accepted": self.accepted, "acceptance_rate": self.acceptance_rate}


class RejectionBudgetExceeded(RuntimeError):
    def __init__(self, report: RejectionReport, wanted: int, got: int):
        self.report = report
        super().__init__(
            f"accepted {got}/{wanted} paths after {report.proposals} proposals "
            f"(rate {report.acceptance_rate:.3g}); raise max_proposals or c"
        )


# ---------------------------------------------------------------- Gaussian paths


def brownian_paths(n: int, grid: GridSpec, rng) -> np.ndarray:
    rng = as_rng(rng)
    out = np.empty((n, grid.m_points))
    out[:, 0] = 0.0
    inc = rng.standard_normal((n, grid.m_points - 1))
    inc *= np.sqrt(grid.h)
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def mu_paths(n: int, grid: GridSpec, rng) -> np.ndarray:
    rng = as_rng(rng)
    B = brownian_paths(n, grid, rng)
    a = rng.standard_normal(n)
    B -= (grid.integrate(B) + a)[:, None]
    return B


def mu_c_paths(n: int, c: float, grid: GridSpec, rng) -> np.ndarray:
    B = brownian_paths(n, grid, rng)
    B += (c - grid.integrate(B))[:, None]
    return B


def _rejection(n, propose, accept_mask, rng, max_proposals, chunk):
    rng = as_rng(rng)
    report = RejectionReport()
    kept = []
    have = 0
    while have < n:
        if report.proposals >= max_proposals:
            raise RejectionBudgetExceeded(report, n, have)
        size = int(min(chunk, max_proposals - report.proposals))
        paths = propose(size, rng)
        ok = accept_mask(paths, rng)
        report.proposals += size
        # every acceptance is counted so the reported rate is unbiased
        report.accepted += int(ok.sum())
        good = paths[ok][: n - have]
        kept.append(good)
        have += good.shape[0]
    return np.concatenate(kept, axis=0), report


def nu_c_paths(
    n: int, c: float, grid: GridSpec, rng, max_proposals: int = DEFAULT_MAX_PROPOSALS, chunk: int = 20_000
):
    """mu_c conditioned on nonnegativity at every grid point."""
    if not c > 0:
        raise ValueError("nu_c needs c > 0")
    return _rejection(
        n,
        lambda k, g: mu_c_paths(k, c, grid, g),
        lambda p, g: p.min(axis=1) >= 0.0,
        rng,
        max_proposals,
        chunk,
    )


def u_eps_values(values: np.ndarray, params: PenalizationParams, grid: GridSpec) -> np.ndarray:
    """U_eps = (1/eps) * trapezoid of F(x) for path values along the last axis."""
    return grid.integrate(params.F(values)) / params.eps


def u_eps(x, params: PenalizationParams, grid: GridSpec | None = None):
    if isinstance(x, PathSample):
        return float(u_eps_values(x.values, params, x.grid))
    if isinstance(x, Field):
        grid = grid or GridSpec.for_modes(x.n_modes)
        return float(u_eps_values(synthesize(x.coeffs, grid), params, grid))
    if grid is None:
        raise ValueError("raw value arrays need a grid")
    return u_eps_values(np.asarray(x, dtype=float), params, grid)


def nu_c_eps_paths(
    n: int,
    c: float,
    eps: float,
    grid: GridSpec,
    rng,
    max_proposals: int = DEFAULT_MAX_PROPOSALS,
    chunk: int = 20_000,
    kind: str = "negative_part",
):
    """Propose from mu_c and accept with probability exp(-U_eps)."""
    if not c > 0:
        raise ValueError("nu_c^eps needs c > 0")
    params = PenalizationParams(eps, kind)

    def accept(p, g):
        return g.random(p.shape[0]) < np.exp(-u_eps_values(p, params, grid))

    return _rejection(n, lambda k, g: mu_c_paths(k, c, grid, g), accept, rng, max_proposals, chunk)


# ---------------------------------------------------------------- single-path API


def sample_brownian(grid: GridSpec, seed=None) -> PathSample:
    return PathSample(brownian_paths(1, grid, seed)[0], grid)


def sample_mu(grid: GridSpec, seed=None) -> PathSample:
    return PathSample(mu_paths(1, grid, seed)[0], grid)


def sample_mu_c(c: float, grid: GridSpec, seed=None) -> PathSample:
    return PathSample(mu_c_paths(1, c, grid, seed)[0], grid)


def sample_nu_c(c: float, grid: GridSpec, seed=None, max_proposals: int = DEFAULT_MAX_PROPOSALS):
    paths, report = nu_c_paths(1, c, grid, seed, max_proposals, chunk=min(4096, max_proposals))
    return PathSample(paths[0], grid), report


def sample_nu_c_eps(c: float, eps: float, grid: GridSpec, seed=None, max_proposals: int = DEFAULT_MAX_PROPOSALS):
    paths, report = nu_c_eps_paths(1, c, eps, grid, seed, max_proposals, chunk=min(4096, max_proposals))
    return PathSample(paths[0], grid), report


# ---------------------------------------------------------------- reference values


def prob_sup_abs_bm_below(a: float, terms: int = 50) -> float:
    """P(sup_{[0,1]} |B| < a) from the reflection series."""
    k = np.arange(terms)
    s = (-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * np.pi**2 / (8.0 * a * a))
    return float(4.0 / np.pi * s.sum())


def mu_covariance(theta, sigma):
    """Covariance q + 1 of mu."""
    return kernel_q(theta, sigma) + 1.0
