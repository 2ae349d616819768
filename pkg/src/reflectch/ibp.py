"""Monte Carlo checks of the absolute-continuity and integration-by-parts identities.

Every identity is written as ``lhs = bulk + boundary`` (two-term identities
use ``boundary = 0``) and each term is estimated from its own independent
random stream, so the residual's standard error is the quadrature sum of
the three.  Nonnegativity events are evaluated with the Brownian-bridge
survival weight prod_i (1 - exp(-2 y_i y_{i+1} / h)), which is the exact
conditional probability that the continuous path stays nonnegative given
its grid values.  Checking the grid values only biases the estimate by
O(sqrt(h)), which is visible at 10^6 samples; ``indicator="grid"`` keeps that
variant for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mc import McEstimate, Moments, batched_map
from .meander import arcsine_samples, composite_paths, trapezoid_with_kink
from .measures import as_rng, brownian_paths, mu_c_paths, mu_paths, penalty_F, penalty_f
from .spectral import Field, GridSpec, apply_A, l2_inner, synthesize

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_GRID = GridSpec(257)
B_VAR = 4.0


# ---------------------------------------------------------------- functionals


_OUTER = {
    # name: (value(y), gradient(y)) with y of shape (n, k)
    "one": (lambda y: np.ones(y.shape[0]), lambda y: np.zeros_like(y)),
    "linear": (lambda y: y[:, 0], lambda y: np.ones_like(y)),
    "sin": (lambda y: np.sin(y[:, 0]), lambda y: np.cos(y)),
    "cos": (lambda y: np.cos(y[:, 0]), lambda y: -np.sin(y)),
    "bump": (
        lambda y: np.exp(-0.5 * np.sum(y * y, axis=1)),
        lambda y: -y * np.exp(-0.5 * np.sum(y * y, axis=1))[:, None],
    ),
    "sincos": (
        lambda y: np.sin(y[:, 0]) * np.cos(y[:, 1]),
        lambda y: np.stack([np.cos(y[:, 0]) * np.cos(y[:, 1]), -np.sin(y[:, 0]) * np.sin(y[:, 1])], axis=1),
    ),
}


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    """Phi(x) = outer(<x, g_1>, ..., <x, g_k>) with cosine-sum directions g_j."""

    outer: str
    directions: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.outer not in _OUTER:
            raise ValueError(f"unknown outer function {self.outer!r}")
        need = {"one": 0, "sincos": 2}.get(self.outer)
        if need is not None and len(self.directions) != need:
            raise ValueError(f"{self.outer!r} takes {need} directions")
        if need is None and len(self.directions) < 1:
            raise ValueError(f"{self.outer!r} needs at least one direction")

    def _gvals(self, theta: np.ndarray) -> np.ndarray:
        if not self.directions:
            return np.zeros((theta.size, 0))
        n = max(g.n_modes for g in self.directions)
        G = np.stack([g.padded(n).coeffs for g in self.directions])
        k = np.arange(n + 1)
        E = math.sqrt(2.0) * np.cos(np.pi * np.outer(theta, k))
        E[:, 0] = 1.0
        return E @ G.T

    def projections(self, values: np.ndarray, grid: GridSpec, r=None) -> np.ndarray:
        """<x, g_j> by trapezoid; with ``r`` the node at the zero r is added."""
        values = np.atleast_2d(values)
        G = self._gvals(grid.theta)
        if G.shape[1] == 0:
            return np.zeros((values.shape[0], 0))
        if r is None:
            return values @ (grid.weights[:, None] * G)
        return np.stack([trapezoid_with_kink(values, grid.theta, r, G[:, j]) for j in range(G.shape[1])], axis=1)

    def __call__(self, values: np.ndarray, grid: GridSpec, r=None) -> np.ndarray:
        return _OUTER[self.outer][0](self.projections(values, grid, r))

    def directional_derivative(self, h: Field, values: np.ndarray, grid: GridSpec) -> np.ndarray:
        """sum_j d_j outer(<x, g>) <h, g_j>."""
        y = self.projections(values, grid)
        if y.shape[1] == 0:
            return np.zeros(y.shape[0])
        hg = np.array([l2_inner(h, g) for g in self.directions])
        return _OUTER[self.outer][1](y) @ hg


def get_functional(name: str) -> CylindricalFunctional:
    """Library: one, mean, sin-e1, cos-e1, bump-e2, bump-e1, sin-e1*cos-e2."""
    e = lambda n: Field.basis(n, max(n, 1))
    table = {
        "one": ("one", ()),
        "mean": ("linear", (e(0),)),
        "sin-e1": ("sin", (e(1),)),
        "cos-e1": ("cos", (e(1),)),
        "bump-e1": ("bump", (e(1),)),
        "bump-e2": ("bump", (e(2),)),
        "sin-e1*cos-e2": ("sincos", (e(1), e(2))),
    }
    if name not in table:
        raise ValueError(f"unknown functional {name!r}; choose from {sorted(table)}")
    outer, dirs = table[name]
    return CylindricalFunctional(outer, dirs, name)


def directional_derivative(phi: CylindricalFunctional, h: Field, x) -> float | np.ndarray:
    """Closed-form derivative of ``phi`` along ``h`` at a PathSample or (values, grid)."""
    if hasattr(x, "values") and hasattr(x, "grid"):
        return float(phi.directional_derivative(h, x.values[None, :], x.grid)[0])
    values, grid = x
    return phi.directional_derivative(h, values, grid)


def finite_difference(phi: CylindricalFunctional, h: Field, values: np.ndarray, grid: GridSpec, t: float = 1e-5) -> np.ndarray:
    hv = synthesize(h.coeffs, grid)
    return (phi(values + t * hv, grid) - phi(values - t * hv, grid)) / (2.0 * t)


@dataclass(frozen=True)
class HalfFunctional:
    """Psi on paths over [0, 1/2] and its derivative along the indicator of [0, 1/2]."""

    name: str

    def __post_init__(self):
        if self.name not in ("one", "sin-quarter", "cos-gamma"):
            raise ValueError(f"unknown half-path functional {self.name!r}")

    def value(self, half: np.ndarray, theta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        if self.name == "one":
            return np.ones(half.shape[0])
        if self.name == "sin-quarter":
            return np.sin(half[:, _index(theta, 0.25)])
        return np.cos(gamma)

    def shift_derivative(self, half: np.ndarray, theta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        if self.name == "one":
            return np.zeros(half.shape[0])
        if self.name == "sin-quarter":
            return np.cos(half[:, _index(theta, 0.25)])
        return -np.sin(gamma)  # d gamma along the indicator is 1


def _index(theta: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(theta - t)))
    if abs(theta[i] - t) > 1e-12:
        raise ValueError(f"grid has no node at {t}")
    return i


# ---------------------------------------------------------------- weights


def weight_rho(mean) -> float | np.ndarray:
    """Standard normal density of the time average."""
    out = np.exp(-0.5 * np.asarray(mean, dtype=float) ** 2) / SQRT_2PI
    return float(out) if np.ndim(out) == 0 else out


def survival_weight(values: np.ndarray, h: float, indicator: str = "bridge") -> np.ndarray:
    """P(path >= 0 on the whole interval | grid values) for unit-diffusion paths."""
    ok = values.min(axis=1) >= 0.0
    if indicator == "grid":
        return ok.astype(float)
    if indicator != "bridge":
        raise ValueError(f"unknown indicator {indicator!r}")
    v = np.maximum(values, 0.0)
    w = np.prod(-np.expm1(-2.0 * v[:, :-1] * v[:, 1:] / h), axis=1)
    return np.where(ok, w, 0.0)


# ---------------------------------------------------------------- reports


@dataclass
class IbpReport:
    """Terms of ``lhs = bulk + boundary``; ``boundary`` carries its sign."""

    name: str
    lhs: McEstimate
    bulk: McEstimate
    boundary: McEstimate
    threshold: float = 3.0
    details: dict = field(default_factory=dict)

    @property
    def residual(self) -> McEstimate:
        return self.lhs - (self.bulk + self.boundary)

    @property
    def z(self) -> float:
        return self.residual.z

    @property
    def passed(self) -> bool:
        return abs(self.z) <= self.threshold

    def as_dict(self) -> dict:
        return {
            "identity": self.name,
            "lhs": self.lhs.as_dict(),
            "bulk": self.bulk.as_dict(),
            "boundary": self.boundary.as_dict(),
            "residual": self.residual.as_dict(),
            "residual_se_units": self.z,
            "threshold_se": self.threshold,
            "passed": self.passed,
            "details": self.details,
        }


def _estimates(fn, n: int, root: int, name: str, batch: int, workers: int) -> list[McEstimate]:
    """Batched means of the columns returned by ``fn(rng, n)``."""
    acc = Moments()
    for part in batched_map(fn, n, root, name, batch_size=batch, workers=workers):
        part = np.asarray(part, dtype=float)
        acc.add(part[:, None] if part.ndim == 1 else part)
    return acc.estimates()


def _gaussian_b_paths(n: int, grid: GridSpec, rng, n_points: int | None = None):
    """(b + B on the first ``n_points`` grid nodes, b, w) with b ~ N(0, B_VAR).

    The identities average over b ~ N(0, 4/3) against weights growing like
    exp(3 b^2 / 8), whose fourth moment is infinite, so plain sample standard
    errors are unreliable.  Drawing b from the wider N(0, B_VAR) and carrying
    the likelihood ratio ``w`` to N(0, 4/3) estimates the same expectation
    with finite higher moments.
    """
    B = brownian_paths(n, grid, rng)
    if n_points is not None:
        B = B[:, :n_points]
    b = math.sqrt(B_VAR) * rng.standard_normal(n)
    w = math.sqrt(B_VAR / (4.0 / 3.0)) * np.exp(-0.375 * b * b + 0.5 * b * b / B_VAR)
    return B + b[:, None], b, w


# ---------------------------------------------------------------- identities on [0, 1]


def verify_prop_a1_many(
    phis,
    n_samples: int,
    seed: int,
    grid: GridSpec = DEFAULT_GRID,
    batch: int = 20_000,
    workers: int = 1,
    threshold: float = 3.0,
) -> list[IbpReport]:
    """E Phi(Y) against sqrt(4/3) E[Phi(b + B) exp(-(b + mean B)^2 / 2 + 3 b^2 / 8)].

    All functionals share the two sample streams; within one identity the
    two sides remain independent.
    """
    phis = list(phis)

    def lhs(rng, n):
        Y = mu_paths(n, grid, rng)
        return np.stack([phi(Y, grid) for phi in phis], axis=1)

    def rhs(rng, n):
        X, b, lr = _gaussian_b_paths(n, grid, rng)
        w = lr * math.sqrt(4.0 / 3.0) * np.exp(-0.5 * grid.integrate(X) ** 2 + 0.375 * b * b)
        return np.stack([phi(X, grid) * w for phi in phis], axis=1)

    L = _estimates(lhs, n_samples, seed, "a1-lhs", batch, workers)
    R = _estimates(rhs, n_samples, seed, "a1-rhs", batch, workers)
    details = {"n_samples": n_samples, "m_points": grid.m_points, "b_proposal_variance": B_VAR}
    return [
        IbpReport(f"absolute-continuity[{phi.name}]", l, r, McEstimate.exact(0.0), threshold, dict(details))
        for phi, l, r in zip(phis, L, R)
    ]


def verify_prop_a1(phi: CylindricalFunctional, n_samples: int, seed: int, **kw) -> IbpReport:
    return verify_prop_a1_many([phi], n_samples, seed, **kw)[0]


def _synth_at(h: Field, r: np.ndarray) -> np.ndarray:
    k = np.arange(h.n_modes + 1)
    E = math.sqrt(2.0) * np.cos(np.pi * np.outer(r, k))
    E[:, 0] = 1.0
    return E @ h.coeffs


def verify_ibp_72_many(
    pairs,
    n_samples: int,
    seed: int,
    grid: GridSpec = DEFAULT_GRID,
    batch: int = 20_000,
    workers: int = 1,
    threshold: float = 3.0,
    indicator: str = "bridge",
    boundary_design: str = "arcsine",
    n_nodes: int = 32,
) -> list[IbpReport]:
    """Integration by parts for the law of Y on the nonnegative cone, for (Phi, h) pairs.

    lhs      = E[d_h Phi(Y) 1_K(Y)]
    bulk     = -E[(<Y, h''> - mean(Y) mean(h)) Phi(Y) 1_K(Y)]
    boundary = -int_0^1 h(r) (2 pi^3 r (1 - r))^{-1/2} E[Phi(U_r) exp(-mean(U_r)^2 / 2)] dr

    ``boundary_design="arcsine"`` samples r from the arcsine law;
    ``"chebyshev"`` uses Gauss-Chebyshev nodes in r with Monte Carlo inside.
    Each report also carries the residual with the grid-only indicator.
    """
    pairs = list(pairs)
    h2 = [synthesize(apply_A(h).coeffs, grid) for _, h in pairs]

    def lhs(rng, n):
        Y = mu_paths(n, grid, rng)
        kb, kg = survival_weight(Y, grid.h, indicator), survival_weight(Y, grid.h, "grid")
        cols = []
        for phi, h in pairs:
            d = phi.directional_derivative(h, Y, grid)
            cols += [d * kb, d * kg]
        return np.stack(cols, axis=1)

    def bulk(rng, n):
        Y = mu_paths(n, grid, rng)
        kb, kg = survival_weight(Y, grid.h, indicator), survival_weight(Y, grid.h, "grid")
        ybar = grid.integrate(Y)
        cols = []
        for (phi, h), g2 in zip(pairs, h2):
            t = -(Y @ (grid.weights * g2) - ybar * h.average) * phi(Y, grid)
            cols += [t * kb, t * kg]
        return np.stack(cols, axis=1)

    L = _estimates(lhs, n_samples, seed, "72-lhs", batch, workers)
    B = _estimates(bulk, n_samples, seed, "72-bulk", batch, workers)
    D = boundary_72_many(pairs, n_samples, seed, grid, batch, workers, boundary_design, n_nodes)
    out = []
    for j, (phi, h) in enumerate(pairs):
        details = {
            "n_samples": n_samples,
            "m_points": grid.m_points,
            "indicator": indicator,
            "boundary_design": boundary_design,
            "h": h.coeffs.tolist(),
            "grid_indicator": {
                "lhs": L[2 * j + 1].as_dict(),
                "bulk": B[2 * j + 1].as_dict(),
                "residual": (L[2 * j + 1] - (B[2 * j + 1] + D[j])).as_dict(),
            },
        }
        out.append(IbpReport(f"ibp-cone[{phi.name}]", L[2 * j], B[2 * j], D[j], threshold, details))
    return out


def verify_ibp_72(phi: CylindricalFunctional, h: Field, n_samples: int, seed: int, **kw) -> IbpReport:
    return verify_ibp_72_many([(phi, h)], n_samples, seed, **kw)[0]


def boundary_72_many(
    pairs,
    n_samples: int,
    seed: int,
    grid: GridSpec = DEFAULT_GRID,
    batch: int = 20_000,
    workers: int = 1,
    design: str = "arcsine",
    n_nodes: int = 32,
) -> list[McEstimate]:
    """Signed boundary terms of the cone identity, by either r-design."""
    pairs = list(pairs)

    def terms(U, r):
        ubar = trapezoid_with_kink(U, grid.theta, r)
        g = np.exp(-0.5 * ubar * ubar) / SQRT_2PI
        return np.stack([-_synth_at(h, r) * phi(U, grid, r) * g for phi, h in pairs], axis=1)

    if design == "arcsine":

        def fn(rng, n):
            r = np.maximum(arcsine_samples(n, rng), 1e-300)
            return terms(composite_paths(r, grid.theta, 1.0, rng), r)

        return _estimates(fn, n_samples, seed, "72-boundary", batch, workers)
    if design != "chebyshev":
        raise ValueError(f"unknown boundary design {design!r}")
    k = np.arange(1, n_nodes + 1)
    nodes = 0.5 * (1.0 + np.cos((2 * k - 1) * np.pi / (2 * n_nodes)))
    per_node = max(2, n_samples // n_nodes)
    means = np.zeros((n_nodes, len(pairs)))
    variances = np.zeros((n_nodes, len(pairs)))
    for j, rj in enumerate(nodes):

        def fn(rng, n, rj=rj):
            r = np.full(n, rj)
            return terms(composite_paths(r, grid.theta, 1.0, rng), r)

        for i, est in enumerate(_estimates(fn, per_node, seed, f"72-cheb-{j}", batch, workers)):
            means[j, i] = est.mean
            variances[j, i] = est.stderr**2
    return [
        McEstimate(math.fsum(means[:, i]) / n_nodes, math.sqrt(math.fsum(variances[:, i])) / n_nodes, per_node * n_nodes)
        for i in range(len(pairs))
    ]


def boundary_72(phi, h, n_samples, seed, grid=DEFAULT_GRID, batch=20_000, workers=1, design="arcsine", n_nodes=32) -> McEstimate:
    return boundary_72_many([(phi, h)], n_samples, seed, grid, batch, workers, design, n_nodes)[0]


def verify_cor_72(
    phi: CylindricalFunctional,
    h: Field,
    c: float,
    n_samples: int,
    seed: int,
    bandwidth: float | None = None,
    grid: GridSpec = DEFAULT_GRID,
    batch: int = 20_000,
    workers: int = 1,
    threshold: float = 4.0,
    indicator: str = "bridge",
    min_ess: float = 100.0,
) -> IbpReport:
    """The fixed-average version, with the conditioning on mean(U_r) = c done by kernel weighting.

    lhs      = E[d_{Pi h} Phi(Y^c) 1_K]
    bulk     = -E[<Y^c, h''> Phi(Y^c) 1_K]
    boundary = -E_{r ~ arcsine}[(Pi h)(r) k_b(mean(U_r) - c) Phi(U_r)]

    where k_b is the Gaussian kernel of bandwidth b (default 0.05 c); the
    kernel average estimates p(c) E[Phi(U_r) | mean(U_r) = c] with O(b^2) bias.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    b = 0.05 * c if bandwidth is None else float(bandwidth)
    pih = Field(np.concatenate([[0.0], h.coeffs[1:]]))
    h2 = synthesize(apply_A(h).coeffs, grid)

    def lhs(rng, n):
        Y = mu_c_paths(n, c, grid, rng)
        return phi.directional_derivative(pih, Y, grid) * survival_weight(Y, grid.h, indicator)

    def bulk(rng, n):
        Y = mu_c_paths(n, c, grid, rng)
        return -(Y @ (grid.weights * h2)) * phi(Y, grid) * survival_weight(Y, grid.h, indicator)

    def boundary(rng, n):
        r = np.maximum(arcsine_samples(n, rng), 1e-300)
        U = composite_paths(r, grid.theta, 1.0, rng)
        ubar = trapezoid_with_kink(U, grid.theta, r)
        k = np.exp(-0.5 * ((ubar - c) / b) ** 2) / (b * SQRT_2PI)
        return np.stack([-_synth_at(pih, r) * k * phi(U, grid, r), k, k * k], axis=1)

    L = _estimates(lhs, n_samples, seed, "73-lhs", batch, workers)[0]
    B = _estimates(bulk, n_samples, seed, "73-bulk", batch, workers)[0]
    D, kmean, k2mean = _estimates(boundary, n_samples, seed, "73-boundary", batch, workers)
    ess = n_samples * kmean.mean**2 / k2mean.mean if k2mean.mean > 0 else 0.0
    if ess < min_ess:
        raise ValueError(f"kernel effective sample size {ess:.1f} < {min_ess}; increase n_samples or the bandwidth")
    details = {
        "c": c,
        "bandwidth": b,
        "effective_sample_size": ess,
        "density_of_mean_at_c": kmean.as_dict(),
        "bias_note": "kernel conditioning carries an O(bandwidth^2) bias",
        "n_samples": n_samples,
        "m_points": grid.m_points,
    }
    return IbpReport(f"ibp-fixed-average[{phi.name}]", L, B, D, threshold, details)


# ---------------------------------------------------------------- identities on [0, 1/2]


def _half(grid: GridSpec) -> tuple[int, np.ndarray, np.ndarray]:
    if (grid.m_points - 1) % 4:
        raise ValueError("grid must have nodes at 1/4 and 1/2 (m_points = 4k + 1)")
    m = (grid.m_points - 1) // 2 + 1
    theta = grid.theta[:m]
    w = np.full(m, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return m, theta, w


def gamma_of(half: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """int_0^{1/2} omega + omega(1/2) / 2, trapezoid."""
    return half @ weights + 0.5 * half[:, -1]


def verify_lemma_b1_many(
    psis,
    c: float,
    n_samples: int,
    seed: int,
    grid: GridSpec = DEFAULT_GRID,
    batch: int = 20_000,
    workers: int = 1,
    threshold: float = 3.0,
    indicator: str = "bridge",
) -> list[tuple[IbpReport, IbpReport]]:
    """Half-interval density identity and its integration by parts along the indicator of [0, 1/2].

    density:  E Psi(Y^c) = sqrt(32) E[Psi(b + B) exp(-12 (gamma(b + B) - c)^2 + 3 b^2 / 8)]
    ibp:      E[d_1 Psi(Y^c) 1] = 24 E[(gamma - c) Psi 1] - sqrt(12 / pi) E_{r ~ arcsine(0, 1/2)}[Psi(T_r) exp(-12 (gamma(T_r) - c)^2)]

    with 1 the survival weight of [0, 1/2] and gamma(w) = int_0^{1/2} w + w(1/2) / 2.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    psis = list(psis)
    m, theta, w = _half(grid)

    def density_lhs(rng, n):
        Y = mu_c_paths(n, c, grid, rng)[:, :m]
        g = gamma_of(Y, w)
        return np.stack([psi.value(Y, theta, g) for psi in psis], axis=1)

    def density_rhs(rng, n):
        X, b, lr = _gaussian_b_paths(n, grid, rng, m)
        g = gamma_of(X, w)
        wt = lr * math.sqrt(32.0) * np.exp(-12.0 * (g - c) ** 2 + 0.375 * b * b)
        return np.stack([psi.value(X, theta, g) * wt for psi in psis], axis=1)

    def ibp_lhs(rng, n):
        Y = mu_c_paths(n, c, grid, rng)[:, :m]
        g, k = gamma_of(Y, w), survival_weight(Y, grid.h, indicator)
        return np.stack([psi.shift_derivative(Y, theta, g) * k for psi in psis], axis=1)

    def ibp_bulk(rng, n):
        Y = mu_c_paths(n, c, grid, rng)[:, :m]
        g, k = gamma_of(Y, w), survival_weight(Y, grid.h, indicator)
        return np.stack([24.0 * (g - c) * psi.value(Y, theta, g) * k for psi in psis], axis=1)

    L2 = _estimates(density_lhs, n_samples, seed, "b2-lhs", batch, workers)
    R2 = _estimates(density_rhs, n_samples, seed, "b2-rhs", batch, workers)
    L3 = _estimates(ibp_lhs, n_samples, seed, "b3-lhs", batch, workers)
    B3 = _estimates(ibp_bulk, n_samples, seed, "b3-bulk", batch, workers)
    D3 = boundary_b3_many(psis, c, n_samples, seed, grid, batch, workers)
    out = []
    for j, psi in enumerate(psis):
        d = {"c": c, "n_samples": n_samples, "m_points": grid.m_points}
        b2 = IbpReport(f"half-density[{psi.name}]", L2[j], R2[j], McEstimate.exact(0.0), threshold, d | {"b_proposal_variance": B_VAR})
        b3 = IbpReport(f"half-ibp[{psi.name}]", L3[j], B3[j], D3[j], threshold, d | {"indicator": indicator})
        out.append((b2, b3))
    return out


def verify_lemma_b1(psi: HalfFunctional, c: float, n_samples: int, seed: int, **kw) -> tuple[IbpReport, IbpReport]:
    return verify_lemma_b1_many([psi], c, n_samples, seed, **kw)[0]


def boundary_b3_many(psis, c: float, n_samples: int, seed: int, grid: GridSpec = DEFAULT_GRID, batch: int = 20_000, workers: int = 1) -> list[McEstimate]:
    """Signed boundary terms of the half-interval identity."""
    m, theta, _ = _half(grid)

    def fn(rng, n):
        r = np.maximum(arcsine_samples(n, rng, 0.5), 1e-300)
        T = composite_paths(r, theta, 0.5, rng)
        g = trapezoid_with_kink(T, theta, r) + 0.5 * T[:, -1]
        e = -math.sqrt(12.0 / math.pi) * np.exp(-12.0 * (g - c) ** 2)
        return np.stack([psi.value(T, theta, g) * e for psi in psis], axis=1)

    return _estimates(fn, n_samples, seed, "b3-boundary", batch, workers)


def boundary_b3(psi: HalfFunctional, c: float, n_samples: int, seed: int, **kw) -> McEstimate:
    return boundary_b3_many([psi], c, n_samples, seed, **kw)[0]


def verify_b4_identity(
    psi: HalfFunctional,
    c: float,
    eps: float,
    n_samples: int,
    seed: int,
    grid: GridSpec = DEFAULT_GRID,
    batch: int = 20_000,
    workers: int = 1,
    threshold: float = 3.0,
    kind: str = "negative_part",
) -> IbpReport:
    """Penalized half-interval identity.

    E[d_1 Psi e^{-V}] = 24 E[(gamma - c) Psi e^{-V}] - (1/eps) E[int_0^{1/2} f(Y^c) Psi e^{-V}],
    V = (1/eps) int_0^{1/2} F(Y^c).  ``details["sigma_mass"]`` is the last
    expectation without its sign.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    m, theta, w = _half(grid)

    def sample(rng, n):
        Y = mu_c_paths(n, c, grid, rng)[:, :m]
        tilt = np.exp(-(penalty_F(Y, kind) @ w) / eps)
        return Y, gamma_of(Y, w), tilt

    def lhs(rng, n):
        Y, g, t = sample(rng, n)
        return psi.shift_derivative(Y, theta, g) * t

    def bulk(rng, n):
        Y, g, t = sample(rng, n)
        return 24.0 * (g - c) * psi.value(Y, theta, g) * t

    def sigma(rng, n):
        Y, g, t = sample(rng, n)
        return (penalty_f(Y, kind) @ w) / eps * psi.value(Y, theta, g) * t

    L = _estimates(lhs, n_samples, seed, "b4-lhs", batch, workers)[0]
    B = _estimates(bulk, n_samples, seed, "b4-bulk", batch, workers)[0]
    S = _estimates(sigma, n_samples, seed, "b4-sigma", batch, workers)[0]
    return IbpReport(f"half-ibp-penalized[{psi.name}]", L, B, -S, threshold, {"c": c, "eps": eps, "sigma_mass": S.as_dict()})


def sigma_mass(c: float, eps_list, n_samples: int, seed: int, grid: GridSpec = DEFAULT_GRID, batch: int = 20_000, workers: int = 1) -> list[McEstimate]:
    """(1/eps) E[int_0^{1/2} f(Y^c) e^{-V_eps}] for Psi = 1, one shared stream for all eps."""
    eps_list = [float(e) for e in np.atleast_1d(eps_list)]
    m, _, w = _half(grid)

    def fn(rng, n):
        Y = mu_c_paths(n, c, grid, rng)[:, :m]
        fi, Fi = penalty_f(Y) @ w, penalty_F(Y) @ w
        return np.stack([fi / e * np.exp(-Fi / e) for e in eps_list], axis=1)

    return _estimates(fn, n_samples, seed, "sigma-mass", batch, workers)


# ---------------------------------------------------------------- conditional bridge


def bridge_profile(s) -> np.ndarray:
    """12 s (1 - s); integrates to 1 over [0, 1/2]."""
    s = np.asarray(s, dtype=float)
    return 12.0 * s * (1.0 - s)


def conditional_bridge_paths(c: float, half: np.ndarray, grid: GridSpec, rng) -> np.ndarray:
    """Extend paths given on [0, 1/2] to [0, 1] with the law of Y^c given its first half."""
    rng = as_rng(rng)
    half = np.atleast_2d(half)
    m, theta, w = _half(grid)
    if half.shape[1] != m:
        raise ValueError("half paths must live on the first half of the grid")
    n = half.shape[0]
    Bp = brownian_paths(n, GridSpec(grid.m_points), rng)[:, :m]  # fresh path on [0, 1/2]
    corr = Bp @ w + gamma_of(half, w) - c
    rho = bridge_profile(theta)
    rho /= rho @ w  # discrete normalization keeps the grid average exactly c
    tail = half[:, -1:] + Bp - rho[None, :] * corr[:, None]
    return np.concatenate([half, tail[:, 1:]], axis=1)


def conditional_bridge(c: float, omega, seed=None, grid: GridSpec | None = None):
    """Single-path version; ``omega`` is a PathSample-like object or (values, grid) on [0, 1/2]."""
    from .measures import PathSample

    if grid is None:
        m = len(omega)
        grid = GridSpec(2 * (m - 1) + 1)
    out = conditional_bridge_paths(c, np.asarray(omega, dtype=float)[None, :], grid, seed)[0]
    return PathSample(out, grid)
