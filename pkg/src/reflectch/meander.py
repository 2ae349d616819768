"""Brownian meanders, the arcsine law, and the paths glued from meanders.

The meander is sampled exactly at any finite set of times: the endpoint
M(1) has density x exp(-x^2/2), and given M(1) = x the path is a
three-dimensional Bessel bridge from 0 to x, i.e. the Euclidean norm of a
3-d Brownian bridge from the origin to (x, 0, 0).

The composite paths are

    U_r(theta) = sqrt(r) M((r - theta)/r)                  theta <= r
               = sqrt(1 - r) Mhat((theta - r)/(1 - r))     theta >  r
    V_r        = U_r - sqrt(r) M(1)
    T_r        = as U_r but on [0, 1/2] with 1 - r replaced by 1/2 - r

and V_tau with tau arcsine-distributed has the law of a Brownian path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .mc import KsResult, bonferroni_alpha, ks_two_sample, make_rng
from .measures import as_rng, brownian_paths
from .spectral import GridSpec

R_MARGIN = 1e-4


@dataclass(frozen=True, eq=False)
class MeanderPath:
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.m_points,):
            raise ValueError("meander values do not match the grid")
        if v[0] != 0.0:
            raise ValueError("a meander starts at 0")
        if np.any(v < 0.0):
            raise ValueError("meander values must be nonnegative")
        object.__setattr__(self, "values", v)

    def at(self, s) -> np.ndarray:
        """Linear interpolation of the path at times ``s`` in [0, 1]."""
        return np.interp(s, self.grid.theta, self.values)

    @property
    def endpoint(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True, eq=False)
class CompositePath:
    kind: str
    r: float
    theta: np.ndarray
    values: np.ndarray


# ---------------------------------------------------------------- samplers


def meander_at_times(times: np.ndarray, rng) -> np.ndarray:
    """Meander values at ``times`` (shape (n, k), each row nondecreasing in [0, 1]).

    Rows are independent meanders.  Repeated times are allowed.
    """
    rng = as_rng(rng)
    t = np.asarray(times, dtype=float)
    if t.ndim == 1:
        t = t[None, :]
    n, k = t.shape
    dt = np.diff(t, axis=1, prepend=0.0)
    if np.any(dt < 0) or np.any(t > 1.0):
        raise ValueError("times must be nondecreasing within [0, 1]")
    sdt = np.sqrt(dt)
    tail = np.sqrt(1.0 - t[:, -1])
    x = np.sqrt(-2.0 * np.log1p(-rng.random(n)))  # Rayleigh endpoint
    sq = np.zeros((n, k))
    for comp in range(3):
        W = np.cumsum(sdt * rng.standard_normal((n, k)), axis=1)
        W1 = W[:, -1] + tail * rng.standard_normal(n)
        bridge = W - t * W1[:, None]
        if comp == 0:
            bridge += t * x[:, None]
        sq += bridge * bridge
    return np.sqrt(sq)


def meander_paths(n: int, grid: GridSpec, rng) -> np.ndarray:
    t = np.broadcast_to(grid.theta, (n, grid.m_points))
    out = meander_at_times(t, rng)
    out[:, 0] = 0.0
    return out


def sample_meander(grid: GridSpec, seed=None) -> MeanderPath:
    return MeanderPath(meander_paths(1, grid, seed)[0], grid)


def arcsine_samples(n: int, rng, length: float = 1.0) -> np.ndarray:
    """Arcsine law on (0, length): length * sin^2(pi U / 2)."""
    u = as_rng(rng).random(n)
    return length * np.sin(0.5 * np.pi * u) ** 2


def sample_arcsine(seed=None) -> float:
    return float(arcsine_samples(1, seed)[0])


def arcsine_cdf(r, length: float = 1.0):
    return 2.0 / np.pi * np.arcsin(np.sqrt(np.clip(np.asarray(r) / length, 0.0, 1.0)))


def arcsine_pdf(r, length: float = 1.0):
    r = np.asarray(r, dtype=float)
    return 1.0 / (np.pi * np.sqrt(r * (length - r)))


# ---------------------------------------------------------------- composites


def _check_r(r: float, length: float, margin: float):
    if not (margin * length <= r <= (1.0 - margin) * length):
        raise ValueError(f"r = {r} outside the admissible interval of (0, {length})")


def _glue(r, theta, length, m, mhat):
    left = theta <= r
    s_left = np.clip((r - theta) / r, 0.0, 1.0)
    s_right = np.clip((theta - r) / (length - r), 0.0, 1.0)
    return np.where(left, np.sqrt(r) * m(s_left), np.sqrt(length - r) * mhat(s_right))


def build_U_r(r: float, m: MeanderPath, mhat: MeanderPath, margin: float = R_MARGIN) -> CompositePath:
    _check_r(r, 1.0, margin)
    theta = m.grid.theta
    return CompositePath("U_r", r, theta, _glue(r, theta, 1.0, m.at, mhat.at))


def build_V_r(r: float, m: MeanderPath, mhat: MeanderPath, margin: float = R_MARGIN) -> CompositePath:
    u = build_U_r(r, m, mhat, margin)
    return CompositePath("V_r", r, u.theta, u.values - np.sqrt(r) * m.endpoint)


def build_T_r(r: float, m: MeanderPath, mhat: MeanderPath, margin: float = R_MARGIN) -> CompositePath:
    _check_r(r, 0.5, margin)
    theta = 0.5 * m.grid.theta
    return CompositePath("T_r", r, theta, _glue(r, theta, 0.5, m.at, mhat.at))


def composite_paths(r: np.ndarray, theta: np.ndarray, length: float, rng) -> np.ndarray:
    """U_r (length 1) or T_r (length 1/2) evaluated exactly at ``theta``.

    ``r`` has one entry per path; meanders are sampled at the exact time
    arguments the glueing needs, so no interpolation is involved.
    """
    rng = as_rng(rng)
    r = np.asarray(r, dtype=float)[:, None]
    theta = np.asarray(theta, dtype=float)[None, :]
    s_left = np.clip((r - theta) / r, 0.0, 1.0)[:, ::-1]
    s_right = np.clip((theta - r) / (length - r), 0.0, 1.0)
    m_left = meander_at_times(s_left, rng)[:, ::-1]
    m_right = meander_at_times(s_right, rng)
    return np.where(theta <= r, np.sqrt(r) * m_left, np.sqrt(length - r) * m_right)


def trapezoid_with_kink(values: np.ndarray, theta: np.ndarray, r: np.ndarray, weight=None) -> np.ndarray:
    """Trapezoid integral of ``values * weight`` with an extra node at ``r`` where the path is 0.

    Composite paths vanish at theta = r, which is generally not a grid point;
    adding the node removes the O(h^{3/2}) bias of the plain rule at the kink.
    """
    v = values if weight is None else values * weight
    h = np.diff(theta)
    base = 0.5 * np.sum((v[:, 1:] + v[:, :-1]) * h, axis=1)
    j = np.clip(np.searchsorted(theta, r, side="right") - 1, 0, theta.size - 2)
    rows = np.arange(v.shape[0])
    a, b = theta[j], theta[j + 1]
    va, vb = v[rows, j], v[rows, j + 1]
    exact = 0.5 * (r - a) * va + 0.5 * (b - r) * vb
    return base - 0.5 * (b - a) * (va + vb) + exact


# ---------------------------------------------------------------- conditioned random walk oracle


def _log_comb(m, k):
    return gammaln(m + 1.0) - gammaln(k + 1.0) - gammaln(m - k + 1.0)


def _log_positive_continuations(k: np.ndarray, m: int) -> np.ndarray:
    """log of P(a simple walk from height k stays >= 1 for m steps)."""
    if m == 0:
        return np.zeros_like(k, dtype=float)
    hi = np.floor((m + k) / 2.0)
    lo = np.floor((m - k) / 2.0)
    p = stats.binom.cdf(hi, m, 0.5) - stats.binom.cdf(lo, m, 0.5)
    return np.log(np.maximum(p, 1e-300))


def conditioned_walk_samples(n_steps: int, times, n_samples: int, rng, jitter: bool = True) -> np.ndarray:
    """Values at ``times`` of a simple random walk conditioned to stay positive, rescaled by sqrt(n).

    Sampled exactly from ballot/reflection path counts, one conditional
    distribution at a time.  With ``jitter`` each value is spread uniformly
    over its lattice cell so the output has a continuous law.
    """
    rng = as_rng(rng)
    steps = [int(round(t * n_steps)) for t in times]
    if steps != sorted(steps) or steps[0] < 1 or steps[-1] > n_steps:
        raise ValueError("times must be increasing within (0, 1]")
    out = np.empty((n_samples, len(steps)))
    prev = np.zeros(n_samples, dtype=np.int64)
    prev_step = 0
    for col, s in enumerate(steps):
        m = s - prev_step
        remaining = n_steps - s
        new = np.empty_like(prev)
        for start in np.unique(prev):
            idx = np.flatnonzero(prev == start)
            j = np.arange(1, start + m + 1)
            j = j[(j - start - m) % 2 == 0]
            if start == 0:
                logw = np.log(j / m) + _log_comb(m, (m + j) / 2.0)
            else:
                la = _log_comb(m, (m + j - start) / 2.0)
                lb = _log_comb(m, (m + j + start) / 2.0)
                logw = la + np.log1p(-np.exp(np.minimum(lb - la, 0.0)) + 0.0)
                logw = np.where(np.isfinite(logw), logw, -np.inf)
            logw = logw + _log_positive_continuations(j.astype(float), remaining)
            w = np.exp(logw - logw.max())
            new[idx] = rng.choice(j, size=idx.size, p=w / w.sum())
        out[:, col] = new
        prev, prev_step = new, s
    out = out.astype(float)
    if jitter:
        out += rng.uniform(-1.0, 1.0, out.shape)
    return out / np.sqrt(n_steps)


# ---------------------------------------------------------------- Denisov decomposition check


def v_tau_paths(n: int, grid: GridSpec, rng, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Paths V_tau on the grid with tau arcsine; returns (paths, tau)."""
    rng = as_rng(rng)
    tau = np.clip(arcsine_samples(n, rng), max(margin, 1e-300), 1.0 - margin)
    U = composite_paths(tau, grid.theta, 1.0, rng)
    return U - U[:, :1], tau


def path_functionals(paths: np.ndarray, grid: GridSpec) -> dict[str, np.ndarray]:
    return {
        "value@0.25": paths[:, grid.index_of(0.25)],
        "value@0.5": paths[:, grid.index_of(0.5)],
        "value@0.75": paths[:, grid.index_of(0.75)],
        "value@1": paths[:, -1],
        "time_average": grid.integrate(paths),
        "argmin": grid.theta[np.argmin(paths, axis=1)],
    }


def denisov_check(
    n_samples: int,
    grid: GridSpec,
    seed: int,
    alpha: float = 0.01,
    functionals=("value@0.5", "value@1", "time_average", "argmin"),
    batch: int = 20_000,
) -> dict:
    """Two-sample comparison of V_tau against directly simulated Brownian paths."""
    v_parts, b_parts, taus = [], [], []
    for k in range(-(-n_samples // batch)):
        size = min(batch, n_samples - k * batch)
        V, tau = v_tau_paths(size, grid, make_rng(seed, "denisov-v", k))
        B = brownian_paths(size, grid, make_rng(seed, "denisov-b", k))
        v_parts.append(path_functionals(V, grid))
        b_parts.append(path_functionals(B, grid))
        taus.append(tau)
    fv = {key: np.concatenate([p[key] for p in v_parts]) for key in v_parts[0]}
    fb = {key: np.concatenate([p[key] for p in b_parts]) for key in b_parts[0]}
    level = bonferroni_alpha(alpha, len(functionals))
    tests: list[KsResult] = [ks_two_sample(fv[key], fb[key], key) for key in functionals]
    v1 = fv["value@1"]
    vhalf = fv["value@0.5"]
    return {
        "n_samples": n_samples,
        "m_points": grid.m_points,
        "alpha_per_test": level,
        "tests": [t.as_dict() | {"passed": t.passed(level)} for t in tests],
        "mean_V1": {"mean": float(v1.mean()), "stderr": float(v1.std(ddof=1) / np.sqrt(v1.size))},
        "var_Vhalf": {
            "value": float(vhalf.var(ddof=1)),
            "stderr": float(np.sqrt(2.0 / (vhalf.size - 1)) * vhalf.var(ddof=1)),
        },
        "passed": all(t.passed(level) for t in tests),
        "_tau": np.concatenate(taus),
        "_argmin": fv["argmin"],
    }
