"""Exponential-Euler spectral integrator for the penalized conservative equation.

In the cosine basis the equation decouples into one Ornstein-Uhlenbeck
mode per n >= 1, coupled only through the penalization:

    da_n = (-lambda_n a_n + d_n(a)) dt + n pi dbeta_n,   lambda_n = (n pi)^4 / 2,
    d_n(a) = (n pi)^2 / (2 eps) * <f(u), e_n>,

and a_0 (the spatial average) never moves.  A step applies the exact linear
flow, integrates the frozen drift exactly over the step and adds the exact
stochastic convolution.  The stochastic part is kept as the jointly
Gaussian pair (I1, dW) with I1 = int e^{-lambda (dt - s)} dbeta_s, which is
what the weak-form residual and the time-step refinement studies need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .mc import McEstimate, Moments, batched_map, make_rng
from .measures import as_rng, penalty_f
from .spectral import (
    Field,
    GridSpec,
    _analysis_matrix,
    _basis_matrix,
    h_norm_coeffs,
    mode_numbers,
)

RELAXATION_TIME = 2.0 / np.pi**4
DEFAULT_KAPPA = 0.1


def decay_rates(n_modes: int) -> np.ndarray:
    """lambda_n = (n pi)^4 / 2; zero for the average."""
    n = mode_numbers(n_modes)
    return 0.5 * (n * np.pi) ** 4


def stability_gain(dt: float, n_modes: int, eps: float) -> float:
    """Largest per-step gain of the explicit penalty over the resolved modes.

    A step moves mode n by (1 - e^{-lambda_n dt}) / (eps (n pi)^2) times the
    local negative part; keeping this below 1 for every mode prevents the
    explicit penalty from overshooting.
    """
    if not np.isfinite(eps):
        return 0.0
    n = mode_numbers(n_modes)[1:]
    k2 = (n * np.pi) ** 2
    return float(np.max(-np.expm1(-0.5 * k2 * k2 * dt) / (eps * k2)))


def max_stable_dt(n_modes: int, eps: float) -> float:
    if not np.isfinite(eps):
        return math.inf
    g = lambda log_dt: stability_gain(math.exp(log_dt), n_modes, eps) - 1.0
    lo, hi = math.log(1e-16), math.log(1e4)
    if g(hi) < 0:
        return math.inf
    return math.exp(brentq(g, lo, hi, xtol=1e-12))


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and model parameters.

    ``dt=None`` picks min(kappa * eps, largest stable step).  ``eps=inf``
    switches the penalty off and leaves the exact linear flow.
    """

    n_modes: int
    T: float
    eps: float
    c: float
    dt: float | None = None
    seed: int = 0
    scheme: str = "exp-euler"
    kind: str = "negative_part"
    m_points: int | None = None
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.scheme != "exp-euler":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive (use inf to switch the penalty off)")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.m_points is None:
            object.__setattr__(self, "m_points", 4 * self.n_modes + 1)
        if self.m_points <= self.n_modes + 1:
            raise ValueError("need more collocation points than modes + 1")
        if self.dt is None:
            guess = min(self.kappa * self.eps, 0.9 * max_stable_dt(self.n_modes, self.eps), self.T)
            object.__setattr__(self, "dt", float(guess))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        gain = stability_gain(self.dt, self.n_modes, self.eps)
        if gain > 1.0:
            raise ValueError(
                f"dt = {self.dt:g} is unstable for eps = {self.eps:g} with {self.n_modes} modes "
                f"(penalty gain {gain:.3g} > 1); use dt <= {max_stable_dt(self.n_modes, self.eps):.3g}"
            )

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.m_points)

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.T / self.dt - 1e-9)))

    @property
    def penalized(self) -> bool:
        return bool(np.isfinite(self.eps))

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "T": self.T,
            "eps": self.eps if self.penalized else "inf",
            "c": self.c,
            "dt": self.dt,
            "seed": self.seed,
            "scheme": self.scheme,
            "kind": self.kind,
            "m_points": self.m_points,
            "kappa": self.kappa,
        }


# ---------------------------------------------------------------- noise


def _ou_moments(dt: float, n_modes: int):
    """Per-mode (e^{-lambda dt}, Var I1, Cov(I1, dW), conditional sd of I1 given dW)."""
    lam = decay_rates(n_modes)[1:]
    x = lam * dt
    decay = np.exp(-x)
    var_i1 = -np.expm1(-2.0 * x) / (2.0 * lam)
    cov = -np.expm1(-x) / lam
    # Var(I1 | dW) = dt * (A(x) - B(x)^2), cancellation-free series for small x
    series = x * x / 12.0 - x**3 / 12.0 + 17.0 * x**4 / 360.0
    direct = var_i1 / dt - (cov / dt) ** 2
    cond = dt * np.where(x < 1e-2, series, direct)
    return decay, var_i1, cov, np.sqrt(np.maximum(cond, 0.0))


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Stochastic increments for a fixed step: I1[k, n] and dW[k, n], k = step.

    Column 0 (the average) is identically zero.  Realizations for step
    ``2 dt`` are obtained exactly from one for ``dt`` with :meth:`coarsen`.
    """

    dt: float
    I1: np.ndarray
    dW: np.ndarray

    def __post_init__(self):
        if self.I1.shape != self.dW.shape:
            raise ValueError("I1 and dW shapes differ")
        if np.any(self.I1[..., 0] != 0.0) or np.any(self.dW[..., 0] != 0.0):
            raise ValueError("mode 0 must receive no noise")

    @property
    def n_steps(self) -> int:
        return self.I1.shape[0]

    @property
    def n_modes(self) -> int:
        return self.I1.shape[-1] - 1

    @classmethod
    def from_normals(cls, xi: np.ndarray, dt: float) -> "NoiseRealization":
        """Build from standard normals ``xi`` of shape (steps, ..., N, 2) for modes 1..N."""
        n_modes = xi.shape[-2]
        _, _, cov, cond_sd = _ou_moments(dt, n_modes)
        dW = math.sqrt(dt) * xi[..., 0]
        I1 = (cov / dt) * dW + cond_sd * xi[..., 1]
        pad = [(0, 0)] * (dW.ndim - 1) + [(1, 0)]
        return cls(dt, np.pad(I1, pad), np.pad(dW, pad))

    @classmethod
    def draw(cls, n_steps: int, n_modes: int, dt: float, rng, batch_shape: tuple = ()) -> "NoiseRealization":
        rng = as_rng(rng)
        xi = rng.standard_normal((n_steps, *batch_shape, n_modes, 2))
        return cls.from_normals(xi, dt)

    def coarsen(self) -> "NoiseRealization":
        """The same Brownian increments seen with step 2 dt."""
        if self.n_steps % 2:
            raise ValueError("need an even number of steps to coarsen")
        decay = np.concatenate([[1.0], _ou_moments(self.dt, self.n_modes)[0]])
        I1 = decay * self.I1[0::2] + self.I1[1::2]
        dW = self.dW[0::2] + self.dW[1::2]
        return NoiseRealization(2.0 * self.dt, I1, dW)

    def ou_noise(self, k: int) -> np.ndarray:
        """Additive noise n pi I1 of step k."""
        return mode_numbers(self.n_modes) * np.pi * self.I1[k]


# ---------------------------------------------------------------- steps


class _Stepper:
    """Precomputed factors of one (N, M, dt, eps, kind) combination; acts on coefficient batches."""

    def __init__(self, n_modes: int, m_points: int, dt: float, eps: float, kind: str = "negative_part"):
        self.n_modes, self.dt, self.eps, self.kind = n_modes, dt, eps, kind
        self.grid = GridSpec(m_points)
        self.E = _basis_matrix(m_points, n_modes)
        self.Ean = _analysis_matrix(m_points, n_modes)
        lam = decay_rates(n_modes)
        self.lam = lam
        self.decay = np.exp(-lam * dt)
        phi1 = np.empty(n_modes + 1)
        phi1[0] = dt
        phi1[1:] = -np.expm1(-lam[1:] * dt) / lam[1:]
        self.phi1 = phi1
        n = mode_numbers(n_modes)
        self.kpi = n * np.pi
        k2 = (n * np.pi) ** 2
        self.drift_scale = np.zeros(n_modes + 1) if not np.isfinite(eps) else k2 / (2.0 * eps)
        self.drift_scale[0] = 0.0
        self.penalized = bool(np.isfinite(eps))
        # state integral over a step: a_k phi1 + d_k (dt - phi1)/lam + n pi (dW - I1)/lam
        with np.errstate(divide="ignore", invalid="ignore"):
            self.int_drift = np.where(lam > 0, (dt - phi1) / np.where(lam > 0, lam, 1.0), 0.5 * dt * dt)
            self.int_noise = np.where(lam > 0, self.kpi / np.where(lam > 0, lam, 1.0), 0.0)

    def values(self, a: np.ndarray) -> np.ndarray:
        return a @ self.E.T

    def penalty(self, a: np.ndarray):
        """(u values, f(u) values, coefficients of f(u)) for a batch of states."""
        u = self.values(a)
        f = penalty_f(u, self.kind)
        return u, f, f @ self.Ean

    def drift(self, f_coeffs: np.ndarray) -> np.ndarray:
        return f_coeffs * self.drift_scale

    def step(self, a: np.ndarray, d: np.ndarray, I1: np.ndarray) -> np.ndarray:
        return self.decay * a + self.phi1 * d + self.kpi * I1

    def state_integral(self, a, d, I1, dW):
        out = a * self.phi1 + d * self.int_drift + self.int_noise * (dW - I1)
        out[..., 0] = a[..., 0] * self.dt
        return out


def _check_finite(a: np.ndarray, k: int):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite state after step {k}; reduce dt or increase eps")


def ou_exact_step(state: Field, dt: float, noise: np.ndarray | None = None) -> Field:
    """Exact linear step; ``noise`` holds standard normals for modes 1..N (None: no noise)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    N = state.n_modes
    decay, var_i1, _, _ = _ou_moments(dt, N)
    a = state.coeffs.copy()
    a[1:] *= decay
    if noise is not None:
        z = np.asarray(noise, dtype=float).reshape(N)
        a[1:] += mode_numbers(N)[1:] * np.pi * np.sqrt(var_i1) * z
    return Field(a)


def penalization_drift(state: Field, eps: float, grid: GridSpec | None = None, kind: str = "negative_part") -> Field:
    """Coefficients of -(1/(2 eps)) A f(u), evaluated pseudo-spectrally."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = grid or GridSpec.for_modes(state.n_modes)
    st = _Stepper(state.n_modes, grid.m_points, 1.0, eps, kind)
    _, _, fc = st.penalty(state.coeffs)
    return Field(st.drift(fc))


def step_penalized(state: Field, cfg: SolverConfig, noise: NoiseRealization | np.ndarray | None = None, k: int = 0) -> Field:
    """One exponential-Euler step.

    ``noise`` is a :class:`NoiseRealization` (step ``k`` is used), an array of
    I1 values per mode (index 0 ignored), or None for a deterministic step.
    """
    if state.n_modes != cfg.n_modes:
        raise ValueError("state and config disagree on n_modes")
    st = _stepper_for(cfg)
    a = state.coeffs
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite input state")
    d = st.drift(st.penalty(a)[2]) if st.penalized else np.zeros_like(a)
    if noise is None:
        I1 = np.zeros_like(a)
    elif isinstance(noise, NoiseRealization):
        I1 = noise.I1[k]
    else:
        I1 = np.asarray(noise, dtype=float).copy()
        I1[0] = 0.0
    out = st.step(a, d, I1)
    _check_finite(out, k)
    return Field(out)


def _stepper_for(cfg: SolverConfig) -> _Stepper:
    return _Stepper(cfg.n_modes, cfg.m_points, cfg.dt, cfg.eps, cfg.kind)


# ---------------------------------------------------------------- single trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States a_k at times k dt plus the penalty and noise bookkeeping of every step.

    ``eta_mass_per_step[k]`` is dt (1/eps) int f(u_k), left-endpoint rule;
    ``eta_profile`` the same accumulated pointwise on the grid.
    """

    cfg: SolverConfig
    times: np.ndarray
    coeffs: np.ndarray
    eta_mass_per_step: np.ndarray
    eta_profile_values: np.ndarray
    drift: np.ndarray
    state_integrals: np.ndarray
    noise: NoiseRealization
    contact_per_step: np.ndarray

    @property
    def states(self) -> list[Field]:
        return [Field(a) for a in self.coeffs]

    @property
    def n_modes(self) -> int:
        return self.cfg.n_modes

    @property
    def eta_profile(self) -> Field:
        from .spectral import to_coeffs

        return to_coeffs(self.eta_profile_values, self.cfg.grid, self.cfg.n_modes)

    @property
    def eta_mass(self) -> float:
        return math.fsum(self.eta_mass_per_step)

    def index_of_time(self, t: float) -> int:
        k = int(round(t / self.cfg.dt))
        if not 0 <= k < self.times.size or abs(k * self.cfg.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a step time of this trajectory")
        return k

    def values(self) -> np.ndarray:
        return self.coeffs @ _basis_matrix(self.cfg.m_points, self.cfg.n_modes).T


def solve_path(
    x0: Field,
    cfg: SolverConfig,
    seed=None,
    noise: NoiseRealization | None = None,
    c_tol: float = 1e-12,
) -> Trajectory:
    """Integrate from ``x0`` over [0, cfg.T]; the initial average must equal ``cfg.c``."""
    if x0.n_modes != cfg.n_modes:
        raise ValueError("x0 and config disagree on n_modes")
    if abs(x0.average - cfg.c) > c_tol * max(1.0, abs(cfg.c)):
        raise ValueError(f"initial average {x0.average} differs from c = {cfg.c}; the average is conserved")
    K = cfg.n_steps
    if noise is None:
        noise = NoiseRealization.draw(K, cfg.n_modes, cfg.dt, make_rng(cfg.seed if seed is None else seed, "solve_path"))
    if noise.n_steps < K or abs(noise.dt - cfg.dt) > 1e-15 * cfg.dt or noise.n_modes != cfg.n_modes:
        raise ValueError("noise realization does not match the configuration")
    st = _stepper_for(cfg)
    N = cfg.n_modes
    A = np.empty((K + 1, N + 1))
    D = np.zeros((K + 1, N + 1))
    S = np.empty((K, N + 1))
    mass = np.zeros(K)
    contact = np.zeros(K)
    profile = np.zeros(cfg.m_points)
    w = st.grid.weights
    A[0] = x0.coeffs
    a = A[0].copy()
    scale = cfg.dt / cfg.eps if st.penalized else 0.0

    def eval_drift(a):
        if not st.penalized:
            return np.zeros_like(a), None, None
        u, f, fc = st.penalty(a)
        return st.drift(fc), u, f

    d, u, f = eval_drift(a)
    for k in range(K):
        D[k] = d
        if st.penalized:
            mass[k] = scale * float(f @ w)
            contact[k] = scale * float((u * f) @ w)
            profile += scale * f
        S[k] = st.state_integral(a, d, noise.I1[k], noise.dW[k])
        a = st.step(a, d, noise.I1[k])
        _check_finite(a, k)
        A[k + 1] = a
        d, u, f = eval_drift(a)
    D[K] = d
    times = cfg.dt * np.arange(K + 1)
    return Trajectory(cfg, times, A, mass, profile, D, S, NoiseRealization(cfg.dt, noise.I1[:K], noise.dW[:K]), contact)


# ---------------------------------------------------------------- coupling and decay


@dataclass(frozen=True, eq=False)
class DecayCurve:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None
    reference: np.ndarray | None = None

    def as_dict(self) -> dict:
        d = {"times": self.times.tolist(), "values": self.values.tolist()}
        if self.stderr is not None:
            d["stderr"] = self.stderr.tolist()
        if self.reference is not None:
            d["reference"] = self.reference.tolist()
        return d


def coupled_contraction(x: Field, y: Field, cfg: SolverConfig, seed=None, n_times: int = 20) -> DecayCurve:
    """H-distance between two solutions driven by the same noise.

    ``reference`` holds the bound ||x - y||_H exp(-t pi^4 / 2).
    """
    if abs(x.average - y.average) > 1e-12 * max(1.0, abs(x.average)):
        raise ValueError("coupled initial data must share the average")
    cfg = cfg.with_(c=x.average)
    noise = NoiseRealization.draw(cfg.n_steps, cfg.n_modes, cfg.dt, make_rng(cfg.seed if seed is None else seed, "coupled"))
    tx = solve_path(x, cfg, noise=noise)
    ty = solve_path(y, cfg, noise=noise)
    dist = h_norm_coeffs(tx.coeffs - ty.coeffs)
    idx = np.unique(np.linspace(0, cfg.n_steps, n_times + 1).round().astype(int))
    t = tx.times[idx]
    return DecayCurve(t, dist[idx], None, dist[0] * np.exp(-t * np.pi**4 / 2.0))


# ---------------------------------------------------------------- ensembles


@dataclass
class EnsembleStats:
    """Penalty statistics of an ensemble accumulated over [t_start, T]."""

    duration: float = 0.0
    eta_mass: Moments = field(default_factory=Moments)
    contact: Moments = field(default_factory=Moments)
    negative_fraction: Moments = field(default_factory=Moments)
    weighted_hist: np.ndarray | None = None
    hist_edges: np.ndarray | None = None


HIST_EDGES = np.concatenate([[0.0], np.logspace(-7, 1, 321)])


def simulate_ensemble(
    x0: Field,
    cfg: SolverConfig,
    n_replicas: int,
    rng,
    snapshot_times=(),
    stats_from: float | None = None,
    snapshot_values: bool = True,
):
    """Evolve ``n_replicas`` independent copies from ``x0``.

    Returns (snapshots, per-replica accumulators).  ``snapshots[j]`` holds
    grid values (or coefficients) at ``snapshot_times[j]``, rounded to steps.
    Per-replica sums over steps after ``stats_from``: eta mass, contact
    integral, number of steps with a negative grid minimum, and an
    eta-weighted histogram of |u|.
    """
    rng = as_rng(rng)
    st = _stepper_for(cfg)
    N = cfg.n_modes
    _, var_i1, _, _ = _ou_moments(cfg.dt, N)
    sd = np.concatenate([[0.0], np.sqrt(var_i1)])
    a = np.broadcast_to(x0.coeffs, (n_replicas, N + 1)).copy()
    snap_steps = [int(round(t / cfg.dt)) for t in snapshot_times]
    snaps: list[np.ndarray] = [None] * len(snap_steps)
    k0 = cfg.n_steps + 1 if stats_from is None else int(round(stats_from / cfg.dt))
    w = st.grid.weights
    acc_mass = np.zeros(n_replicas)
    acc_contact = np.zeros(n_replicas)
    acc_neg = np.zeros(n_replicas)
    hist = np.zeros(HIST_EDGES.size - 1)
    scale = cfg.dt / cfg.eps if st.penalized else 0.0
    last = max([cfg.n_steps] + snap_steps)
    for k in range(last + 1):
        need_vals = st.penalized or k in snap_steps or k >= k0
        u = st.values(a) if need_vals else None
        for j, s in enumerate(snap_steps):
            if s == k:
                snaps[j] = u.copy() if snapshot_values else a.copy()
        if st.penalized:
            f = penalty_f(u, cfg.kind)
            d = st.drift(f @ st.Ean)
        if k >= k0 and k < last:
            acc_neg += u.min(axis=1) < 0.0
            if st.penalized:
                acc_mass += scale * (f @ w)
                acc_contact += scale * ((u * f) @ w)
                mask = f > 0
                if mask.any():
                    hist += np.histogram(-u[mask], bins=HIST_EDGES, weights=(scale * f * w)[mask])[0]
        if k == last:
            break
        I1 = sd * rng.standard_normal((n_replicas, N + 1))
        a = st.step(a, d, I1) if st.penalized else st.decay * a + st.kpi * I1
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite ensemble state after step {k}")
    acc = {"eta_mass": acc_mass, "contact": acc_contact, "negative_steps": acc_neg, "hist": hist}
    return snaps, acc


def ensemble_snapshots(x0: Field, cfg: SolverConfig, n_replicas: int, root: int, name: str, snapshot_times, batch: int = 500, workers: int = 1, snapshot_values=True):
    """Batched :func:`simulate_ensemble` snapshots, reproducible for any worker count."""
    parts = batched_map(
        lambda g, n: simulate_ensemble(x0, cfg, n, g, snapshot_times, snapshot_values=snapshot_values)[0],
        n_replicas,
        root,
        name,
        batch_size=batch,
        workers=workers,
    )
    return [np.concatenate([p[j] for p in parts], axis=0) for j in range(len(snapshot_times))]


def ergodic_decay(
    x: Field,
    phi,
    cfg: SolverConfig,
    times,
    n_replicas: int,
    reference_samples: np.ndarray | None = None,
    root: int = 0,
    workers: int = 1,
    n_reference: int = 20_000,
) -> DecayCurve:
    """|E phi(X_t(x)) - nu_c^eps(phi)| at ``times``.

    ``phi`` maps grid values (n, M) to (n,).  The invariant mean comes from
    ``reference_samples`` or from the rejection sampler on the solver grid.
    """
    from .measures import nu_c_eps_paths

    if abs(x.average - cfg.c) > 1e-12 * max(1.0, abs(cfg.c)):
        raise ValueError("initial average must equal c")
    times = np.asarray(times, dtype=float)
    cfg = cfg.with_(T=float(times.max()))
    if reference_samples is None:
        reference_samples, _ = nu_c_eps_paths(n_reference, cfg.c, cfg.eps, cfg.grid, make_rng(root, "decay-ref"), kind=cfg.kind)
    ref = McEstimate.from_samples(phi(reference_samples))
    snaps = ensemble_snapshots(x, cfg, n_replicas, root, "decay", times, workers=workers)
    diffs = [McEstimate.from_samples(phi(s)) - ref for s in snaps]
    return DecayCurve(
        times,
        np.array([abs(d.mean) for d in diffs]),
        np.array([d.stderr for d in diffs]),
        np.array([d.mean for d in diffs]),
    )


def fitted_rate(curve: DecayCurve, min_z: float = 3.0) -> float | None:
    """Least-squares exponential rate over the points resolved beyond ``min_z`` SE."""
    se = curve.stderr if curve.stderr is not None else np.zeros_like(curve.values)
    keep = curve.values > min_z * se
    keep &= curve.values > 0
    if keep.sum() < 2:
        return None
    slope = np.polyfit(curve.times[keep], np.log(curve.values[keep]), 1)[0]
    return float(-slope)
