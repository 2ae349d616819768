"""Neumann cosine basis on [0, 1] and the diagonal operators built on it.

Every field is stored through its coefficients in the orthonormal system
``e_0 = 1``, ``e_n = sqrt(2) cos(n pi theta)``.  In that basis the Neumann
Laplacian ``A`` and the covariance-type operators ``Q`` and ``Qbar`` are
diagonal, so all of them reduce to elementwise multiplications.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``m_points`` points on [0, 1], endpoints included."""

    m_points: int

    def __post_init__(self):
        if int(self.m_points) < 2:
            raise ValueError(f"m_points must be >= 2, got {self.m_points}")

    @property
    def h(self) -> float:
        return 1.0 / (self.m_points - 1)

    @property
    def theta(self) -> np.ndarray:
        return _theta(self.m_points)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights; ``values @ weights`` integrates over [0, 1]."""
        return _trap_weights(self.m_points)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) @ self.weights

    def index_of(self, theta: float) -> int:
        """Index of the grid point closest to ``theta``."""
        return int(round(theta * (self.m_points - 1)))

    @classmethod
    def for_modes(cls, n_modes: int) -> "GridSpec":
        return cls(4 * n_modes + 1)


@lru_cache(maxsize=32)
def _theta(m: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, m)
    t.flags.writeable = False
    return t


@lru_cache(maxsize=32)
def _trap_weights(m: int) -> np.ndarray:
    w = np.full(m, 1.0 / (m - 1))
    w[0] = w[-1] = 0.5 / (m - 1)
    w.flags.writeable = False
    return w


@lru_cache(maxsize=32)
def _basis_matrix(m: int, n_modes: int) -> np.ndarray:
    """(m, n_modes + 1) matrix with entries e_n(theta_i)."""
    theta = _theta(m)
    n = np.arange(n_modes + 1)
    E = SQRT2 * np.cos(np.pi * np.outer(theta, n))
    E[:, 0] = 1.0
    E.flags.writeable = False
    return E


@lru_cache(maxsize=32)
def _analysis_matrix(m: int, n_modes: int) -> np.ndarray:
    E = _basis_matrix(m, n_modes) * _trap_weights(m)[:, None]
    E.flags.writeable = False
    return E


def mode_numbers(n_modes: int) -> np.ndarray:
    return np.arange(n_modes + 1)


def laplacian_eigenvalues(n_modes: int) -> np.ndarray:
    """Eigenvalues ``-(n pi)^2`` of A for n = 0..n_modes."""
    n = mode_numbers(n_modes)
    return -((n * np.pi) ** 2)


@dataclass(frozen=True, eq=False)
class Field:
    """A real function on [0, 1] given by cosine coefficients a_0..a_N."""

    coeffs: np.ndarray

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("Field needs a 1-d coefficient array with at least two entries")
        a.flags.writeable = False
        object.__setattr__(self, "coeffs", a)

    @property
    def n_modes(self) -> int:
        return self.coeffs.size - 1

    @property
    def average(self) -> float:
        return float(self.coeffs[0])

    def __add__(self, other: "Field") -> "Field":
        a, b = _pad(self, other)
        return Field(a + b)

    def __sub__(self, other: "Field") -> "Field":
        a, b = _pad(self, other)
        return Field(a - b)

    def __mul__(self, s: float) -> "Field":
        return Field(self.coeffs * float(s))

    __rmul__ = __mul__

    def __truediv__(self, s: float) -> "Field":
        return Field(self.coeffs / float(s))

    def __neg__(self) -> "Field":
        return Field(-self.coeffs)

    def allclose(self, other: "Field", atol: float = 1e-12) -> bool:
        a, b = _pad(self, other)
        return bool(np.allclose(a, b, rtol=0.0, atol=atol))

    def padded(self, n_modes: int) -> "Field":
        if n_modes < self.n_modes:
            raise ValueError("padding cannot drop modes")
        a = np.zeros(n_modes + 1)
        a[: self.coeffs.size] = self.coeffs
        return Field(a)

    @classmethod
    def basis(cls, n: int, n_modes: int) -> "Field":
        if not 0 <= n <= n_modes:
            raise ValueError(f"mode {n} outside 0..{n_modes}")
        a = np.zeros(n_modes + 1)
        a[n] = 1.0
        return cls(a)

    @classmethod
    def constant(cls, c: float, n_modes: int) -> "Field":
        return cls.basis(0, n_modes) * c

    def to_json(self) -> str:
        return json.dumps({"n_modes": self.n_modes, "coeffs": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Field":
        d = json.loads(text)
        coeffs = np.asarray(d["coeffs"], dtype=float)
        if coeffs.size != int(d["n_modes"]) + 1:
            raise ValueError("coefficient count does not match the n_modes header")
        return cls(coeffs)


def _pad(f: Field, g: Field) -> tuple[np.ndarray, np.ndarray]:
    n = max(f.n_modes, g.n_modes)
    return f.padded(n).coeffs, g.padded(n).coeffs


def _check_unit(x, name: str):
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)) or np.any(~np.isfinite(x)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


def cosine_basis_eval(n: int, theta):
    """e_n(theta): 1 for n = 0, sqrt(2) cos(n pi theta) otherwise."""
    if n < 0:
        raise ValueError("mode index must be >= 0")
    theta = _check_unit(theta, "theta")
    if n == 0:
        out = np.ones_like(theta)
    else:
        out = SQRT2 * np.cos(n * np.pi * theta)
    return float(out) if out.ndim == 0 else out


def kernel_q(theta, sigma):
    """Kernel of Q = (-A)^{-1} on mean-zero functions."""
    t = _check_unit(theta, "theta")
    s = _check_unit(sigma, "sigma")
    out = np.minimum(t, s) + 0.5 * (t**2 + s**2) - t - s + 1.0 / 3.0
    return float(out) if np.ndim(out) == 0 else out


def apply_A(f: Field) -> Field:
    return Field(f.coeffs * laplacian_eigenvalues(f.n_modes))


def _qbar_weights(n_modes: int) -> np.ndarray:
    w = np.ones(n_modes + 1)
    n = mode_numbers(n_modes)[1:]
    w[1:] = 1.0 / (n * np.pi) ** 2
    return w


def apply_Qbar(f: Field) -> Field:
    return Field(f.coeffs * _qbar_weights(f.n_modes))


def project_pi(f: Field) -> Field:
    a = f.coeffs.copy()
    a[0] = 0.0
    return Field(a)


def second_derivative(f: Field) -> Field:
    """h'' for a finite cosine sum; identical to apply_A."""
    return apply_A(f)


def h_inner(f: Field, g: Field) -> float:
    a, b = _pad(f, g)
    return float(np.sum(a * b * _qbar_weights(a.size - 1)))


def h_norm(f: Field) -> float:
    return float(np.sqrt(h_inner(f, f)))


def l2_inner(f: Field, g: Field) -> float:
    a, b = _pad(f, g)
    return float(a @ b)


def l2_norm(f: Field) -> float:
    return float(np.linalg.norm(f.coeffs))


def hgamma_norm(f: Field, gamma: float) -> float:
    """The H^{-gamma} norm with weights (1 + n)^{-2 gamma}."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n = mode_numbers(f.n_modes)
    return float(np.sqrt(np.sum((1.0 + n) ** (-2.0 * gamma) * f.coeffs**2)))


def h_norm_coeffs(a: np.ndarray) -> np.ndarray:
    """H norm along the last axis of a batch of coefficient arrays."""
    a = np.asarray(a)
    return np.sqrt(np.sum(a**2 * _qbar_weights(a.shape[-1] - 1), axis=-1))


def synthesize(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Point values on the grid for coefficients along the last axis."""
    coeffs = np.asarray(coeffs, dtype=float)
    E = _basis_matrix(grid.m_points, coeffs.shape[-1] - 1)
    return coeffs @ E.T


def analyze(values: np.ndarray, grid: GridSpec, n_modes: int) -> np.ndarray:
    """Cosine coefficients (trapezoid quadrature) for values along the last axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.m_points:
        raise ValueError("values do not match the grid size")
    if grid.m_points < 2 * n_modes:
        warnings.warn(
            f"{grid.m_points} collocation points for {n_modes} modes: coefficients may alias",
            RuntimeWarning,
            stacklevel=2,
        )
    return values @ _analysis_matrix(grid.m_points, n_modes)


def to_values(f: Field, grid: GridSpec) -> np.ndarray:
    return synthesize(f.coeffs, grid)


def to_coeffs(values, grid: GridSpec, n_modes: int) -> Field:
    return Field(analyze(np.asarray(values, dtype=float), grid, n_modes))


def inner_on_grid(values: np.ndarray, g: np.ndarray, grid: GridSpec) -> np.ndarray:
    """L2 inner product by trapezoid of path values against a fixed profile ``g``."""
    return np.asarray(values) @ (grid.weights * g)
