"""Seed splitting, batched replication and Monte Carlo summaries.

All randomness descends from one integer root seed.  A named component
gets its own ``SeedSequence`` whose spawn key is derived from the name, and
a batched computation gives batch ``k`` the child ``k`` of that sequence.
Batch boundaries depend only on the sample count and the batch size, never
on the number of workers, so results are reproducible bit for bit.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

DEFAULT_BATCH = 20_000


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode())


def seed_sequence(root: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(n) for n in names))


def make_rng(root: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(root, *names)))


def batch_sizes(n_total: int, batch_size: int = DEFAULT_BATCH) -> list[int]:
    n_total = int(n_total)
    if n_total <= 0:
        return []
    full, rest = divmod(n_total, batch_size)
    return [batch_size] * full + ([rest] if rest else [])


def batched_map(
    fn: Callable[[np.random.Generator, int], object],
    n_total: int,
    root: int,
    name,
    *,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> list:
    """Run ``fn(rng, n)`` over fixed batches; results come back in batch order."""
    sizes = batch_sizes(n_total, batch_size)

    def run(k):
        return fn(make_rng(root, name, k), sizes[k])

    if workers <= 1 or len(sizes) <= 1:
        return [run(k) for k in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(sizes))))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("an MC estimate needs at least two samples")

    def __add__(self, other: "McEstimate") -> "McEstimate":
        # independent estimators
        return McEstimate(self.mean + other.mean, math.hypot(self.stderr, other.stderr), min(self.n, other.n))

    def __sub__(self, other: "McEstimate") -> "McEstimate":
        return McEstimate(self.mean - other.mean, math.hypot(self.stderr, other.stderr), min(self.n, other.n))

    def __neg__(self) -> "McEstimate":
        return McEstimate(-self.mean, self.stderr, self.n)

    def scaled(self, s: float) -> "McEstimate":
        return McEstimate(self.mean * s, self.stderr * abs(s), self.n)

    @property
    def z(self) -> float:
        """Mean in units of its standard error (inf for a nonzero exact value)."""
        if self.stderr == 0.0:
            return 0.0 if self.mean == 0.0 else math.copysign(math.inf, self.mean)
        return self.mean / self.stderr

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n}

    @classmethod
    def from_samples(cls, x) -> "McEstimate":
        acc = Moments()
        acc.add(np.asarray(x, dtype=float).ravel())
        return acc.estimate()

    @classmethod
    def exact(cls, value: float, n: int = 2) -> "McEstimate":
        return cls(float(value), 0.0, n)


class Moments:
    """Running mean and variance over batches.

    Batch sums are combined with ``math.fsum`` and batch second moments are
    merged around the global mean, so the result depends only on the batch
    contents and their order.
    """

    def __init__(self):
        self._counts: list[int] = []
        self._sums: list[np.ndarray] = []
        self._m2: list[np.ndarray] = []

    def add(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape[0] == 0:
            return
        mean = x.mean(axis=0)
        self._counts.append(x.shape[0])
        self._sums.append(np.atleast_1d(x.sum(axis=0)))
        self._m2.append(np.atleast_1d(((x - mean) ** 2).sum(axis=0)))

    @property
    def n(self) -> int:
        return sum(self._counts)

    @staticmethod
    def _fsum(parts) -> np.ndarray:
        arr = np.stack(parts)
        return np.array([math.fsum(arr[:, j]) for j in range(arr.shape[1])])

    def mean(self) -> np.ndarray:
        return self._fsum(self._sums) / self.n

    def var(self) -> np.ndarray:
        m = self.mean()
        shifts = [c * (s / c - m) ** 2 for c, s in zip(self._counts, self._sums)]
        return (self._fsum(self._m2) + self._fsum(shifts)) / (self.n - 1)

    def estimate(self) -> McEstimate:
        m, v = self.mean(), self.var()
        if m.size != 1:
            raise ValueError("estimate() is for scalar streams; use estimates()")
        return McEstimate(float(m[0]), float(math.sqrt(v[0] / self.n)), self.n)

    def estimates(self) -> list[McEstimate]:
        m, v = self.mean(), self.var()
        return [McEstimate(float(a), float(math.sqrt(b / self.n)), self.n) for a, b in zip(m, v)]


def estimate_from_batches(parts: Sequence[np.ndarray]) -> McEstimate:
    acc = Moments()
    for p in parts:
        acc.add(np.asarray(p, dtype=float).ravel())
    return acc.estimate()


@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float
    n1: int
    n2: int
    label: str = ""

    def passed(self, alpha: float) -> bool:
        return self.pvalue > alpha

    def as_dict(self) -> dict:
        return {"label": self.label, "statistic": self.statistic, "pvalue": self.pvalue, "n1": self.n1, "n2": self.n2}


def ks_two_sample(x, y, label: str = "") -> KsResult:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    res = stats.ks_2samp(x, y)
    return KsResult(float(res.statistic), float(res.pvalue), x.size, y.size, label)


def bonferroni_alpha(alpha: float, n_tests: int) -> float:
    return alpha / max(int(n_tests), 1)
