"""Streaming moments and batch-means confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Z95 = 1.96
DEFAULT_BATCHES = 32


class TooFewSamples(ValueError):
    pass


@dataclass
class RunningMoments:
    """Welford single-pass mean/variance accumulator."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> "RunningMoments":
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        return self

    def extend(self, xs: Iterable[float]) -> "RunningMoments":
        for x in xs:
            self.update(x)
        return self

    @property
    def variance(self) -> float | None:
        """Sample variance; ``None`` until two values are seen."""
        if self.count < 2:
            return None
        return self.m2 / (self.count - 1)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        # Chan et al. pairwise combination.
        n = self.count + other.count
        if n == 0:
            return RunningMoments()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningMoments(n, mean, m2)


@dataclass(frozen=True)
class BatchMeansCI:
    n_batches: int
    batch_means: tuple[float, ...] = field(repr=False)
    point: float
    half_width_95: float

    @property
    def low(self) -> float:
        return self.point - self.half_width_95

    @property
    def high(self) -> float:
        return self.point + self.half_width_95

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


def ci_from_batch_means(batch_means: Sequence[float]) -> BatchMeansCI:
    b = np.asarray(batch_means, dtype=float)
    k = len(b)
    if k < 2:
        raise TooFewSamples(f"need at least 2 batch means, got {k}")
    point = float(b.mean())
    hw = Z95 * float(b.std(ddof=1)) / math.sqrt(k)
    return BatchMeansCI(k, tuple(float(x) for x in b), point, hw)


def batch_means(samples: Sequence[float], n_batches: int = DEFAULT_BATCHES) -> np.ndarray:
    """Means of ``n_batches`` equal contiguous batches.

    The oldest ``len % n_batches`` samples are dropped so batches are equal.
    """
    x = np.asarray(samples, dtype=float)
    if n_batches < 2 or len(x) < 2 * n_batches:
        raise TooFewSamples(f"{len(x)} samples is too few for {n_batches} batches")
    size = len(x) // n_batches
    x = x[len(x) - size * n_batches:]
    return x.reshape(n_batches, size).mean(axis=1)


def batch_ci(samples: Sequence[float], n_batches: int = DEFAULT_BATCHES) -> BatchMeansCI:
    return ci_from_batch_means(batch_means(samples, n_batches))
