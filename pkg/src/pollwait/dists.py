"""Service-time laws with exact moments and seeded sampling.

Each law gives its first and second moment in closed form (used by the
analytic engine) and draws variates from a numpy ``Generator`` (used by the
simulator), so both sides agree on E[S] and E[S^2] by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Union

import numpy as np


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")
    return value


@dataclass(frozen=True)
class Deterministic:
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", _positive("value", self.value))

    def mean(self) -> float:
        return self.value

    def second_moment(self) -> float:
        return self.value * self.value

    def sample(self, rng: np.random.Generator) -> float:
        return self.value

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.value)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "deterministic", "value": self.value}


@dataclass(frozen=True)
class Exponential:
    mean_value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean_value", _positive("mean", self.mean_value))

    def mean(self) -> float:
        return self.mean_value

    def second_moment(self) -> float:
        return 2.0 * self.mean_value * self.mean_value

    # Inverse transform on 1 - u so that u == 0.0 cannot produce log(0).
    def sample(self, rng: np.random.Generator) -> float:
        return -self.mean_value * math.log(1.0 - rng.random())

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return -self.mean_value * np.log1p(-rng.random(size))

    def to_dict(self) -> dict[str, Any]:
        return {"type": "exponential", "mean": self.mean_value}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0.0 or hi <= lo:
            raise ValueError(f"uniform needs 0 <= lo < hi, got lo={lo!r} hi={hi!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def second_moment(self) -> float:
        lo, hi = self.lo, self.hi
        return (lo * lo + lo * hi + hi * hi) / 3.0

    def sample(self, rng: np.random.Generator) -> float:
        return self.lo + (self.hi - self.lo) * rng.random()

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random(size)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Hyperexponential2:
    """Mixture: with probability ``p`` an exponential of mean ``mean1``,
    otherwise an exponential of mean ``mean2``."""

    p: float
    mean1: float
    mean2: float

    def __post_init__(self) -> None:
        p = float(self.p)
        if not 0.0 < p < 1.0:
            raise ValueError(f"hyperexp2 p must lie in (0, 1), got {p!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "mean1", _positive("mean1", self.mean1))
        object.__setattr__(self, "mean2", _positive("mean2", self.mean2))

    def mean(self) -> float:
        return self.p * self.mean1 + (1.0 - self.p) * self.mean2

    def second_moment(self) -> float:
        return 2.0 * (self.p * self.mean1**2 + (1.0 - self.p) * self.mean2**2)

    def sample(self, rng: np.random.Generator) -> float:
        branch = self.mean1 if rng.random() < self.p else self.mean2
        return -branch * math.log(1.0 - rng.random())

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random((2, size))
        means = np.where(u[0] < self.p, self.mean1, self.mean2)
        return -means * np.log1p(-u[1])

    def to_dict(self) -> dict[str, Any]:
        return {"type": "hyperexp2", "p": self.p, "mean1": self.mean1, "mean2": self.mean2}


ServiceDistribution = Union[Deterministic, Exponential, Uniform, Hyperexponential2]

_FIELDS = {
    "deterministic": (Deterministic, ("value",)),
    "exponential": (Exponential, ("mean",)),
    "uniform": (Uniform, ("lo", "hi")),
    "hyperexp2": (Hyperexponential2, ("p", "mean1", "mean2")),
}


def scv(dist: ServiceDistribution) -> float:
    """Squared coefficient of variation."""
    m = dist.mean()
    return dist.second_moment() / (m * m) - 1.0


def dist_from_dict(obj: Any) -> ServiceDistribution:
    """Parse a tagged distribution object such as ``{"type": "exponential", "mean": 1.0}``.

    Missing or unknown keys raise ``ValueError``.
    """
    if not isinstance(obj, dict):
        raise ValueError(f"service must be an object, got {type(obj).__name__}")
    tag = obj.get("type")
    if tag not in _FIELDS:
        raise ValueError(f"unknown service type {tag!r}; expected one of {sorted(_FIELDS)}")
    cls, names = _FIELDS[tag]
    extra = set(obj) - {"type", *names}
    if extra:
        raise ValueError(f"unknown keys for {tag} service: {sorted(extra)}")
    missing = [n for n in names if n not in obj]
    if missing:
        raise ValueError(f"{tag} service is missing {missing}")
    values = []
    for n in names:
        v = obj[n]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"{tag}.{n} must be a number, got {v!r}")
        values.append(float(v))
    return cls(*values)
