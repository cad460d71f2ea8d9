"""Polling-system configuration, validation and derived load quantities.

Queue indices are 0-based in this API and 1-based in every file the package
reads or writes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

from .dists import ServiceDistribution, dist_from_dict

MEAN_RTOL = 1e-9


class ConfigError(ValueError):
    """Malformed configuration document."""


class ValidationError(ValueError):
    """Configuration violates a modelling assumption."""

    name = "ValidationError"

    def __str__(self) -> str:
        return f"{self.name}: {super().__str__()}"


class UnstableSystem(ValidationError):
    name = "UnstableSystem"


class UnequalMeans(ValidationError):
    name = "UnequalMeans"

    def __init__(self, first: int, second: int, mean_first: float, mean_second: float):
        self.pair = (first, second)
        super().__init__(
            f"queue {first + 1} has mean service {mean_first!r} but queue {second + 1} "
            f"has {mean_second!r}"
        )


class EmptySystem(ValidationError):
    name = "EmptySystem"


class BadExplicitOrder(ValidationError):
    name = "BadExplicitOrder"


class Discipline(str, Enum):
    FCFS = "fcfs"
    LCFS = "lcfs"


class Policy(str, Enum):
    EXHAUSTIVE = "exhaustive"
    GATED = "gated"


class OrderKind(str, Enum):
    CIRCULAR = "circular"
    ELEVATOR = "elevator"
    RANDOM = "random"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class PollingOrder:
    kind: OrderKind = OrderKind.CIRCULAR
    sequence: tuple[int, ...] = ()

    @classmethod
    def circular(cls) -> "PollingOrder":
        return cls(OrderKind.CIRCULAR)

    @classmethod
    def elevator(cls) -> "PollingOrder":
        return cls(OrderKind.ELEVATOR)

    @classmethod
    def random_next(cls) -> "PollingOrder":
        return cls(OrderKind.RANDOM)

    @classmethod
    def explicit(cls, sequence: Sequence[int]) -> "PollingOrder":
        return cls(OrderKind.EXPLICIT, tuple(int(q) for q in sequence))

    def route(self, n_queues: int) -> list[int] | None:
        """Cyclic stop list for deterministic orders, ``None`` for random-next.

        Elevator with one or two queues degenerates to circular.
        """
        if self.kind is OrderKind.RANDOM:
            return None
        if self.kind is OrderKind.EXPLICIT:
            return list(self.sequence)
        if self.kind is OrderKind.ELEVATOR and n_queues > 2:
            return list(range(n_queues)) + list(range(n_queues - 2, 0, -1))
        return list(range(n_queues))

    def to_json(self) -> Any:
        if self.kind is OrderKind.EXPLICIT:
            return {"explicit": [q + 1 for q in self.sequence]}
        return self.kind.value


@dataclass(frozen=True)
class QueueSpec:
    arrival_rate: float
    service: ServiceDistribution
    discipline: Discipline = Discipline.FCFS
    policy: Policy = Policy.EXHAUSTIVE

    def __post_init__(self) -> None:
        rate = float(self.arrival_rate)
        if not math.isfinite(rate) or rate < 0.0:
            raise ConfigError(f"arrival rate must be finite and >= 0, got {rate!r}")
        object.__setattr__(self, "arrival_rate", rate)
        object.__setattr__(self, "discipline", Discipline(self.discipline))
        object.__setattr__(self, "policy", Policy(self.policy))


@dataclass(frozen=True)
class SystemConfig:
    queues: tuple[QueueSpec, ...]
    switch_time: float = 0.0
    order: PollingOrder = field(default_factory=PollingOrder.circular)

    def __post_init__(self) -> None:
        object.__setattr__(self, "queues", tuple(self.queues))
        if not self.queues:
            raise ConfigError("a system needs at least one queue")
        alpha = float(self.switch_time)
        if not math.isfinite(alpha) or alpha < 0.0:
            raise ConfigError(f"switch time must be finite and >= 0, got {alpha!r}")
        object.__setattr__(self, "switch_time", alpha)

    @property
    def n_queues(self) -> int:
        return len(self.queues)

    def with_rates(self, rates: Sequence[float]) -> "SystemConfig":
        qs = tuple(replace(q, arrival_rate=r) for q, r in zip(self.queues, rates, strict=True))
        return replace(self, queues=qs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.switch_time,
            "order": self.order.to_json(),
            "queues": [
                {
                    "lambda": q.arrival_rate,
                    "service": q.service.to_dict(),
                    "discipline": q.discipline.value,
                    "policy": q.policy.value,
                }
                for q in self.queues
            ],
        }


@dataclass(frozen=True)
class LoadProfile:
    n_queues: int
    lambda_total: float
    rho_i: tuple[float, ...]
    rho: float
    mean_s: float
    second_moment_s: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_queues": self.n_queues,
            "lambda_total": self.lambda_total,
            "rho_i": list(self.rho_i),
            "rho": self.rho,
            "mean_s": self.mean_s,
            "second_moment_s": self.second_moment_s,
        }


def aggregate_moments(config: SystemConfig) -> tuple[float, float]:
    """Moments of the size of an arbitrary arriving job (the λ_i/λ mixture)."""
    lam = math.fsum(q.arrival_rate for q in config.queues)
    if lam <= 0.0:
        raise EmptySystem("every queue has arrival rate 0")
    mean = math.fsum(q.arrival_rate * q.service.mean() for q in config.queues) / lam
    m2 = math.fsum(q.arrival_rate * q.service.second_moment() for q in config.queues) / lam
    return mean, m2


def _check_means(config: SystemConfig) -> None:
    loaded = [i for i, q in enumerate(config.queues) if q.arrival_rate > 0.0]
    ref = loaded[0]
    ref_mean = config.queues[ref].service.mean()
    for i in range(config.n_queues):
        m = config.queues[i].service.mean()
        if abs(m - ref_mean) > MEAN_RTOL * max(abs(m), abs(ref_mean)):
            raise UnequalMeans(ref, i, ref_mean, m)


def _check_order(config: SystemConfig) -> None:
    order = config.order
    if order.kind is not OrderKind.EXPLICIT:
        return
    n = config.n_queues
    if not order.sequence:
        raise BadExplicitOrder("explicit order is empty")
    bad = [q + 1 for q in order.sequence if not 0 <= q < n]
    if bad:
        raise BadExplicitOrder(f"explicit order names unknown queues {bad}")
    seen = set(order.sequence)
    missing = [i + 1 for i, q in enumerate(config.queues) if q.arrival_rate > 0 and i not in seen]
    if missing:
        raise BadExplicitOrder(f"loaded queues {missing} are never visited")


def validate(config: SystemConfig, *, allow_unequal_means: bool = False) -> LoadProfile:
    """Check the modelling assumptions and derive the load profile.

    With ``allow_unequal_means`` the equal-mean check is skipped and ``mean_s``
    is the arrival-weighted mixture mean; this only exists for negative-control
    experiments.
    """
    _check_order(config)
    mean_s, m2 = aggregate_moments(config)
    if not allow_unequal_means:
        _check_means(config)
    lam = math.fsum(q.arrival_rate for q in config.queues)
    rho_i = tuple(q.arrival_rate * q.service.mean() for q in config.queues)
    rho = math.fsum(rho_i)
    if rho >= 1.0:
        raise UnstableSystem(f"total load rho = {rho!r} >= 1")
    return LoadProfile(
        n_queues=config.n_queues,
        lambda_total=lam,
        rho_i=rho_i,
        rho=rho,
        mean_s=mean_s,
        second_moment_s=m2,
    )


_TOP_KEYS = {"alpha", "order", "queues"}
_QUEUE_KEYS = {"lambda", "service", "discipline", "policy"}


def _number(value: Any, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}")
    return float(value)


def _parse_order(obj: Any) -> PollingOrder:
    if isinstance(obj, str):
        try:
            kind = OrderKind(obj)
        except ValueError:
            raise ConfigError(f"unknown order {obj!r}") from None
        if kind is OrderKind.EXPLICIT:
            raise ConfigError('explicit order must be given as {"explicit": [...]}')
        return PollingOrder(kind)
    if isinstance(obj, dict) and set(obj) == {"explicit"} and isinstance(obj["explicit"], list):
        seq = obj["explicit"]
        if not all(isinstance(q, int) and not isinstance(q, bool) for q in seq):
            raise ConfigError("explicit order entries must be integer queue numbers")
        return PollingOrder.explicit(q - 1 for q in seq)
    raise ConfigError(f"cannot parse order {obj!r}")


def config_from_dict(doc: Any) -> SystemConfig:
    """Build a config from the JSON document form. Unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    if "queues" not in doc or not isinstance(doc["queues"], list):
        raise ConfigError("config needs a 'queues' list")
    queues = []
    for i, qd in enumerate(doc["queues"], start=1):
        if not isinstance(qd, dict):
            raise ConfigError(f"queue {i} must be an object")
        extra = set(qd) - _QUEUE_KEYS
        if extra:
            raise ConfigError(f"queue {i}: unknown keys {sorted(extra)}")
        if "lambda" not in qd or "service" not in qd:
            raise ConfigError(f"queue {i}: 'lambda' and 'service' are required")
        try:
            service = dist_from_dict(qd["service"])
            queues.append(
                QueueSpec(
                    arrival_rate=_number(qd["lambda"], f"queue {i} lambda"),
                    service=service,
                    discipline=Discipline(qd.get("discipline", "fcfs")),
                    policy=Policy(qd.get("policy", "exhaustive")),
                )
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"queue {i}: {exc}") from None
    return SystemConfig(
        queues=tuple(queues),
        switch_time=_number(doc.get("alpha", 0.0), "alpha"),
        order=_parse_order(doc.get("order", "circular")),
    )


def load_config(path: str | Path) -> SystemConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)
