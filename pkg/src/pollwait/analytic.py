"""Closed-form mean waiting time for polling systems.

The mean wait splits into the time a job waits while the server works
(``mean_p``) and while it travels (``mean_m``). Under Poisson arrivals and a
common mean job size,

    mean_p = rho * residual + rho * mean_w
    mean_w = mean_p + mean_m

so ``mean_w = (rho * residual + mean_m) / (1 - rho)`` with
``residual = E[S^2] / (2 E[S])``.

``mean_m`` is a travel-time average over server states. A ``SwitchMatrix``
holds, per server state, the travel time until a job at each queue can be
reached (``pi``), the probability of each state given the server is serving
(``state_weights``), and the mean travel to reach each queue from a random
point of the moving path (``travel_residual``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .model import LoadProfile, OrderKind, Policy, SystemConfig, validate


class DimensionMismatch(ValueError):
    pass


class PolicyMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SwitchMatrix:
    states: tuple[str, ...]
    pi: np.ndarray
    state_weights: np.ndarray
    travel_residual: np.ndarray
    cycle: float

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_queues(self) -> int:
        return self.pi.shape[1]


@dataclass(frozen=True)
class AnalyticReport:
    residual: float
    big_pi: float
    mean_p: float
    mean_w: float
    profile: LoadProfile

    @property
    def mean_m(self) -> float:
        return self.big_pi

    def to_dict(self) -> dict[str, Any]:
        return {
            "residual": self.residual,
            "pi": self.big_pi,
            "mean_m": self.mean_m,
            "mean_p": self.mean_p,
            "mean_w": self.mean_w,
            "profile": self.profile.to_dict(),
        }


def residual_term(profile: LoadProfile) -> float:
    """Mean remaining work of the job in service seen by a random observer."""
    return profile.second_moment_s / (2.0 * profile.mean_s)


def _mean_visit_times(
    route: Sequence[int],
    hops: Sequence[float],
    rho_i: Sequence[float],
    policies: Sequence[Policy],
) -> np.ndarray:
    """Expected duration of each stop on a cyclic route.

    For a stop at queue q preceded (cyclically) by the previous stop at q:
    exhaustive serves the work that arrived since that visit ended, so
    V = rho_q / (1 - rho_q) * (time since the previous visit ended);
    gated serves the work that arrived since that visit started, so
    V = rho_q * (time since the previous visit started).
    Both are linear in the V's; solve the resulting system.
    """
    k = len(route)
    a = np.zeros((k, k))
    b = np.zeros(k)
    for s in range(k):
        q = route[s]
        prev = next(d for d in range(1, k + 1) if route[(s - d) % k] == q)
        if policies[q] is Policy.GATED:
            coef = rho_i[q]
            between = range(s - prev, s)  # previous visit included
        else:
            coef = rho_i[q] / (1.0 - rho_i[q])
            between = range(s - prev + 1, s)
        b[s] = coef * math.fsum(hops[t % k] for t in range(s - prev, s))
        for t in between:
            a[s, t % k] += coef
    return np.linalg.solve(np.eye(k) - a, b)


def _travel_to_next(route: Sequence[int], hops: Sequence[float], s: int, q: int, strict: bool) -> float:
    """Travel time from stop ``s`` until the route next reaches queue ``q``."""
    k = len(route)
    if not strict and route[s] == q:
        return 0.0
    dist = 0.0
    for d in range(1, k + 1):
        dist += hops[(s + d - 1) % k]
        if route[(s + d) % k] == q:
            return dist
    return math.inf


def route_matrix(
    route: Sequence[int],
    hops: Sequence[float],
    rho_i: Sequence[float],
    policies: Sequence[Policy],
) -> SwitchMatrix:
    """Switch matrix for a server following a fixed cyclic list of stops.

    ``hops[s]`` is the travel time from stop ``s`` to stop ``s + 1``; unequal
    values model heterogeneous switch times.
    """
    n = len(rho_i)
    k = len(route)
    if len(hops) != k or len(policies) != n:
        raise DimensionMismatch("route, hops and per-queue inputs disagree in length")
    pi = np.empty((k, n))
    for s in range(k):
        for j in range(n):
            strict = policies[j] is Policy.GATED
            pi[s, j] = _travel_to_next(route, hops, s, j, strict)

    cycle = math.fsum(hops)
    resid = np.zeros(n)
    for j in range(n):
        stops = [s for s in range(k) if route[s] == j]
        if not stops:
            resid[j] = math.inf
        elif cycle > 0.0:
            # Gaps between successive visits in travel time; a uniform point on
            # the moving path falls in a gap with probability proportional to it.
            gaps = [_travel_to_next(route, hops, s, j, strict=True) for s in stops]
            resid[j] = math.fsum(g * g for g in gaps) / (2.0 * cycle)

    if math.fsum(rho_i) > 0.0:
        # Visit durations scale linearly with the hop times; with zero travel
        # use unit hops, which gives the alpha -> 0 limit of the weights.
        visits = _mean_visit_times(route, hops if cycle > 0.0 else [1.0] * k, rho_i, policies)
        weights = visits / visits.sum()
    else:
        weights = np.full(k, 1.0 / k)

    labels = tuple(f"stop{s + 1}:q{route[s] + 1}" for s in range(k))
    return SwitchMatrix(labels, pi, weights, resid, cycle)


def random_matrix(n: int, alpha: float, rho_i: Sequence[float], policies: Sequence[Policy]) -> SwitchMatrix:
    """Switch matrix for a server that picks each next queue uniformly among the others.

    From any queue other than j the next hop reaches j with probability
    1/(n-1), so the expected number of hops to reach j is n - 1.
    """
    if n < 3:
        return route_matrix(list(range(n)), [alpha] * n, rho_i, policies)
    pi = np.full((n, n), (n - 1) * alpha)
    for j in range(n):
        pi[j, j] = n * alpha if policies[j] is Policy.GATED else 0.0
    # Moving toward j (probability 1/n): half a hop left on average;
    # toward another queue: half a hop, then n - 1 expected hops.
    resid = np.full(n, alpha / 2.0 + (n - 1) ** 2 * alpha / n)
    rho = math.fsum(rho_i)
    weights = np.asarray(rho_i, dtype=float) / rho if rho > 0 else np.full(n, 1.0 / n)
    labels = tuple(f"q{j + 1}" for j in range(n))
    return SwitchMatrix(labels, pi, weights, resid, n * alpha)


def switch_matrix(config: SystemConfig, profile: LoadProfile | None = None) -> SwitchMatrix:
    if profile is None:
        profile = validate(config, allow_unequal_means=True)
    policies = [q.policy for q in config.queues]
    n = config.n_queues
    alpha = config.switch_time
    if config.order.kind is OrderKind.RANDOM:
        return random_matrix(n, alpha, profile.rho_i, policies)
    route = config.order.route(n)
    return route_matrix(route, [alpha] * len(route), profile.rho_i, policies)


def _masked_average(weights: np.ndarray, values: np.ndarray) -> float:
    # Queues without load may be unreachable (infinite travel) but carry no weight.
    mask = weights > 0
    return float(np.dot(weights[mask], values[mask]))


def moving_term_general(profile: LoadProfile, matrix: SwitchMatrix) -> float:
    """Mean travel portion of the wait (E[M]) from an arbitrary switch matrix.

    With probability ``1 - rho`` an arrival finds the server moving and waits
    the travel residual for its queue; with probability ``rho`` it finds the
    server serving in state i and waits ``pi[i, j]``.
    """
    n = profile.n_queues
    if matrix.n_queues != n or len(matrix.state_weights) != matrix.n_states:
        raise DimensionMismatch(
            f"switch matrix is {matrix.n_states}x{matrix.n_queues} for a {n}-queue profile"
        )
    rho = profile.rho
    if rho == 0.0:
        reachable = matrix.travel_residual[np.isfinite(matrix.travel_residual)]
        return float(np.mean(reachable))
    dest = np.asarray(profile.rho_i, dtype=float) / rho
    moving = _masked_average(dest, matrix.travel_residual)
    serving = 0.0
    for i in range(matrix.n_states):
        w = matrix.state_weights[i]
        if w > 0:
            serving += w * _masked_average(dest, matrix.pi[i])
    return float((1.0 - rho) * moving + rho * serving)


def moving_term_closed(config: SystemConfig, profile: LoadProfile | None = None) -> float:
    """(N alpha / 2) * (1 - rho * sum (rho_i / rho)^2); circular exhaustive only."""
    if config.order.kind is not OrderKind.CIRCULAR or any(
        q.policy is not Policy.EXHAUSTIVE for q in config.queues
    ):
        raise PolicyMismatch("closed form holds only for circular order with exhaustive service")
    if profile is None:
        profile = validate(config, allow_unequal_means=True)
    half_cycle = config.n_queues * config.switch_time / 2.0
    rho = profile.rho
    if rho == 0.0:
        return half_cycle
    concentration = math.fsum((r / rho) ** 2 for r in profile.rho_i)
    return half_cycle * (1.0 - rho * concentration)


def mean_wait(profile: LoadProfile, big_pi: float) -> AnalyticReport:
    residual = residual_term(profile)
    rho = profile.rho
    mean_w = (rho * residual + big_pi) / (1.0 - rho)
    mean_p = rho * residual + rho * mean_w
    return AnalyticReport(residual=residual, big_pi=big_pi, mean_p=mean_p, mean_w=mean_w, profile=profile)


def analyze(config: SystemConfig, *, allow_unequal_means: bool = False) -> AnalyticReport:
    profile = validate(config, allow_unequal_means=allow_unequal_means)
    big_pi = moving_term_general(profile, switch_matrix(config, profile))
    return mean_wait(profile, big_pi)
