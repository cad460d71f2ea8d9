"""Discrete-event simulation of a patrolling polling server.

The server is always either travelling between stops or serving a job: on
reaching a queue it starts work immediately if there is anything to do under
the queue's policy, otherwise it leaves at once for the next stop. Two clocks
accumulate total moving and total serving time, so the part of a job's wait
spent in each state is a difference of clock readings.

Waiting is measured to start of service. ``N(t)`` counts jobs that have
arrived but not begun service.
"""
from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, NamedTuple, Sequence

import numpy as np

from .dists import Exponential
from .model import Discipline, PollingOrder, Policy, SystemConfig, validate
from .stats import DEFAULT_BATCHES, BatchMeansCI, batch_means, ci_from_batch_means

_ARRIVAL, _SERVICE_DONE, _SWITCH_DONE = 0, 1, 2
_MOVING, _SERVING, _AT_QUEUE = 0, 1, 2
_BLOCK = 8192


class InvalidHorizon(ValueError):
    pass


class JobRecord(NamedTuple):
    queue: int
    arrived_at: float
    service_begun_at: float
    wait: float
    wait_moving: float
    wait_serving: float
    n_seen: int


class Router:
    """Where the server goes next. Never looks at queue contents."""

    def __init__(self, order: PollingOrder, n_queues: int, rng: np.random.Generator | None = None):
        self.n = n_queues
        route = order.route(n_queues)
        self.random = route is None and n_queues > 2
        if route is None:
            route = list(range(n_queues))
        self.route = route
        self.pos = 0
        self.queue = route[0]
        self._picks: Iterator[int] | None = None
        if self.random:
            if rng is None:
                raise ValueError("random-next routing needs a random stream")
            self._picks = _block_iter(lambda size: rng.integers(0, n_queues - 1, size))

    @property
    def cycle_hops(self) -> int | None:
        """Hops in one full route cycle; ``None`` when routing is random."""
        return None if self.random else len(self.route)

    @property
    def direction(self) -> int:
        """Elevator sweep of the current stop: +1 up (stops 1..N), -1 down."""
        return 1 if self.pos < self.n else -1

    def advance(self) -> int:
        if self.random:
            pick = next(self._picks)
            self.queue = pick + (pick >= self.queue)
        else:
            self.pos = (self.pos + 1) % len(self.route)
            self.queue = self.route[self.pos]
        return self.queue

    def jump_to(self, queue: int) -> None:
        # Used only with zero switch time, where the route is traversed instantly.
        if not self.random:
            self.pos = self.route.index(queue)
        self.queue = queue


def next_stop(order: PollingOrder, n_queues: int, position: int, rng: np.random.Generator | None = None) -> tuple[int, int]:
    """One routing step from route ``position``; returns ``(queue, new_position)``.

    For random-next routing the position is the current queue.
    """
    router = Router(order, n_queues, rng)
    router.pos = position
    router.queue = position if router.random else router.route[position]
    q = router.advance()
    return q, (router.queue if router.random else router.pos)


def _block_iter(draw) -> Iterator:
    while True:
        yield from draw(_BLOCK).tolist()


def decompose_wait(arrived_at: float, begun_at: float, timeline: Sequence[tuple[float, float, str]]) -> tuple[float, float]:
    """Split ``[arrived_at, begun_at]`` by server state.

    ``timeline`` holds ``(start, end, state)`` segments with state ``"moving"``
    or ``"serving"``. Returns ``(moving, serving)``.
    """
    moving = serving = 0.0
    for start, end, state in timeline:
        overlap = min(end, begun_at) - max(start, arrived_at)
        if overlap > 0:
            if state == "moving":
                moving += overlap
            else:
                serving += overlap
    return moving, serving


@dataclass
class SimReport:
    seed: int
    jobs_completed: int
    warmup_jobs_discarded: int
    mean_w: float
    mean_w_hw: float
    mean_m: float
    mean_m_hw: float
    mean_p: float
    mean_p_hw: float
    per_queue_mean_w: list[float | None]
    time_avg_n: float
    arrival_avg_n: float | None
    frac_serving: float
    frac_moving: float
    mean_residual_seen: float | None
    window: tuple[float, float]
    arrivals_total: int
    started_total: int
    waiting_at_end: int
    max_split_error: float
    batches: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    jobs: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    timeline: list[tuple[float, float, str]] | None = field(default=None, repr=False)
    departures: list[tuple[float, int, int]] | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "jobs_completed": self.jobs_completed,
            "warmup_jobs_discarded": self.warmup_jobs_discarded,
            "mean_w": self.mean_w,
            "mean_w_hw": self.mean_w_hw,
            "mean_m": self.mean_m,
            "mean_m_hw": self.mean_m_hw,
            "mean_p": self.mean_p,
            "mean_p_hw": self.mean_p_hw,
            "per_queue_mean_w": self.per_queue_mean_w,
            "time_avg_n": self.time_avg_n,
            "arrival_avg_n": self.arrival_avg_n,
            "frac_serving": self.frac_serving,
            "frac_moving": self.frac_moving,
            "mean_residual_seen": self.mean_residual_seen,
            "window": list(self.window),
            "arrivals_total": self.arrivals_total,
            "started_total": self.started_total,
            "waiting_at_end": self.waiting_at_end,
        }

    def iter_jobs(self) -> Iterator[JobRecord]:
        j = self.jobs
        for i in range(len(j["queue"])):
            arr, beg = float(j["arrived_at"][i]), float(j["begun_at"][i])
            yield JobRecord(
                int(j["queue"][i]), arr, beg, beg - arr,
                float(j["wait_moving"][i]), float(j["wait_serving"][i]), int(j["n_seen"][i]),
            )


def write_trace(report: SimReport, path: str | Path) -> None:
    """Per-job CSV for the measured (post-warmup) jobs; queues are 1-based."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["queue", "arrived_at", "service_begun_at", "wait", "wait_moving", "wait_serving", "n_seen"])
        for job in report.iter_jobs():
            w.writerow([
                job.queue + 1, f"{job.arrived_at:.9f}", f"{job.service_begun_at:.9f}", f"{job.wait:.9f}",
                f"{job.wait_moving:.9f}", f"{job.wait_serving:.9f}", job.n_seen,
            ])


def run(
    config: SystemConfig,
    seed: int,
    total_jobs: int,
    warmup_jobs: int | None = None,
    *,
    allow_unequal_means: bool = False,
    arrivals: Sequence[tuple[float, int]] | None = None,
    record_timeline: bool = False,
    n_batches: int = DEFAULT_BATCHES,
) -> SimReport:
    """Simulate until ``total_jobs`` jobs have begun service.

    The first ``warmup_jobs`` jobs to begin service (default 10% of
    ``total_jobs``) are discarded. ``arrivals`` replaces the Poisson streams
    with a fixed list of ``(time, queue)`` pairs; the run then also stops when
    every listed job has been served.
    """
    if warmup_jobs is None:
        warmup_jobs = total_jobs // 10
    if warmup_jobs < 0 or total_jobs <= warmup_jobs:
        raise InvalidHorizon(f"need total_jobs > warmup_jobs >= 0, got {total_jobs} and {warmup_jobs}")
    validate(config, allow_unequal_means=allow_unequal_means)
    raw = _simulate(config, seed, total_jobs, warmup_jobs, arrivals, record_timeline)
    return _report(config, seed, warmup_jobs, raw, n_batches)


def _simulate(config, seed, total_jobs, warmup_jobs, arrivals, record_timeline):
    n = config.n_queues
    alpha = config.switch_time
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(2 * n + 1)]
    router = Router(config.order, n, streams[2 * n])
    route_hops = router.cycle_hops
    cycle = alpha * route_hops if route_hops is not None else None

    gated = [q.policy is Policy.GATED for q in config.queues]
    lcfs = [q.discipline is Discipline.LCFS for q in config.queues]
    services = [_block_iter(lambda size, d=q.service, g=streams[n + i]: d.sample_many(g, size))
                for i, q in enumerate(config.queues)]

    # Events are (time, seq, kind, queue); seq breaks ties in insertion order.
    heap: list[tuple[float, int, int, int]] = []
    push, pop = heapq.heappush, heapq.heappop
    seq = 0
    # The server starts at the first stop of its route at time 0, ahead of any arrival.
    push(heap, (0.0, seq, _SWITCH_DONE, router.queue))
    seq += 1

    interarrival = [None] * n
    if arrivals is None:
        for i, q in enumerate(config.queues):
            if q.arrival_rate > 0:
                d = Exponential(1.0 / q.arrival_rate)
                interarrival[i] = _block_iter(lambda size, d=d, g=streams[i]: d.sample_many(g, size))
                push(heap, (next(interarrival[i]), seq, _ARRIVAL, i))
                seq += 1
    else:
        for t_arr, q_arr in sorted(arrivals, key=lambda a: a[0]):
            push(heap, (float(t_arr), seq, _ARRIVAL, int(q_arr)))
            seq += 1

    waiting_q = [deque() for _ in range(n)]
    waiting = 0
    area = 0.0
    area_t = 0.0
    mode = _AT_QUEUE
    seg_start = 0.0
    mov_acc = 0.0
    srv_acc = 0.0
    completion_at = 0.0
    gate = 0
    here = router.queue
    n_arrivals = 0
    started = 0
    resid_sum = 0.0
    resid_n = 0
    measuring = warmup_jobs == 0
    t0_clocks = last_clocks = (0.0, 0.0, 0.0)

    out_q: list[int] = []
    out_arr: list[float] = []
    out_beg: list[float] = []
    out_wm: list[float] = []
    out_ws: list[float] = []
    out_seen: list[int] = []
    out_area: list[float] = []
    out_srv: list[float] = []

    timeline = [] if record_timeline else None
    departures = [] if record_timeline else None
    t = 0.0

    while heap:
        t, _, kind, q = pop(heap)

        if kind == _ARRIVAL:
            area += waiting * (t - area_t)
            area_t = t
            if mode == _MOVING:
                mclock, sclock = mov_acc + (t - seg_start), srv_acc
            elif mode == _SERVING:
                mclock, sclock = mov_acc, srv_acc + (t - seg_start)
                if measuring:
                    resid_sum += completion_at - t
                    resid_n += 1
            else:
                mclock, sclock = mov_acc, srv_acc
            waiting_q[q].append((t, mclock, sclock, waiting))
            waiting += 1
            n_arrivals += 1
            src = interarrival[q]
            if src is not None:
                push(heap, (t + next(src), seq, _ARRIVAL, q))
                seq += 1
            continue

        if kind == _SWITCH_DONE:
            mov_acc += t - seg_start
            if timeline is not None and t > seg_start:
                timeline.append((seg_start, t, "moving"))
            here = q
            gate = len(waiting_q[q])
        else:
            srv_acc += t - seg_start
            if timeline is not None:
                timeline.append((seg_start, t, "serving"))
        mode = _AT_QUEUE

        # Decide at queue `here`: serve the next eligible job or leave.
        dq = waiting_q[here]
        if gated[here]:
            eligible = gate > 0
        else:
            eligible = bool(dq)
        if eligible:
            if gated[here]:
                if lcfs[here]:
                    job = dq[gate - 1]
                    del dq[gate - 1]
                else:
                    job = dq.popleft()
                gate -= 1
            elif lcfs[here]:
                job = dq.pop()
            else:
                job = dq.popleft()
            area += waiting * (t - area_t)
            area_t = t
            waiting -= 1
            started += 1
            out_q.append(here)
            out_arr.append(job[0])
            out_beg.append(t)
            out_wm.append(mov_acc - job[1])
            out_ws.append(srv_acc - job[2])
            out_seen.append(job[3])
            out_area.append(area)
            out_srv.append(srv_acc)
            last_clocks = (t, mov_acc, srv_acc)
            if started == warmup_jobs:
                measuring = True
                t0_clocks = (t, mov_acc, srv_acc)
            if started >= total_jobs:
                break
            mode = _SERVING
            seg_start = t
            completion_at = t + next(services[here])
            push(heap, (completion_at, seq, _SERVICE_DONE, here))
            seq += 1
            continue

        # Depart.
        if departures is not None:
            departures.append((t, here, len(dq)))
        if waiting == 0 and not heap:
            break
        dest = router.advance()
        hop = alpha
        if waiting == 0:
            # Empty system: skip patrol cycles that cannot meet a job.
            t_next = heap[0][0]
            if cycle is None or cycle == 0.0:
                if alpha == 0.0:
                    dest = heap[0][3]
                    router.jump_to(dest)
                    hop = t_next - t
            else:
                laps = math.floor((t_next - t) / cycle)
                if laps >= 1:
                    hop = alpha + laps * cycle
        mode = _MOVING
        seg_start = t
        push(heap, (t + hop, seq, _SWITCH_DONE, dest))
        seq += 1

    return {
        "queue": np.array(out_q, dtype=np.int64),
        "arrived_at": np.array(out_arr),
        "begun_at": np.array(out_beg),
        "wait_moving": np.array(out_wm),
        "wait_serving": np.array(out_ws),
        "n_seen": np.array(out_seen, dtype=np.int64),
        "area": np.array(out_area),
        "serving_clock": np.array(out_srv),
        "t0": t0_clocks,
        "t1": last_clocks,
        "resid": (resid_sum, resid_n),
        "arrivals_total": n_arrivals,
        "started_total": started,
        "waiting_at_end": waiting,
        "timeline": timeline,
        "departures": departures,
    }


def _report(config: SystemConfig, seed: int, warmup: int, raw: dict, n_batches: int) -> SimReport:
    sl = slice(warmup, None)
    q = raw["queue"][sl]
    arr = raw["arrived_at"][sl]
    beg = raw["begun_at"][sl]
    wm = raw["wait_moving"][sl]
    ws = raw["wait_serving"][sl]
    seen = raw["n_seen"][sl]
    wait = beg - arr
    m = len(wait)

    t0, mov0, srv0 = raw["t0"]
    t1 = float(beg[-1]) if m else t0
    area_all = raw["area"]
    area0 = float(area_all[warmup - 1]) if warmup > 0 else 0.0
    area1 = float(area_all[-1]) if len(area_all) else 0.0
    span = t1 - t0
    time_avg_n = (area1 - area0) / span if span > 0 else 0.0

    # Clocks at the last service start, where the server is between states.
    _, mov_end, srv_end = raw["t1"]
    if span > 0:
        frac_serving = (srv_end - srv0) / span
        frac_moving = (mov_end - mov0) / span
    else:
        frac_serving, frac_moving = 0.0, 1.0

    batches: dict[str, np.ndarray] = {}
    hws = {"w": math.nan, "m": math.nan, "p": math.nan}
    if m >= 2 * n_batches:
        batches = {
            "w": batch_means(wait, n_batches),
            "m": batch_means(wm, n_batches),
            "p": batch_means(ws, n_batches),
            "n_seen": batch_means(seen, n_batches),
            "time_n": _batch_time_avg(raw["begun_at"], area_all, warmup, n_batches),
            "serving": _batch_time_avg(raw["begun_at"], raw["serving_clock"], warmup, n_batches),
        }
        for key in hws:
            hws[key] = ci_from_batch_means(batches[key]).half_width_95

    per_queue: list[float | None] = []
    for i in range(config.n_queues):
        mask = q == i
        per_queue.append(float(wait[mask].mean()) if mask.any() else None)

    resid_sum, resid_n = raw["resid"]
    return SimReport(
        seed=seed,
        jobs_completed=m,
        warmup_jobs_discarded=warmup,
        mean_w=float(wait.mean()) if m else math.nan,
        mean_w_hw=hws["w"],
        mean_m=float(wm.mean()) if m else math.nan,
        mean_m_hw=hws["m"],
        mean_p=float(ws.mean()) if m else math.nan,
        mean_p_hw=hws["p"],
        per_queue_mean_w=per_queue,
        time_avg_n=time_avg_n,
        arrival_avg_n=float(seen.mean()) if m else None,
        frac_serving=frac_serving,
        frac_moving=frac_moving,
        mean_residual_seen=resid_sum / resid_n if resid_n else None,
        window=(t0, t1),
        arrivals_total=raw["arrivals_total"],
        started_total=raw["started_total"],
        waiting_at_end=raw["waiting_at_end"],
        max_split_error=float(np.max(np.abs(wait - wm - ws))) if m else 0.0,
        batches=batches,
        jobs={"queue": q, "arrived_at": arr, "begun_at": beg, "wait_moving": wm, "wait_serving": ws, "n_seen": seen},
        timeline=raw["timeline"],
        departures=raw["departures"],
    )


def _batch_time_avg(begun_at, area, warmup, n_batches) -> np.ndarray:
    """Time-average over each job batch's window of a quantity whose running
    integral ``area`` is sampled at every service start (N(t), or the
    serving indicator)."""
    m = len(begun_at) - warmup
    size = m // n_batches
    first = warmup + (m - size * n_batches)
    # Boundary k is the start time of the job just before batch k begins.
    idx = first - 1 + size * np.arange(n_batches + 1)
    times = np.where(idx >= 0, begun_at[np.maximum(idx, 0)], 0.0)
    areas = np.where(idx >= 0, area[np.maximum(idx, 0)], 0.0)
    return np.diff(areas) / np.diff(times)


@dataclass(frozen=True)
class Pooled:
    """Pooled batch-means estimates across independent replications."""

    w: BatchMeansCI
    m: BatchMeansCI
    p: BatchMeansCI
    n_seen: BatchMeansCI
    time_n: BatchMeansCI
    reports: tuple[SimReport, ...] = field(repr=False)

    def combined(self, fn) -> BatchMeansCI:
        """CI for a per-batch linear combination, e.g. ``lambda b: b["p"] - rho * b["w"]``."""
        return ci_from_batch_means(np.concatenate([fn(r.batches) for r in self.reports]))


def pool(reports: Sequence[SimReport]) -> Pooled:
    def cat(key):
        return ci_from_batch_means(np.concatenate([r.batches[key] for r in reports]))

    return Pooled(cat("w"), cat("m"), cat("p"), cat("n_seen"), cat("time_n"), tuple(reports))


def replicate(config: SystemConfig, base_seed: int, replications: int, total_jobs: int,
              warmup_jobs: int | None = None, **kwargs) -> list[SimReport]:
    """Independent runs seeded ``base_seed, base_seed + 1, ...``."""
    return [run(config, base_seed + r, total_jobs, warmup_jobs, **kwargs) for r in range(replications)]
