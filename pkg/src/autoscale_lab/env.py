"""Discrete-time simulator of a pool of function instances.

Each instance has a fixed CPU budget per 1 s tick shared equally among its
in-flight requests (processor sharing).  Requests that arrive in the same
tick on the same instance are identical, so they are tracked as one cohort.
Processor sharing is implemented with a per-instance virtual clock: every
in-flight request receives the same service, so a cohort only stores its
finish tag (clock value at which its demand is met) and the clock advances.
"""
from __future__ import annotations

import bisect
import copy
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .trace import ArrivalSchedule

# code -> instance delta
ACTION_DELTAS = (-1, 0, 1, 2, 4)
N_ACTIONS = len(ACTION_DELTAS)
_DONE_EPS = 1e-9


@dataclass(frozen=True)
class EnvConfig:
    cpu_limit_millicpu: int = 200
    max_instances: int = 5
    min_instances: int = 1
    latency_threshold_s: float = 2.5
    decision_interval_s: int = 15
    tick_s: int = 1
    service_demand_cpu_s: float = 0.04
    idle_cost_cpu_s_per_s: float = 0.01
    switch_overhead_beta: float = 0.05
    switch_overhead_q0: int = 5
    queue_cap_per_instance: int = 200
    startup_delay_s: int = 0

    def __post_init__(self):
        if not 0 < self.min_instances <= self.max_instances:
            raise ValueError("need 0 < min_instances <= max_instances")
        if self.tick_s != 1:
            raise ValueError("tick_s is fixed at 1 second")
        if self.decision_interval_s <= 0 or self.decision_interval_s % self.tick_s:
            raise ValueError("decision_interval_s must be a positive multiple of tick_s")
        for name in ("cpu_limit_millicpu", "latency_threshold_s", "service_demand_cpu_s",
                     "idle_cost_cpu_s_per_s", "switch_overhead_beta", "switch_overhead_q0",
                     "startup_delay_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.queue_cap_per_instance <= 0:
            raise ValueError("queue_cap_per_instance must be positive")

    @property
    def cpu_per_tick(self) -> float:
        return self.cpu_limit_millicpu / 1000 * self.tick_s

    def as_dict(self) -> dict:
        return asdict(self)


class EnvState(NamedTuple):
    instances: int
    avg_rps: float
    avg_cpu_usage: float
    avg_violation_rate: float


class StepMetrics(NamedTuple):
    interval_index: int
    action: int
    instances: int
    arrivals: int
    completed: int
    violations: int
    dropped: int
    cpu_seconds: float
    reward: int


class RequestRecord(NamedTuple):
    arrival_tick: int
    remaining_demand: float
    instance_slot: int


class StepResult(NamedTuple):
    state: EnvState
    reward: int
    metrics: StepMetrics
    done: bool


def apply_action(current: int, action: int, config: EnvConfig) -> int:
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action code must be in 0..{N_ACTIONS - 1}, got {action}")
    return min(max(current + ACTION_DELTAS[action], config.min_instances), config.max_instances)


def per_instance_capacity(config: EnvConfig) -> float:
    """Requests per second one instance sustains without switching overhead."""
    if config.service_demand_cpu_s <= 0:
        raise ValueError("service_demand_cpu_s must be positive")
    return (config.cpu_limit_millicpu / 1000) / config.service_demand_cpu_s


def required_instances(arrival_rps: float, config: EnvConfig) -> int:
    if arrival_rps < 0:
        raise ValueError("arrival_rps must be non-negative")
    # round away float noise so 10.0 / 5.0 style ratios stay exact
    need = math.ceil(round(arrival_rps / per_instance_capacity(config), 9))
    return min(max(need, config.min_instances), config.max_instances)


def _fill(loads: list[int], n: int, cap: int | None) -> tuple[list[int], int]:
    """Hand ``n`` items one at a time to the least-loaded slot (ties -> lowest index).

    Returns per-slot additions and the number that did not fit under ``cap``.
    """
    k = len(loads)
    level = list(loads)
    while n > 0:
        open_ = [i for i in range(k) if cap is None or level[i] < cap]
        if not open_:
            break
        low = min(level[i] for i in open_)
        group = [i for i in open_ if level[i] == low]
        above = [level[i] for i in open_ if level[i] > low]
        ceiling = min(above) if above else None
        if cap is not None:
            ceiling = cap if ceiling is None else min(ceiling, cap)
        if ceiling is not None and n >= (ceiling - low) * len(group):
            for i in group:
                level[i] = ceiling
            n -= (ceiling - low) * len(group)
            continue
        share, extra = divmod(n, len(group))
        for j, i in enumerate(group):
            level[i] += share + (1 if j < extra else 0)
        n = 0
    return [level[i] - loads[i] for i in range(k)], n


class ScalingEnv:
    """Reset/step environment over an :class:`ArrivalSchedule`.

    Dynamics are fully deterministic given the schedule and the actions; the
    seed is kept for the environment contract and echoed in provenance.
    """

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.capacity = per_instance_capacity(self.config)
        self._schedule: list[int] | None = None
        self.done = True

    # -- contract ---------------------------------------------------------

    def reset(self, schedule: ArrivalSchedule, seed: int = 0) -> EnvState:
        cfg = self.config
        if len(schedule) < cfg.decision_interval_s:
            raise ValueError(f"schedule of {len(schedule)} ticks is shorter than one "
                             f"decision interval ({cfg.decision_interval_s} s)")
        self.seed = seed
        self.schedule = schedule
        self._schedule = schedule.ticks.tolist()
        self.n_intervals = len(self._schedule) // cfg.decision_interval_s
        self.tick = 0
        self.interval_index = 0
        self.instances = cfg.min_instances
        # per slot: cohorts [finish_tag, arrival_tick, count] sorted by tag, and the virtual clock
        self.queues: list[list[list]] = [[] for _ in range(self.instances)]
        self.vclock = [0.0] * self.instances
        self.inflight = [0] * self.instances
        self.ready_at = [0] * self.instances
        self.total_arrivals = 0
        self.total_completed = 0
        self.total_dropped = 0
        self.done = False
        self._state = EnvState(self.instances, 0.0, 0.0, 0.0)
        return self._state

    def observation(self) -> EnvState:
        return self._state

    def in_flight(self) -> int:
        return sum(self.inflight)

    def requests(self) -> list[RequestRecord]:
        """Snapshot of every in-flight request."""
        out = []
        for slot, (q, v) in enumerate(zip(self.queues, self.vclock)):
            for tag, arrival, count in q:
                out.extend([RequestRecord(arrival, max(tag - v, 0.0), slot)] * count)
        return out

    def clone(self) -> "ScalingEnv":
        """Independent copy of the current state, for lookahead and branching replays."""
        other = copy.copy(self)
        if self._schedule is not None and hasattr(self, "queues"):
            other.queues = [[list(c) for c in q] for q in self.queues]
            other.vclock = list(self.vclock)
            other.inflight = list(self.inflight)
            other.ready_at = list(self.ready_at)
        return other

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.config
        self._resize(apply_action(self.instances, action, cfg))
        n = self.instances

        arrivals = completed = violations = dropped = 0
        service_cpu = 0.0
        for _ in range(cfg.decision_interval_s):
            a, c, v, d, s = self.simulate_tick()
            arrivals += a
            completed += c
            violations += v
            dropped += d
            service_cpu += s
        interval = cfg.decision_interval_s * cfg.tick_s
        idle_cpu = cfg.idle_cost_cpu_s_per_s * n * interval
        avg_rps = arrivals / interval
        reward = 1 if n == required_instances(avg_rps, cfg) else 0
        usage = min(1.0, service_cpu / (n * cfg.cpu_per_tick * cfg.decision_interval_s))
        vrate = violations / completed if completed else 0.0
        self._state = EnvState(n, avg_rps, usage, vrate)
        metrics = StepMetrics(self.interval_index, action, n, arrivals, completed, violations,
                              dropped, service_cpu + idle_cpu, reward)
        self.interval_index += 1
        self.done = self.interval_index >= self.n_intervals
        return StepResult(self._state, reward, metrics, self.done)

    # -- internals --------------------------------------------------------

    def _resize(self, target: int) -> None:
        cur = self.instances
        if target > cur:
            ready = self.tick + self.config.startup_delay_s
            for _ in range(target - cur):
                self.queues.append([])
                self.vclock.append(0.0)
                self.inflight.append(0)
                self.ready_at.append(ready)
        elif target < cur:
            retired = [(arrival, count, tag - v)
                       for q, v in zip(self.queues[target:], self.vclock[target:])
                       for tag, arrival, count in q]
            del self.queues[target:], self.vclock[target:], self.inflight[target:], self.ready_at[target:]
            # move in-flight work onto survivors, oldest first, ignoring the queue cap
            retired.sort(key=lambda c: c[0])
            for arrival, count, remaining in retired:
                add, _ = _fill(self.inflight, count, None)
                for i, k in enumerate(add):
                    if k:
                        bisect.insort(self.queues[i], [self.vclock[i] + remaining, arrival, k])
                        self.inflight[i] += k
        self.instances = target

    def simulate_tick(self) -> tuple[int, int, int, int, float]:
        """Advance one tick; returns (arrivals, completed, violations, dropped, service_cpu)."""
        cfg = self.config
        t = self.tick
        a = self._schedule[t] if t < len(self._schedule) else 0
        dropped = 0
        if a:
            ready = [i for i in range(self.instances) if self.ready_at[i] <= t]
            if not ready:
                ready = list(range(cfg.min_instances))
            add, dropped = _fill([self.inflight[i] for i in ready], a, cfg.queue_cap_per_instance)
            demand = cfg.service_demand_cpu_s
            for i, k in zip(ready, add):
                if k:
                    # the clock never runs backwards, so appending keeps tags sorted
                    self.queues[i].append([self.vclock[i] + demand, t, k])
                    self.inflight[i] += k

        budget_full = cfg.cpu_per_tick
        beta, q0 = cfg.switch_overhead_beta, cfg.switch_overhead_q0
        threshold = cfg.latency_threshold_s
        completed = violations = 0
        service = 0.0
        for i in range(self.instances):
            n = self.inflight[i]
            if not n:
                continue
            factor = 1.0 + beta * max(0, n - q0)
            budget = budget_full / factor
            q = self.queues[i]
            v = self.vclock[i]
            done_upto = 0
            for tag, arrival, count in q:
                need = (tag - v) * n
                if need <= budget + _DONE_EPS:
                    budget -= need
                    v = tag
                    n -= count
                    done_upto += 1
                    completed += count
                    if (t - arrival + 1) * cfg.tick_s > threshold:
                        violations += count
                else:
                    v += budget / n
                    budget = 0.0
                    break
            service += (budget_full / factor - max(budget, 0.0)) * factor
            if done_upto:
                del q[:done_upto]
            # an empty instance restarts its clock to keep tags small
            self.vclock[i] = v if n else 0.0
            self.inflight[i] = n
        self.tick = t + 1
        self.total_arrivals += a
        self.total_completed += completed
        self.total_dropped += dropped
        return a, completed, violations, dropped, service


def state_vector(state: EnvState) -> np.ndarray:
    return np.array(state, dtype=np.float64)
