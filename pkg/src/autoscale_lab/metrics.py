"""Policy rollouts and the per-interval metrics series behind the CPU / violation plots."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Protocol

from .env import EnvState, ScalingEnv, StepMetrics
from .trace import ArrivalSchedule

SERIES_COLUMNS = StepMetrics._fields + (
    "elapsed_s", "cumulative_cpu_seconds", "cumulative_arrivals", "cumulative_invocations",
    "running_violation_rate",
)


class Controller(Protocol):
    name: str

    def reset(self) -> None: ...

    def decide(self, state: EnvState, last: StepMetrics | None = None) -> int: ...


class Row(NamedTuple):
    metrics: StepMetrics
    elapsed_s: int
    cumulative_cpu_seconds: float
    cumulative_arrivals: int
    cumulative_invocations: int
    running_violation_rate: float


def fmt(value) -> str:
    """Integers as decimal, floats in shortest round-trip form."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rollout(controller: Controller, env: ScalingEnv, schedule: ArrivalSchedule, horizon_s: int | None = None,
            seed: int = 0, ledger=None) -> list[Row]:
    """Run ``controller`` from reset until the horizon (or schedule end); no learning.

    ``cumulative_invocations`` counts completed requests.  When ``ledger`` is
    given every decision is appended to it.
    """
    cfg = env.config
    interval = cfg.decision_interval_s * cfg.tick_s
    if horizon_s is not None:
        if horizon_s > len(schedule):
            raise ValueError(f"schedule of {len(schedule)} s is shorter than horizon {horizon_s} s")
        schedule = schedule.window(0, horizon_s)
    state = env.reset(schedule, seed)
    controller.reset()
    rows: list[Row] = []
    last = None
    cpu = 0.0
    arrivals = completed = violations = 0
    while not env.done:
        tick = env.tick
        action = controller.decide(state, last)
        res = env.step(action)
        m = res.metrics
        if ledger is not None:
            ledger.append(tick=tick, policy_name=controller.name, observed=state,
                          action_code=action, resulting_instances=m.instances)
        cpu += m.cpu_seconds
        arrivals += m.arrivals
        completed += m.completed
        violations += m.violations
        rows.append(Row(m, (m.interval_index + 1) * interval, cpu, arrivals, completed,
                        violations / completed if completed else 0.0))
        state, last = res.state, m
    return rows


def write_series(rows: Iterable[Row], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for r in rows:
        w.writerow([fmt(v) for v in (*r.metrics, *r[1:])])


@dataclass(frozen=True)
class Summary:
    policy: str
    cpu_seconds: float
    arrivals: int
    invocations: int
    violations: int
    dropped: int

    @property
    def cpu_seconds_per_invocation(self) -> float:
        return self.cpu_seconds / self.invocations if self.invocations else float("inf")

    @property
    def violation_rate(self) -> float:
        return self.violations / self.invocations if self.invocations else 0.0


def summarize(policy: str, rows: list[Row]) -> Summary:
    return Summary(
        policy,
        sum(r.metrics.cpu_seconds for r in rows),
        sum(r.metrics.arrivals for r in rows),
        sum(r.metrics.completed for r in rows),
        sum(r.metrics.violations for r in rows),
        sum(r.metrics.dropped for r in rows),
    )


def reduction_pct(ours: Summary, other: Summary) -> float:
    """Relative CPU-per-invocation saving of ``ours`` against ``other``, in percent.

    Two runs that completed nothing are level (0 %).
    """
    if ours.invocations == 0 and other.invocations == 0:
        return 0.0
    if other.invocations == 0:
        return float("nan")
    return 100.0 * (other.cpu_seconds_per_invocation - ours.cpu_seconds_per_invocation) / other.cpu_seconds_per_invocation


SUMMARY_COLUMNS = ("policy", "cpu_seconds", "invocations", "cpu_seconds_per_invocation", "violation_rate",
                   "arrivals", "dropped")


def write_summary(summaries: list[Summary], stream, reference: str | None = "drqn") -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        w.writerow([s.policy, fmt(s.cpu_seconds), s.invocations, fmt(s.cpu_seconds_per_invocation),
                    fmt(s.violation_rate), s.arrivals, s.dropped])
    ref = next((s for s in summaries if s.policy == reference), None)
    if ref is None:
        return
    stream.write("\n")
    w.writerow(("reference", "baseline", "cpu_per_invocation_reduction_pct"))
    for s in summaries:
        if s is not ref:
            w.writerow([ref.policy, s.policy, fmt(reduction_pct(ref, s))])
