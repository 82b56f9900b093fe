"""OpenFaaS-style alarm baselines: scale up while the alarm fires, down once resolved."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .env import ACTION_DELTAS, EnvConfig, EnvState, StepMetrics


class WindowRates(NamedTuple):
    rps: float
    vps: float

    @classmethod
    def from_metrics(cls, metrics: StepMetrics | None, interval_s: float) -> "WindowRates":
        if metrics is None:
            return cls(0.0, 0.0)
        return cls(metrics.arrivals / interval_s, metrics.violations / interval_s)


@dataclass(frozen=True)
class ThresholdPolicy:
    metric: str
    threshold: float
    name: str
    step_up: int = 1
    step_down: int = 1
    hold: int = 0  # resolved intervals required before a scale-down

    def __post_init__(self):
        if self.metric not in ("RPS", "VPS"):
            raise ValueError(f"metric must be RPS or VPS, got {self.metric!r}")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.step_up < 1 or self.step_down < 1:
            raise ValueError("steps must be >= 1")
        if self.hold < 0:
            raise ValueError("hold must be non-negative")


RPS5 = ThresholdPolicy("RPS", 5.0, "rps5")
RPS2 = ThresholdPolicy("RPS", 2.0, "rps2")
VPS1 = ThresholdPolicy("VPS", 1.0, "vps1")
BASELINES = {p.name: p for p in (RPS5, RPS2, VPS1)}


def decide(window: WindowRates, current: int, policy: ThresholdPolicy, config: EnvConfig) -> int:
    """New instance count: +step_up when the metric is strictly above threshold, else -step_down."""
    if window.rps < 0 or window.vps < 0:
        raise ValueError("rates must be non-negative")
    value = window.rps if policy.metric == "RPS" else window.vps
    target = current + policy.step_up if value > policy.threshold else current - policy.step_down
    return min(max(target, config.min_instances), config.max_instances)


def delta_to_action(delta: int) -> int:
    """Action code for a desired change: the largest available step not beyond ``delta``."""
    if delta < 0:
        return ACTION_DELTAS.index(-1)
    best = max(d for d in ACTION_DELTAS if d <= delta)
    return ACTION_DELTAS.index(best)


class BaselineController:
    """Controller wrapper used by the evaluation runner."""

    def __init__(self, policy: ThresholdPolicy, config: EnvConfig):
        self.policy = policy
        self.name = policy.name
        self.config = config
        self.reset()

    def reset(self) -> None:
        self.resolved = 0

    def decide(self, state: EnvState, last: StepMetrics | None = None) -> int:
        rates = WindowRates.from_metrics(last, self.config.decision_interval_s * self.config.tick_s)
        target = decide(rates, state.instances, self.policy, self.config)
        if target < state.instances:
            self.resolved += 1
            if self.resolved <= self.policy.hold:
                target = state.instances
        else:
            self.resolved = 0
        return delta_to_action(target - state.instances)
