"""Synthetic per-minute invocation traces in the Azure Functions 2019 layout.

Each function follows a diurnal profile (a daily sinusoid plus a weaker
half-day harmonic) modulated by AR(1) noise in log space, with Poisson
counts per minute.  Days are independent draws from the same process, so one
day can train a controller and another can serve as held-out replay.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .trace import MINUTES_PER_DAY, MinuteTrace


@dataclass(frozen=True)
class FunctionProfile:
    name: str
    mean_rps: float
    amplitude: float = 0.5      # relative swing of the daily cycle
    peak_minute: int = 840      # minute of day at the daily maximum
    noise: float = 0.08         # std of the log-space innovations
    rho: float = 0.97           # AR(1) coefficient of the log-space noise

    def __post_init__(self):
        if self.mean_rps < 0:
            raise ValueError("mean_rps must be non-negative")
        if not 0 <= self.amplitude < 1:
            raise ValueError("amplitude must be in [0, 1)")
        if self.noise < 0 or not 0 <= self.rho < 1:
            raise ValueError("need noise >= 0 and 0 <= rho < 1")

    @property
    def function_id(self) -> str:
        return hashlib.sha256(self.name.encode()).hexdigest()


# the busiest function swings between one and two to three instances' worth of load
DEFAULT_PROFILES = (
    FunctionProfile("api-gateway", 5.0),
    FunctionProfile("thumbnailer", 2.5, amplitude=0.7, peak_minute=1200),
    FunctionProfile("nightly-etl", 1.5, amplitude=0.9, peak_minute=120, noise=0.15),
    FunctionProfile("webhook", 0.3, amplitude=0.2, noise=0.3),
)


def rate_profile(profile: FunctionProfile, rng: np.random.Generator) -> np.ndarray:
    """Expected invocations per second for each minute of one day."""
    m = np.arange(MINUTES_PER_DAY)
    phase = 2 * np.pi * (m - profile.peak_minute) / MINUTES_PER_DAY
    diurnal = 1 + profile.amplitude * (np.cos(phase) + 0.15 * np.cos(2 * phase))
    shocks = rng.normal(0.0, profile.noise, MINUTES_PER_DAY)
    z = np.empty(MINUTES_PER_DAY)
    z[0] = shocks[0]
    for i in range(1, MINUTES_PER_DAY):
        z[i] = profile.rho * z[i - 1] + shocks[i]
    return profile.mean_rps * np.clip(diurnal, 0.0, None) * np.exp(z)


def synth_day(day_index: int, profiles=DEFAULT_PROFILES, seed: int = 0) -> list[MinuteTrace]:
    if day_index < 0:
        raise ValueError("day_index must be non-negative")
    out = []
    for k, prof in enumerate(profiles):
        rng = np.random.default_rng([seed, day_index, k])
        counts = rng.poisson(rate_profile(prof, rng) * 60)
        out.append(MinuteTrace(prof.function_id, day_index, tuple(int(c) for c in counts)))
    return out


def synth_days(n_days: int, profiles=DEFAULT_PROFILES, seed: int = 0) -> list[MinuteTrace]:
    return [t for d in range(n_days) for t in synth_day(d, profiles, seed)]
