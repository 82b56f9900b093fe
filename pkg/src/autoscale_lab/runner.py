"""Experiment plumbing shared by the command line and the acceptance suite.

Turns a :class:`RunConfig` into training and evaluation schedules, runs
training with periodic greedy evaluation episodes recorded in the ledger,
and replays every requested policy on one held-out schedule.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .agent import DRQNController, TrainState, load_policy, load_snapshot, train, write_reward_curve
from .baselines import BASELINES, BaselineController
from .config import RunConfig, provenance, render_config, write_provenance
from .env import ScalingEnv
from .ledger import Ledger, read_ledger, write_ledger
from .metrics import Summary, rollout, summarize, write_series, write_summary
from .trace import (ArrivalSchedule, Constant, MinuteTrace, expand_days, read_trace_file, select_function,
                    synth_schedule)
from .tracegen import synth_days

log = logging.getLogger(__name__)


def load_traces(cfg: RunConfig) -> list[MinuteTrace]:
    tc = cfg.trace
    if tc.source == "synthetic":
        return synth_days(tc.synthetic_days, seed=tc.synthetic_seed)
    if tc.source == "file":
        return [t for day, path in enumerate(tc.paths) for t in read_trace_file(path, day_index=day)]
    raise ValueError("constant workloads have no trace")


def _function_days(cfg: RunConfig, traces: list[MinuteTrace], days) -> list[MinuteTrace]:
    tc = cfg.trace
    if tc.function_id:
        fid = tc.function_id
    else:
        # rank is taken on the first training day so every day follows the same function
        first = [t for t in traces if t.day_index == tc.train_days[0]]
        if not first:
            raise ValueError(f"no trace rows for day {tc.train_days[0]}")
        fid = select_function(first, rank=tc.rank).function_id
    out = []
    for d in days:
        match = [t for t in traces if t.day_index == d and t.function_id == fid]
        if not match:
            raise ValueError(f"function {fid} has no trace for day {d}")
        out.append(match[0])
    return out


def episode_span_s(cfg: RunConfig) -> int:
    return cfg.agent.episode_len * cfg.env.decision_interval_s


def training_schedule(cfg: RunConfig, traces: list[MinuteTrace] | None = None) -> ArrivalSchedule:
    tc = cfg.trace
    if tc.source == "constant":
        return synth_schedule(Constant(tc.constant_rps), episode_span_s(cfg))
    traces = load_traces(cfg) if traces is None else traces
    days = _function_days(cfg, traces, tc.train_days)
    return expand_days(days, tc.mode, tc.expand_seed, tc.tick_cap)


def evaluation_schedule(cfg: RunConfig, traces: list[MinuteTrace] | None = None) -> ArrivalSchedule:
    """The held-out replay: ``horizon_s`` seconds of the evaluation day from ``eval_start_s``."""
    tc, horizon = cfg.trace, cfg.run.horizon_s
    if tc.source == "constant":
        return synth_schedule(Constant(tc.constant_rps), horizon)
    traces = load_traces(cfg) if traces is None else traces
    day = _function_days(cfg, traces, [tc.eval_day])[0]
    sched = expand_days([day], tc.mode, tc.expand_seed, tc.tick_cap)
    if tc.eval_start_s + horizon > len(sched):
        raise ValueError(f"evaluation day has {len(sched)} s, shorter than start {tc.eval_start_s} + "
                         f"horizon {horizon}")
    return sched.window(tc.eval_start_s, horizon)


class WindowSampler:
    """Env factory drawing an episode-length window at an interval-aligned random offset."""

    def __init__(self, cfg: RunConfig, schedule: ArrivalSchedule):
        self.env_config = cfg.env
        self.span = episode_span_s(cfg)
        self.interval = cfg.env.decision_interval_s
        if len(schedule) < self.span:
            raise ValueError(f"training schedule of {len(schedule)} s is shorter than one episode ({self.span} s)")
        self.schedule = schedule
        self.slots = (len(schedule) - self.span) // self.interval + 1

    def __call__(self, episode: int, rng: np.random.Generator):
        start = 0 if self.slots == 1 else int(rng.integers(self.slots)) * self.interval
        return ScalingEnv(self.env_config), self.schedule.window(start, self.span)


@dataclass
class TrainOutputs:
    state: TrainState
    ledger: Ledger
    out_dir: str


def _write_curve(st: TrainState, out_dir: str) -> None:
    path = os.path.join(out_dir, "reward_curve.csv")
    with open(path + ".tmp", "w", encoding="utf-8", newline="") as fh:
        write_reward_curve(st.curve, fh)
    os.replace(path + ".tmp", path)


def run_train(cfg: RunConfig, resume: bool = False, stop_after: int | None = None) -> TrainOutputs:
    """Train per ``cfg``; outputs go to ``cfg.run.out``.

    ``resume`` continues from ``resume.pkl`` (and the ledger saved with it).
    ``stop_after`` ends the run after that many total episodes, as if
    interrupted, which is how resumption is exercised.
    """
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    seed = cfg.run.seed
    snap = os.path.join(out, "resume.pkl")
    ledger_path = os.path.join(out, "ledger.tsv")
    state, ledger = None, Ledger()
    if resume:
        if not os.path.exists(snap):
            raise FileNotFoundError(snap)
        state = load_snapshot(snap)
        if os.path.exists(ledger_path):
            ledger = read_ledger(ledger_path)
    _write_run_record(cfg, "train", {"seed": seed, "env_reset_seed_base": seed, "agent_rng_seed": seed + 1})

    sched = training_schedule(cfg)
    factory = WindowSampler(cfg, sched)
    probe = sched.window(0, factory.span)
    total = cfg.run.episodes if stop_after is None else min(stop_after, cfg.run.episodes)

    def on_episode(st: TrainState, entry) -> None:
        every = cfg.run.eval_every
        if every and st.episode % every == 0:
            # greedy episode on a fixed window; it never touches the learner's RNG
            ctl = DRQNController(st.params, cfg.env)
            ctl.name = f"drqn@{st.episode}"
            rollout(ctl, ScalingEnv(cfg.env), probe, seed=seed, ledger=ledger)
        if st.episode % cfg.run.snapshot_every == 0 or st.episode == total:
            write_ledger(ledger, ledger_path)
            _write_curve(st, out)

    st = train(factory, cfg.agent, cfg.env, total, seed=seed, state=state, checkpoint_dir=out,
               snapshot_every=cfg.run.snapshot_every, on_episode=on_episode,
               echo={"version": __version__})
    write_ledger(ledger, ledger_path)
    _write_curve(st, out)
    return TrainOutputs(st, ledger, out)


def make_controller(name: str, cfg: RunConfig, checkpoint: str | None = None):
    if name == "drqn":
        params, _ = load_policy(checkpoint or cfg.checkpoint_path)
        return DRQNController(params, cfg.env, epsilon=0.0, seed=cfg.run.seed)
    return BaselineController(BASELINES[name], cfg.env)


@dataclass
class EvalOutputs:
    summaries: list[Summary]
    rows: dict
    ledger: Ledger
    out_dir: str


def run_evaluate(cfg: RunConfig, policies=None, schedule: ArrivalSchedule | None = None,
                 checkpoint: str | None = None) -> EvalOutputs:
    """Replay each policy on the same schedule with the same seed; write series, summary and ledger."""
    policies = tuple(policies or cfg.run.policies)
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    controllers = [make_controller(p, cfg, checkpoint) for p in policies]
    if schedule is None:
        schedule = evaluation_schedule(cfg)
    _write_run_record(cfg, "evaluate", {"seed": cfg.run.seed})
    with open(os.path.join(out, "schedule.csv"), "w", encoding="utf-8", newline="") as fh:
        schedule.to_csv(fh)
    ledger = Ledger()
    rows, summaries = {}, []
    for ctl in controllers:
        r = rollout(ctl, ScalingEnv(cfg.env), schedule, horizon_s=cfg.run.horizon_s, seed=cfg.run.seed,
                    ledger=ledger)
        rows[ctl.name] = r
        summaries.append(summarize(ctl.name, r))
        with open(os.path.join(out, f"series_{ctl.name}.csv"), "w", encoding="utf-8", newline="") as fh:
            write_series(r, fh)
        log.info("%s: cpu/invocation %.5f violation rate %.4f", ctl.name,
                 summaries[-1].cpu_seconds_per_invocation, summaries[-1].violation_rate)
    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8", newline="") as fh:
        write_summary(summaries, fh)
    write_ledger(ledger, os.path.join(out, "eval_ledger.tsv"))
    return EvalOutputs(summaries, rows, ledger, out)


def _write_run_record(cfg: RunConfig, command: str, seeds: dict) -> None:
    out = cfg.run.out
    with open(os.path.join(out, "config.resolved.ini"), "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))
    write_provenance(out, provenance(cfg, command, seeds, __version__))
