"""Deep recurrent Q-learning controller.

Acting carries the LSTM state across decisions.  Replay stores whole
episodes and trains on fixed-length windows started from a zero hidden
state; the first ``burn_in`` steps of each window only warm the state.
"""
from __future__ import annotations

import csv
import logging
import os
import pickle
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import nn
from .env import N_ACTIONS, EnvConfig, EnvState, ScalingEnv, per_instance_capacity
from .trace import ArrivalSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    batch_size: int = 32
    seq_len: int = 8
    burn_in: int = 4
    target_sync_every: int = 1_000
    train_every: int = 4
    episode_len: int = 1_000
    buffer_capacity: int = 500
    huber_delta: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0 <= self.burn_in < self.seq_len:
            raise ValueError("burn_in must be smaller than seq_len")
        for name in ("batch_size", "seq_len", "target_sync_every", "train_every", "episode_len",
                     "buffer_capacity", "epsilon_decay_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.huber_delta <= 0:
            raise ValueError("lr and huber_delta must be positive")

    def epsilon(self, step: int) -> float:
        """Linear decay from epsilon_start at step 0 to epsilon_end at epsilon_decay_steps."""
        frac = min(step / self.epsilon_decay_steps, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def as_dict(self) -> dict:
        return asdict(self)


class NormalizationSpec:
    """instances / max_instances, rps / (max_instances * capacity); fractions pass through."""

    def __init__(self, env_config: EnvConfig):
        self.scale = np.array([
            1.0 / env_config.max_instances,
            1.0 / (env_config.max_instances * per_instance_capacity(env_config)),
            1.0,
            1.0,
        ])

    def __call__(self, state: EnvState) -> np.ndarray:
        return np.asarray(state, dtype=np.float64) * self.scale


def act(params: nn.QNetParams, state: np.ndarray, hidden: nn.HiddenState, epsilon: float,
        rng: np.random.Generator) -> tuple[int, nn.HiddenState]:
    """Epsilon-greedy action; the hidden state always advances through the greedy pass."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    q, hidden, _ = nn.forward_cached(params, np.asarray(state, dtype=np.float64).reshape(1, 1, nn.N_IN),
                                     hidden, keep=False)
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS)), hidden
    # argmax returns the first maximum -> lowest code on ties
    return int(np.argmax(q[0, 0])), hidden


# -- replay -------------------------------------------------------------------

class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: int
    next_state: np.ndarray
    done: bool


@dataclass
class Episode:
    states: np.ndarray       # (L, 4) normalized
    actions: np.ndarray      # (L,)
    rewards: np.ndarray      # (L,)
    next_states: np.ndarray  # (L, 4)
    dones: np.ndarray        # (L,)

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions: list[Transition]) -> "Episode":
        for t in transitions:
            if not 0 <= t.action < N_ACTIONS:
                raise ValueError(f"invalid action code {t.action}")
            if t.reward not in (0, 1):
                raise ValueError(f"reward must be 0 or 1, got {t.reward}")
        return cls(
            np.array([t.state for t in transitions], dtype=np.float64),
            np.array([t.action for t in transitions], dtype=np.int64),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.array([t.next_state for t in transitions], dtype=np.float64),
            np.array([t.done for t in transitions], dtype=np.float64),
        )


class Batch(NamedTuple):
    """Time-major windows: states/next_states (T, B, 4); actions/rewards/dones (T, B)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class EpisodeBuffer:
    def __init__(self, capacity: int = 500):
        self.capacity = capacity
        self.episodes: deque[Episode] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)  # deque drops the oldest when full

    def eligible(self, seq_len: int) -> list[int]:
        return [i for i, e in enumerate(self.episodes) if len(e) >= seq_len]

    def sample(self, batch_size: int, seq_len: int, rng: np.random.Generator) -> Batch:
        """Draw ``batch_size`` (episode, offset) windows; windows never cross episodes."""
        pool = self.eligible(seq_len)
        if len(pool) < batch_size:
            raise ValueError(f"need {batch_size} episodes of length >= {seq_len}, have {len(pool)}")
        picks = rng.integers(len(pool), size=batch_size)
        parts = [[] for _ in range(5)]
        for k in picks:
            ep = self.episodes[pool[k]]
            start = int(rng.integers(len(ep) - seq_len + 1))
            sl = slice(start, start + seq_len)
            for dst, src in zip(parts, (ep.states, ep.actions, ep.rewards, ep.next_states, ep.dones)):
                dst.append(src[sl])
        return Batch(*(np.stack(p, axis=1) for p in parts))


# -- learning -----------------------------------------------------------------

def td_targets(batch: Batch, target_params: nn.QNetParams, gamma: float) -> np.ndarray:
    """y_t = r_t + gamma * max_a Q_target(s_{t+1}, a), bootstrap dropped on done.

    The target network runs over s_0..s_T (the window plus its last next
    state) so its hidden state at s_{t+1} has seen the same history as the
    online network.
    """
    seq = np.concatenate([batch.states, batch.next_states[-1:]], axis=0)
    q, _, _ = nn.forward_cached(target_params, seq, None, keep=False)
    best_next = q[1:].max(axis=2)
    return batch.rewards + gamma * (1.0 - batch.dones) * best_next


def huber(x: np.ndarray, delta: float = 1.0) -> np.ndarray:
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def sequence_loss(params: nn.QNetParams, batch: Batch, targets: np.ndarray, burn_in: int,
                  delta: float = 1.0) -> tuple[float, nn.QNetParams]:
    """Mean Huber TD loss over post-burn-in steps and its exact gradient."""
    q, _, cache = nn.forward_cached(params, batch.states, None, keep=True)
    T, B = batch.actions.shape
    tt, bb = np.meshgrid(np.arange(burn_in, T), np.arange(B), indexing="ij")
    chosen = q[tt, bb, batch.actions[burn_in:]]
    err = chosen - targets[burn_in:]
    n = err.size
    loss = float(huber(err, delta).sum() / n)
    dq = np.zeros_like(q)
    dq[tt, bb, batch.actions[burn_in:]] = np.clip(err, -delta, delta) / n
    return loss, nn.backward_cached(params, cache, dq)


def train_step(params: nn.QNetParams, target_params: nn.QNetParams, opt: nn.AdamState,
               buffer: EpisodeBuffer, config: AgentConfig, rng: np.random.Generator) -> tuple[nn.QNetParams, float]:
    batch = buffer.sample(config.batch_size, config.seq_len, rng)
    y = td_targets(batch, target_params, config.gamma)
    loss, grads = sequence_loss(params, batch, y, config.burn_in, config.huber_delta)
    nn.adam_update(params, grads, opt)
    return params, loss


# -- training loop -------------------------------------------------------------

class EpisodeLog(NamedTuple):
    episode_index: int
    total_reward: int
    epsilon: float
    loss_mean: float


EnvFactory = Callable[[int, np.random.Generator], tuple[ScalingEnv, ArrivalSchedule]]


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    params: nn.QNetParams
    target: nn.QNetParams
    opt: nn.AdamState
    buffer: EpisodeBuffer
    rng: np.random.Generator
    env_steps: int = 0
    updates: int = 0
    episode: int = 0
    curve: list[EpisodeLog] = field(default_factory=list)
    best_reward: float = -1.0
    best_params: nn.QNetParams | None = None


def new_train_state(config: AgentConfig, seed: int) -> TrainState:
    params = nn.init_params(seed)
    return TrainState(params, params.copy(), nn.AdamState(lr=config.lr), EpisodeBuffer(config.buffer_capacity),
                      np.random.default_rng(seed + 1))


def train(env_factory: EnvFactory, config: AgentConfig, env_config: EnvConfig, total_episodes: int,
          seed: int = 0, state: TrainState | None = None, checkpoint_dir: str | None = None,
          snapshot_every: int = 10, on_episode: Callable[[TrainState, EpisodeLog], None] | None = None,
          echo: dict | None = None) -> TrainState:
    """Run (or continue) training until ``total_episodes`` episodes are logged.

    With ``checkpoint_dir``, writes ``best.ckpt``/``final.ckpt`` and a resume
    snapshot every ``snapshot_every`` episodes.
    """
    st = state or new_train_state(config, seed)
    norm = NormalizationSpec(env_config)
    echo = {"agent": config.as_dict(), "env": env_config.as_dict(), "seed": seed, **(echo or {})}

    def eps() -> float:
        return config.epsilon(st.env_steps)

    while st.episode < total_episodes:
        env, schedule = env_factory(st.episode, st.rng)
        losses = []
        transitions = []
        state0 = env.reset(schedule, seed + st.episode)
        x = norm(state0)
        hidden = nn.zero_hidden(1)
        total = 0
        epsilon_now = eps()
        warm = len(st.buffer.eligible(config.seq_len)) >= config.batch_size
        for _ in range(config.episode_len):
            epsilon_now = eps()
            action, hidden = act(st.params, x, hidden, epsilon_now, st.rng)
            res = env.step(action)
            nx = norm(res.state)
            transitions.append(Transition(x, action, res.reward, nx, res.done))
            total += res.reward
            x = nx
            st.env_steps += 1
            if warm and st.env_steps % config.train_every == 0:
                _, loss = train_step(st.params, st.target, st.opt, st.buffer, config, st.rng)
                losses.append(loss)
                st.updates += 1
                if st.updates % config.target_sync_every == 0:
                    st.target = st.params.copy()
            if res.done:
                break
        st.buffer.add(Episode.from_transitions(transitions))
        entry = EpisodeLog(st.episode, total, epsilon_now, float(np.mean(losses)) if losses else float("nan"))
        st.curve.append(entry)
        st.episode += 1
        if total > st.best_reward:
            st.best_reward = total
            st.best_params = st.params.copy()
        log.info("episode %d reward %d epsilon %.3f loss %.4g", entry.episode_index, total, epsilon_now,
                 entry.loss_mean)
        if on_episode is not None:
            on_episode(st, entry)
        if checkpoint_dir and (st.episode % snapshot_every == 0 or st.episode == total_episodes):
            save_snapshot(st, os.path.join(checkpoint_dir, "resume.pkl"))
            _write_ckpt(os.path.join(checkpoint_dir, "best.ckpt"), st.best_params, echo)
            _write_ckpt(os.path.join(checkpoint_dir, "final.ckpt"), st.params, echo)
    return st


def _write_ckpt(path: str, params: nn.QNetParams, echo: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        nn.save_checkpoint(fh, params, echo)
    os.replace(tmp, path)


def save_snapshot(st: TrainState, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        pickle.dump(st, fh, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)


def load_snapshot(path: str) -> TrainState:
    with open(path, "rb") as fh:
        return pickle.load(fh)


def write_reward_curve(curve: list[EpisodeLog], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(EpisodeLog._fields)
    for e in curve:
        w.writerow([e.episode_index, e.total_reward, repr(float(e.epsilon)), repr(float(e.loss_mean))])


def load_policy(path: str) -> tuple[nn.QNetParams, dict]:
    with open(path, "rb") as fh:
        return nn.load_checkpoint(fh)


class DRQNController:
    """Greedy (by default) controller with carried hidden state, for evaluation rollouts."""

    name = "drqn"

    def __init__(self, params: nn.QNetParams, env_config: EnvConfig, epsilon: float = 0.0, seed: int = 0):
        self.params = params
        self.norm = NormalizationSpec(env_config)
        self.epsilon = epsilon
        self.seed = seed
        self.reset()

    def reset(self) -> None:
        self.hidden = nn.zero_hidden(1)
        self.rng = np.random.default_rng(self.seed)

    def decide(self, state: EnvState, last=None) -> int:
        action, self.hidden = act(self.params, self.norm(state), self.hidden, self.epsilon, self.rng)
        return action
