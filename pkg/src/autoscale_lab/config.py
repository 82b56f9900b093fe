"""Run configuration: one sectioned key=value file with four sections.

``[env]`` and ``[agent]`` take the simulator and learner fields by name,
``[trace]`` picks the workload and ``[run]`` holds seeds, lengths and paths.
Keys left out keep their defaults; unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .agent import AgentConfig
from .env import EnvConfig
from .trace import DEFAULT_TICK_CAP

POLICY_NAMES = ("drqn", "rps5", "rps2", "vps1")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TraceConfig:
    source: str = "synthetic"        # synthetic | file | constant
    paths: tuple[str, ...] = ()      # one Azure-format CSV per day, in day order (source = file)
    synthetic_days: int = 2
    synthetic_seed: int = 0
    function_id: str = ""
    rank: int = 1                    # used when function_id is empty
    mode: str = "uniform"
    expand_seed: int = 0
    tick_cap: int = DEFAULT_TICK_CAP
    train_days: tuple[int, ...] = (0,)
    eval_day: int = 1
    eval_start_s: int = 28_800
    constant_rps: float = 12.0       # source = constant

    def __post_init__(self):
        if self.source not in ("synthetic", "file", "constant"):
            raise ConfigError(f"trace.source must be synthetic, file or constant, got {self.source!r}")
        if self.mode not in ("uniform", "poisson"):
            raise ConfigError(f"trace.mode must be uniform or poisson, got {self.mode!r}")
        if self.source == "file" and not self.paths:
            raise ConfigError("trace.paths is required when trace.source = file")
        if self.rank < 1:
            raise ConfigError("trace.rank starts at 1")
        if self.eval_start_s < 0 or self.constant_rps < 0:
            raise ConfigError("trace.eval_start_s and trace.constant_rps must be non-negative")
        if not self.train_days or min(self.train_days) < 0 or self.eval_day < 0:
            raise ConfigError("day indices must be non-negative and train_days non-empty")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    episodes: int = 300
    horizon_s: int = 14_400
    out: str = "runs/default"
    eval_every: int = 10           # greedy evaluation episode (ledgered) every N training episodes; 0 = off
    snapshot_every: int = 10
    policies: tuple[str, ...] = POLICY_NAMES
    checkpoint: str = ""           # empty = <out>/final.ckpt

    def __post_init__(self):
        if self.episodes < 0 or self.horizon_s <= 0 or self.eval_every < 0 or self.snapshot_every <= 0:
            raise ConfigError("run.episodes, run.eval_every >= 0; run.horizon_s, run.snapshot_every > 0")
        bad = [p for p in self.policies if p not in POLICY_NAMES]
        if bad or not self.policies:
            raise ConfigError(f"run.policies must be a non-empty subset of {','.join(POLICY_NAMES)}")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def checkpoint_path(self) -> str:
        return self.run.checkpoint or os.path.join(self.run.out, "final.ckpt")

    def as_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


SECTIONS = {"env": EnvConfig, "agent": AgentConfig, "trace": TraceConfig, "run": RunSection}


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _convert(section: str, key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return {"true": True, "false": False}[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(t) for t in items)
            return tuple(items)
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r}") from None
    return text


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        out[f.name] = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive field names
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if parser.defaults():
        raise ConfigError(f"keys outside a section: {', '.join(parser.defaults())}")
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        defaults = _defaults(cls)
        values = {}
        if parser.has_section(name):
            for key, text_value in parser.items(name):
                if key not in defaults:
                    raise ConfigError(f"[{name}] unknown key {key!r}")
                values[key] = _convert(name, key, text_value, defaults[key])
        try:
            built[name] = cls(**values)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return RunConfig(**built)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read(), source=path)
    # relative trace paths are taken from the config file's directory
    base = os.path.dirname(os.path.abspath(path))
    if cfg.trace.paths:
        cfg = cfg.replace("trace", paths=tuple(os.path.join(base, p) for p in cfg.trace.paths))
    return cfg


def render_config(cfg: RunConfig) -> str:
    """Fully expanded config text that parses back to ``cfg``."""
    lines = []
    for name, values in cfg.as_dict().items():
        lines.append(f"[{name}]")
        for key, value in values.items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def provenance(cfg: RunConfig, command: str, seeds: dict, version: str) -> dict:
    return {"tool": "autoscale-lab", "version": version, "command": command, "seeds": seeds,
            "config": cfg.as_dict()}


def write_provenance(out_dir: str, record: dict) -> str:
    path = os.path.join(out_dir, "provenance.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
