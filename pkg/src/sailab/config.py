"""Run configuration: dataclass plus an INI-style file format.

Example file::

    [env]
    name = kdt
    sticky = 0.25

    [agent]
    loss_variant = sail
    alpha = 0.9

    [run]
    steps = 200000
    seeds = 0 1 2
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentConfig, LossVariant


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str = "kdt"
    sticky: float = 0.25
    step_limit: int | None = None
    map_path: str | None = None
    chain_length: int = 20

    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class RunConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    steps: int = 200_000
    eval_period: int = 1_000
    eval_episodes: int = 10
    eval_epsilon: float = 0.01
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    method: str | None = None

    def __post_init__(self):
        if self.steps <= 0:
            raise ConfigError("steps must be positive")
        if self.eval_period <= 0 or self.eval_episodes <= 0:
            raise ConfigError("eval_period and eval_episodes must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not 0.0 <= self.env.sticky <= 1.0:
            raise ConfigError("sticky probability must lie in [0, 1]")

    @property
    def method_name(self) -> str:
        return self.method or self.agent.loss_variant.value

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_agent(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, agent=dataclasses.replace(self.agent, **changes))

    def with_env(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, env=dataclasses.replace(self.env, **changes))


def _coerce(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if name == "bonus_clip":
            lo, hi = raw.replace(",", " ").split()
            return (float(lo), float(hi))
        if name == "seeds":
            return tuple(int(s) for s in raw.replace(",", " ").split())
        if name == "loss_variant":
            return LossVariant.parse(raw)
        if name in ("step_limit", "map_path", "method") and raw.lower() in ("", "none"):
            return None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) or name == "step_limit":
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r} ({exc})") from None


def _section_values(parser, section: str, cls, base) -> dict:
    if not parser.has_section(section):
        return {}
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in names or key in ("env", "agent"):
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        out[key] = _coerce(raw, getattr(base, key), key)
    return out


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in parser.sections():
        if section not in ("env", "agent", "run"):
            raise ConfigError(f"unknown section [{section}]")
    try:
        env = dataclasses.replace(base.env, **_section_values(parser, "env", EnvSpec, base.env))
        agent = dataclasses.replace(base.agent, **_section_values(parser, "agent", AgentConfig, base.agent))
        return dataclasses.replace(base, env=env, agent=agent,
                                   **_section_values(parser, "run", RunConfig, base))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def format_config(cfg: RunConfig) -> str:
    lines = ["[env]"]
    for f in dataclasses.fields(EnvSpec):
        v = getattr(cfg.env, f.name)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    lines.append("\n[agent]")
    for f in dataclasses.fields(AgentConfig):
        v = getattr(cfg.agent, f.name)
        if f.name == "bonus_clip":
            v = f"{v[0]} {v[1]}"
        elif f.name == "loss_variant":
            v = v.value
        lines.append(f"{f.name} = {v}")
    lines.append("\n[run]")
    for f in dataclasses.fields(RunConfig):
        if f.name in ("env", "agent"):
            continue
        v = getattr(cfg, f.name)
        if f.name == "seeds":
            v = " ".join(map(str, v))
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
