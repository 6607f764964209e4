"""Run configuration and the flat ``section.key = value`` config-file format.

Example file::

    name = mixed13
    env.kind = dense_maze
    env.size = 10
    agent.backup_mix = [1, 3]
    agent.n_heads = 10
    agent.updates_per_env_step = 1/4
    run.total_env_steps = 100000
    run.seeds = [0, 1, 2]

Values are Python literals where they parse as one (numbers, lists, booleans
``True``/``False``/``true``/``false``), bare strings otherwise. ``#`` starts a
comment. Unknown keys are rejected.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from mbdqn.agent import AgentConfig, EpsilonSchedule, mixed_backups
from mbdqn.envs import ChainMDP, GridMaze, dense_maze, sparse_maze


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "dense_maze"  # dense_maze | sparse_maze | layout | chain
    size: int = 10
    layout: str | None = None
    reward_mode: str = "dense"
    r_max: float = 1.0
    step_penalty: float | None = None
    r_goal: float = 1.0
    max_episode_steps: int = 200
    encoding: str = "onehot"
    chain_length: int = 5

    def build(self):
        common = dict(max_episode_steps=self.max_episode_steps, r_goal=self.r_goal, encoding=self.encoding)
        if self.kind == "chain":
            return ChainMDP(self.chain_length, r_goal=self.r_goal, step_penalty=self.step_penalty or 0.0,
                            max_episode_steps=self.max_episode_steps)
        if self.kind == "dense_maze":
            return dense_maze(self.size, r_max=self.r_max, **self._penalty(1.0), **common)
        if self.kind == "sparse_maze":
            return sparse_maze(self.size, **self._penalty(0.01), **common)
        if self.kind == "layout":
            if not self.layout:
                raise ConfigError("env.kind = layout needs env.layout")
            default = 1.0 if self.reward_mode == "dense" else 0.01
            return GridMaze.from_file(self.layout, reward_mode=self.reward_mode, r_max=self.r_max,
                                      **self._penalty(default), **common)
        raise ConfigError(f"unknown env.kind {self.kind!r}")

    def _penalty(self, default):
        return {"step_penalty": default if self.step_penalty is None else self.step_penalty}


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    total_env_steps: int = 100_000
    eval_period: int = 5_000
    eval_episode_count: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    out_dir: str | None = None
    return_threshold: float | None = None
    record_trajectory: bool = False

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.eval_period <= 0 or self.eval_episode_count <= 0:
            raise ConfigError("eval_period and eval_episode_count must be positive")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be non-negative")


_AGENT_FIELDS = {f.name for f in fields(AgentConfig)} - {"epsilon"}
_ENV_FIELDS = {f.name for f in fields(EnvSpec)}
_RUN_FIELDS = {f.name for f in fields(RunConfig)} - {"name", "env", "agent"}
_EPSILON_KEYS = {"epsilon_start": "start", "epsilon_end": "end", "epsilon_decay_steps": "decay_steps"}


def parse_value(raw: str):
    text = raw.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.lower() in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_text(text: str) -> dict[str, object]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = parse_value(raw)
    return values


def load_values(path) -> dict[str, object]:
    return parse_text(Path(path).read_text())


def build_run_config(values: dict[str, object], base: RunConfig | None = None) -> RunConfig:
    """Apply flat ``section.key`` values on top of ``base`` (defaults when omitted)."""
    base = base or RunConfig()
    env_kw, agent_kw, eps_kw, run_kw = {}, {}, {}, {}
    mix, n_heads = None, None
    for key, value in values.items():
        section, _, name = key.partition(".")
        if key == "name":
            run_kw["name"] = str(value)
        elif section == "env" and name in _ENV_FIELDS:
            env_kw[name] = value
        elif section == "agent" and name in _EPSILON_KEYS:
            eps_kw[_EPSILON_KEYS[name]] = value
        elif section == "agent" and name == "backup_mix":
            mix = value
        elif section == "agent" and name == "n_heads":
            n_heads = int(value)
        elif section == "agent" and name in _AGENT_FIELDS:
            if name == "updates_per_env_step":
                value = Fraction(str(value))
            agent_kw[name] = tuple(value) if isinstance(value, list) else value
        elif section == "run" and name in _RUN_FIELDS:
            run_kw[name] = tuple(value) if isinstance(value, list) else value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if mix is not None:
        agent_kw["head_backups"] = mixed_backups(mix if isinstance(mix, (list, tuple)) else [mix], n_heads or 10)
    elif n_heads is not None:
        backups = agent_kw.get("head_backups", base.agent.head_backups)
        if len(set(backups)) != 1:
            raise ConfigError("agent.n_heads without agent.backup_mix needs homogeneous head_backups")
        agent_kw["head_backups"] = (backups[0],) * n_heads
    if eps_kw:
        agent_kw["epsilon"] = replace(base.agent.epsilon, **eps_kw)
    try:
        agent = replace(base.agent, **agent_kw)
        env = replace(base.env, **env_kw)
        return replace(base, env=env, agent=agent, **run_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path, overrides: dict[str, object] | None = None) -> RunConfig:
    values = load_values(path)
    values.update(overrides or {})
    return build_run_config(values)


def dump_run_config(cfg: RunConfig) -> str:
    """Render ``cfg`` in the file format; ``build_run_config(parse_text(...))`` round-trips it."""
    lines = [f"name = {cfg.name}"]
    for f in fields(EnvSpec):
        lines.append(f"env.{f.name} = {_fmt(getattr(cfg.env, f.name))}")
    for f in fields(AgentConfig):
        if f.name == "epsilon":
            eps: EpsilonSchedule = cfg.agent.epsilon
            lines += [f"agent.epsilon_start = {eps.start!r}", f"agent.epsilon_end = {eps.end!r}",
                      f"agent.epsilon_decay_steps = {eps.decay_steps}"]
        else:
            lines.append(f"agent.{f.name} = {_fmt(getattr(cfg.agent, f.name))}")
    for name in sorted(_RUN_FIELDS):
        lines.append(f"run.{name} = {_fmt(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return repr(list(value))
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, str):
        return value
    return repr(value)
