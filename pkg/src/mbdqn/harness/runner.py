"""Training, evaluation, paired-agent and comparison protocols.

Every protocol is deterministic given its config and seed: environments are
deterministic, and all randomness flows from per-seed ``SeedSequence``
streams owned by the agents.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from mbdqn.agent import AgentConfig, MBDQNAgent, build_agent
from mbdqn.harness.config import ConfigError, RunConfig
from mbdqn.harness.heatmap import VisitationMap, export_heatmap
from mbdqn.replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)


@dataclass
class EvalRow:
    seed: int
    step: int
    majority_return: float
    return_stderr: float
    head_returns: tuple[float, ...]
    unique_states: int
    mean_episode_len: float
    goal_rate: float = 0.0


@dataclass
class RunMetrics:
    n_heads: int
    rows: list[EvalRow] = field(default_factory=list)
    visitation: dict[int, VisitationMap] = field(default_factory=dict)

    def header(self) -> list[str]:
        return metrics_header(self.n_heads)

    def seed_rows(self, seed: int) -> list[EvalRow]:
        return [r for r in self.rows if r.seed == seed]

    def to_csv(self, seed: int | None = None) -> str:
        rows = self.rows if seed is None else self.seed_rows(seed)
        return format_csv(self.header(), [row_values(r) for r in rows])


def metrics_header(n_heads: int) -> list[str]:
    return (["seed", "step", "majority_return", "return_stderr"]
            + [f"head{k}_return" for k in range(n_heads)] + ["unique_states", "mean_episode_len"])


def _num(x: float) -> str:
    return repr(float(x))


def row_values(r: EvalRow) -> list[str]:
    return ([str(r.seed), str(r.step), _num(r.majority_return), _num(r.return_stderr)]
            + [_num(h) for h in r.head_returns] + [str(r.unique_states), _num(r.mean_episode_len)])


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# evaluation -------------------------------------------------------------------
def evaluate(agent: MBDQNAgent, env, episodes: int) -> dict[str, np.ndarray]:
    """Greedy evaluation (no exploration, no learning) on ``env``'s transition model.

    Runs ``episodes`` majority-vote episodes and ``episodes`` episodes for each
    head, all in lockstep. Only ``agent.q.forward`` is called, so agent,
    buffer and visitation state are untouched.
    """
    K = agent.n_heads
    n_runs = (K + 1) * episodes
    policy = np.repeat(np.arange(-1, K), episodes)  # -1 is the majority vote
    start = env.state_index(env.start)
    states = np.full(n_runs, start)
    alive = np.ones(n_runs, dtype=bool)
    returns = np.zeros(n_runs)
    lengths = np.zeros(n_runs, dtype=np.int64)
    goals = np.zeros(n_runs, dtype=bool)
    obs_cache = {}
    for _ in range(env.max_episode_steps):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        uniq, inverse = np.unique(states[idx], return_inverse=True)
        missing = [s for s in uniq.tolist() if s not in obs_cache]
        for s in missing:
            obs_cache[s] = env.observe(env.cell_of(s))
        values = agent.q.forward(np.stack([obs_cache[s] for s in uniq.tolist()]))  # (K, U, A)
        greedy = np.argmax(values, axis=-1)  # (K, U)
        majority = MBDQNAgent.majority_from_values(values)  # (U,)
        pol = policy[idx]
        col = inverse.reshape(-1)
        actions = np.where(pol < 0, majority[col], greedy[np.maximum(pol, 0), col])
        s = states[idx]
        nxt = env.next_state[s, actions]
        returns[idx] += env.rewards[s, actions]
        lengths[idx] += 1
        done = env.done[s, actions]
        goals[idx] = done
        states[idx] = nxt
        alive[idx] = ~done
    return {
        "majority": returns[:episodes],
        "majority_len": lengths[:episodes],
        "majority_goal": goals[:episodes],
        "heads": returns[episodes:].reshape(K, episodes),
    }


def _eval_row(seed, step, agent, env, episodes, visits: VisitationMap) -> EvalRow:
    res = evaluate(agent, env, episodes)
    maj = res["majority"]
    stderr = float(np.std(maj, ddof=1) / math.sqrt(len(maj))) if len(maj) > 1 else 0.0
    return EvalRow(
        seed=seed,
        step=step,
        majority_return=float(np.mean(maj)),
        return_stderr=stderr,
        head_returns=tuple(float(x) for x in res["heads"].mean(axis=1)),
        unique_states=visits.unique,
        mean_episode_len=float(np.mean(res["majority_len"])),
        goal_rate=float(np.mean(res["majority_goal"])),
    )


# training ---------------------------------------------------------------------
def prepare_output(out_dir) -> Path | None:
    """Create ``out_dir`` and prove it is writable before any compute happens."""
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()
    return path


@dataclass
class SeedResult:
    seed: int
    rows: list[EvalRow]
    visitation: VisitationMap
    trajectory: str | None = None
    agent: MBDQNAgent | None = None  # the trained agent, for inspection


class _Episode:
    """Bookkeeping for the acting agent's current episode."""

    def __init__(self, env, agent):
        self.env, self.agent = env, agent
        self.episode_id = 0
        self.reset()

    def reset(self):
        self.obs = self.env.reset()
        self.ctx = self.agent.begin_episode()
        self.step_index = 0

    def advance(self, buf: ReplayBuffer, visits: VisitationMap, trace=None):
        env, agent = self.env, self.agent
        x, y = env.cell
        visits.counts[y, x] += 1
        action = agent.act(self.ctx, self.obs)
        out = env.step(action)
        buf.append(Transition(self.obs, action, out.reward, out.obs, out.reached_goal, self.episode_id, self.step_index))
        if trace is not None:
            trace.append(f"{self.episode_id},{self.step_index},{self.ctx.active_head},{x},{y},{action},{out.reward!r},{int(out.terminal)}")
        self.ctx.episode_return += out.reward
        self.ctx.step_count += 1
        if out.terminal:
            self.episode_id += 1
            self.reset()
        else:
            self.obs = out.obs
            self.step_index += 1


def train_seed(cfg: RunConfig, seed: int) -> SeedResult:
    env = cfg.env.build()
    eval_env = cfg.env.build()
    agent = build_agent(cfg.agent, env.obs_dim, env.n_actions, seed)
    buf = ReplayBuffer(cfg.agent.buffer_capacity, env.obs_dim)
    visits = VisitationMap.empty(env.width, env.height)
    trace = [] if cfg.record_trajectory else None
    rows = [_eval_row(seed, 0, agent, eval_env, cfg.eval_episode_count, visits)]
    episode = _Episode(env, agent)
    for t in range(1, cfg.total_env_steps + 1):
        episode.advance(buf, visits, trace)
        agent.env_steps = t
        for _ in range(agent.updates_due(t)):
            agent.update_step(buf)
        agent.maybe_sync(t, buf)
        if t % cfg.eval_period == 0:
            rows.append(_eval_row(seed, t, agent, eval_env, cfg.eval_episode_count, visits))
    trajectory = None
    if trace is not None:
        trajectory = "episode,step,head,x,y,action,reward,terminal\n" + "".join(line + "\n" for line in trace)
    return SeedResult(seed, rows, visits, trajectory, agent)


def _map_seeds(fn, cfg, seeds, workers):
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, [cfg] * len(seeds), seeds))
    return [fn(cfg, s) for s in seeds]


def run_training(cfg: RunConfig, workers: int = 1) -> RunMetrics:
    """Train one agent per seed; write per-seed and merged metrics plus heatmaps to ``cfg.out_dir``."""
    out = prepare_output(cfg.out_dir)
    results = _map_seeds(train_seed, cfg, list(cfg.seeds), workers)
    metrics = RunMetrics(cfg.agent.n_heads)
    for res in results:
        metrics.rows.extend(res.rows)
        metrics.visitation[res.seed] = res.visitation
    if out is not None:
        for res in results:
            (out / f"metrics_seed{res.seed}.csv").write_text(metrics.to_csv(res.seed))
            export_heatmap(res.visitation, out / f"heatmap_seed{res.seed}")
            if res.trajectory is not None:
                (out / f"trajectory_seed{res.seed}.csv").write_text(res.trajectory)
        (out / "metrics.csv").write_text(metrics.to_csv())
    log.info("finished %s over seeds %s", cfg.name, cfg.seeds)
    return metrics


# paired data-generation / learning-only experiment -----------------------------
def paired_seed(cfg: RunConfig, learner_cfg: AgentConfig, seed: int, hook: Callable | None = None):
    env = cfg.env.build()
    eval_env = cfg.env.build()
    generator = build_agent(cfg.agent, env.obs_dim, env.n_actions, seed)
    learner = build_agent(learner_cfg, env.obs_dim, env.n_actions, seed)
    buf = ReplayBuffer(cfg.agent.buffer_capacity, env.obs_dim)
    visits = VisitationMap.empty(env.width, env.height)
    learner_visits = VisitationMap.empty(env.width, env.height)
    gen_rows = [_eval_row(seed, 0, generator, eval_env, cfg.eval_episode_count, visits)]
    learn_rows = [_eval_row(seed, 0, learner, eval_env, cfg.eval_episode_count, learner_visits)]
    episode = _Episode(env, generator)
    for t in range(1, cfg.total_env_steps + 1):
        episode.advance(buf, visits)
        generator.env_steps = learner.env_steps = t
        for _ in range(generator.updates_due(t)):
            generator.update_step(buf)
            learner.update_step(buf)
            if hook is not None:
                hook(generator.last_update, learner.last_update)
        generator.maybe_sync(t, buf)
        learner.maybe_sync(t, buf)
        if t % cfg.eval_period == 0:
            gen_rows.append(_eval_row(seed, t, generator, eval_env, cfg.eval_episode_count, visits))
            learn_rows.append(_eval_row(seed, t, learner, eval_env, cfg.eval_episode_count, learner_visits))
    return gen_rows, learn_rows, visits


def _paired_job(cfg, learner_cfg, seed):
    return paired_seed(cfg, learner_cfg, seed)


def run_paired(cfg: RunConfig, learner_cfg: AgentConfig, workers: int = 1,
               hook: Callable | None = None) -> tuple[RunMetrics, RunMetrics]:
    """Generator acts and learns; the learner only learns from the generator's buffer.

    Both agents take the same number of update steps, on the same cadence,
    from one shared buffer. The learner never appends, and its visitation
    columns stay at zero.
    """
    if learner_cfg.buffer_capacity != cfg.agent.buffer_capacity:
        learner_cfg = replace(learner_cfg, buffer_capacity=cfg.agent.buffer_capacity)
    out = prepare_output(cfg.out_dir)
    seeds = list(cfg.seeds)
    if workers > 1 and len(seeds) > 1 and hook is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_paired_job, [cfg] * len(seeds), [learner_cfg] * len(seeds), seeds))
    else:
        results = [paired_seed(cfg, learner_cfg, s, hook) for s in seeds]
    gen = RunMetrics(cfg.agent.n_heads)
    learn = RunMetrics(learner_cfg.n_heads)
    for seed, (g_rows, l_rows, visits) in zip(seeds, results):
        gen.rows.extend(g_rows)
        learn.rows.extend(l_rows)
        gen.visitation[seed] = visits
    if out is not None:
        for sub, metrics in (("generator", gen), ("learner", learn)):
            (out / sub).mkdir(exist_ok=True)
            (out / sub / "metrics.csv").write_text(metrics.to_csv())
        for seed, visits in gen.visitation.items():
            export_heatmap(visits, out / "generator" / f"heatmap_seed{seed}")
    return gen, learn


# comparison -----------------------------------------------------------------
@dataclass
class SummaryRow:
    config: str
    final_return: float
    auc: float
    steps_to_threshold: int | None


def mean_curve(rows: list[EvalRow]) -> tuple[np.ndarray, np.ndarray]:
    """Seed-averaged majority-vote return per evaluation step."""
    steps = sorted({r.step for r in rows})
    means = [np.mean([r.majority_return for r in rows if r.step == s]) for s in steps]
    return np.array(steps, dtype=np.float64), np.array(means)


def summarize(name: str, rows: list[EvalRow], threshold: float | None) -> SummaryRow:
    """Final return, normalised area under the curve and first step reaching ``threshold``.

    The area is the trapezoid integral of the seed-mean curve divided by the
    step span, i.e. the time-averaged return (equal to the single value when
    only one evaluation exists).
    """
    steps, means = mean_curve(rows)
    if len(steps) > 1:
        widths = np.diff(steps)
        auc = float(np.sum(widths * (means[1:] + means[:-1]) / 2.0) / (steps[-1] - steps[0]))
    else:
        auc = float(means[0])
    reached = None
    if threshold is not None:
        hits = np.flatnonzero(means >= threshold)
        reached = int(steps[hits[0]]) if len(hits) else None
    return SummaryRow(name, float(means[-1]), auc, reached)


@dataclass
class ComparisonTable:
    summary: list[SummaryRow]
    metrics: dict[str, RunMetrics]

    def summary_csv(self) -> str:
        rows = [[s.config, _num(s.final_return), _num(s.auc), "" if s.steps_to_threshold is None else str(s.steps_to_threshold)]
                for s in self.summary]
        return format_csv(["config", "final_return", "auc", "steps_to_threshold"], rows)

    def merged_csv(self) -> str:
        width = max(m.n_heads for m in self.metrics.values())
        header = ["config"] + metrics_header(width)
        rows = []
        for name, m in self.metrics.items():
            for r in m.rows:
                vals = row_values(r)
                heads = vals[4:4 + m.n_heads] + [""] * (width - m.n_heads)
                rows.append([name] + vals[:4] + heads + vals[4 + m.n_heads:])
        return format_csv(header, rows)


def run_comparison(configs: list[RunConfig], workers: int = 1, out_dir=None) -> ComparisonTable:
    """Run every config over the first config's seeds and rank them by area under the curve."""
    if not configs:
        raise ConfigError("nothing to compare")
    ref = configs[0]
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("compared configs need distinct names")
    for c in configs[1:]:
        if c.env != ref.env:
            raise ConfigError(f"config {c.name!r} uses a different environment than {ref.name!r}")
        if c.total_env_steps != ref.total_env_steps or c.eval_period != ref.eval_period:
            raise ConfigError(f"config {c.name!r} uses a different step budget or eval cadence")
    out = prepare_output(out_dir if out_dir is not None else ref.out_dir)
    metrics = {}
    for c in configs:
        sub = None if out is None else str(out / c.name)
        metrics[c.name] = run_training(replace(c, seeds=ref.seeds, out_dir=sub), workers=workers)
    summary = [summarize(c.name, metrics[c.name].rows, c.return_threshold) for c in configs]
    summary.sort(key=lambda s: -s.auc)
    table = ComparisonTable(summary, metrics)
    if out is not None:
        (out / "comparison.csv").write_text(table.merged_csv())
        (out / "summary.csv").write_text(table.summary_csv())
    return table


def stable_goal_step(rows: list[EvalRow], level: float = 0.95) -> float:
    """First eval step from which every later eval reaches the goal in >= ``level`` of episodes."""
    rows = sorted(rows, key=lambda r: r.step)
    first = math.inf
    for r in reversed(rows):
        if r.goal_rate >= level:
            first = r.step
        else:
            break
    return first
