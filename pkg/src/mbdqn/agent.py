"""Mixture Bootstrapped DQN agent and its baselines.

One :class:`MBDQNAgent` covers every configuration used in the experiments:

* heterogeneous backup lengths across heads (the mixture agent),
* homogeneous lengths (All-n-Step bootstrapped DQN baselines),
* ``mode="lambda_single_target"`` with one head trained on cached
  lambda-returns (the DQN(lambda) baseline).

:class:`BootstrappedDQNAgent` is an independent one-step implementation kept
as a reference for the degenerate All-1-Step case.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from mbdqn.approximator import HeadSpec, build_qfunction
from mbdqn.replay import ReplayBuffer
from mbdqn.returns import DiscountSpec, LambdaSpec, batch_n_step_returns

ENSEMBLE = "ensemble"
LAMBDA = "lambda_single_target"


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear anneal from ``start`` to ``end`` over ``decay_steps`` environment steps."""

    start: float = 1.0
    end: float = 0.01
    decay_steps: int = 10_000

    def __post_init__(self):
        for v in (self.start, self.end):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"epsilon values must lie in [0, 1], got {v}")
        if self.decay_steps < 0:
            raise ValueError("decay_steps must be non-negative")

    def __call__(self, step: int) -> float:
        if self.decay_steps == 0 or step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * step / self.decay_steps

    @classmethod
    def constant(cls, eps: float) -> "EpsilonSchedule":
        return cls(eps, eps, 0)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    head_backups: tuple[int, ...] = (1,) * 10
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    learning_rate: float = 0.05
    target_sync_period: int = 500
    batch_size: int = 32
    updates_per_env_step: Fraction = Fraction(1, 4)
    buffer_capacity: int = 100_000
    learning_starts: int = 0
    mode: str = ENSEMBLE
    lam: float | None = None
    lambda_max_horizon: int = 100
    algorithm: str = "mbdqn"
    backend: str = "mlp"
    hidden_sizes: tuple[int, ...] = (64,)
    optimizer: str = "sgd"
    normalize_trunk: bool = True
    init_value: float = 0.0
    tabular_init_noise: float = 0.0

    def __post_init__(self):
        DiscountSpec(self.gamma)
        object.__setattr__(self, "head_backups", tuple(int(n) for n in self.head_backups))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "updates_per_env_step", Fraction(self.updates_per_env_step).limit_denominator(1000))
        if not self.head_backups:
            raise ValueError("at least one head is required")
        for n in self.head_backups:
            HeadSpec(n)
        if self.mode not in (ENSEMBLE, LAMBDA):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == LAMBDA:
            if self.lam is None:
                raise ValueError("lambda mode needs lam")
            if len(self.head_backups) != 1:
                raise ValueError("lambda mode uses exactly one head")
            LambdaSpec(self.lam, self.lambda_max_horizon)
        if self.algorithm not in ("mbdqn", "bootstrapped_dqn"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "bootstrapped_dqn" and (set(self.head_backups) != {1} or self.mode != ENSEMBLE):
            raise ValueError("the reference bootstrapped DQN only supports one-step heads")
        if self.target_sync_period < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("sync period, batch size and capacity must be positive")
        if self.updates_per_env_step < 0 or self.learning_rate < 0:
            raise ValueError("update cadence and learning rate must be non-negative")

    @property
    def head_specs(self) -> list[HeadSpec]:
        return [HeadSpec(n) for n in self.head_backups]

    @property
    def n_heads(self) -> int:
        return len(self.head_backups)

    @property
    def lambda_spec(self) -> LambdaSpec | None:
        return None if self.lam is None else LambdaSpec(self.lam, self.lambda_max_horizon)


def mixed_backups(lengths, n_heads: int = 10) -> tuple[int, ...]:
    """Split ``n_heads`` evenly over ``lengths``; leftovers go to the longest lengths.

    >>> mixed_backups([1, 3])
    (1, 1, 1, 1, 1, 3, 3, 3, 3, 3)
    >>> mixed_backups([1, 2, 3])
    (1, 1, 1, 2, 2, 2, 3, 3, 3, 3)
    """
    lengths = sorted(int(n) for n in lengths)
    if n_heads < len(lengths):
        raise ValueError("need at least one head per backup length")
    base, extra = divmod(n_heads, len(lengths))
    counts = [base + (i >= len(lengths) - extra) for i in range(len(lengths))]
    return tuple(n for n, c in zip(lengths, counts) for _ in range(c))


def all_n_step(n: int, n_heads: int = 10, **kwargs) -> AgentConfig:
    return AgentConfig(head_backups=(n,) * n_heads, **kwargs)


def mixed(lengths, n_heads: int = 10, **kwargs) -> AgentConfig:
    return AgentConfig(head_backups=mixed_backups(lengths, n_heads), **kwargs)


def lambda_baseline(lam: float = 0.9, max_horizon: int = 100, **kwargs) -> AgentConfig:
    return AgentConfig(head_backups=(1,), mode=LAMBDA, lam=lam, lambda_max_horizon=max_horizon, **kwargs)


@dataclass
class EpisodeContext:
    active_head: int
    episode_return: float = 0.0
    step_count: int = 0


@dataclass
class UpdateRecord:
    """What the last update step consumed, kept for inspection and tests."""

    starts: np.ndarray
    horizons: tuple[int, ...]
    targets: np.ndarray
    losses: np.ndarray
    snapshot_epoch: int


class MBDQNAgent:
    """Ensemble Q-learner whose heads each bootstrap after their own number of rewards.

    Random streams are split from ``seed``: parameter initialisation, acting
    (head choice and exploration) and replay sampling each get their own
    generator, so a learner that never acts still samples the same batches as
    an acting agent built from the same seed.
    """

    def __init__(self, config: AgentConfig, obs_dim: int, n_actions: int, seed: int = 0):
        self.config = config
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        init_ss, act_ss, sample_ss = np.random.SeedSequence(seed).spawn(3)
        kwargs = {}
        if config.backend == "mlp":
            kwargs = dict(hidden_sizes=config.hidden_sizes, optimizer=config.optimizer,
                          normalize_trunk=config.normalize_trunk, init_value=config.init_value)
        elif config.backend == "tabular":
            kwargs = dict(init_value=config.init_value, init_noise=config.tabular_init_noise)
        self.q = build_qfunction(config.backend, obs_dim, n_actions, config.head_specs, rng=np.random.default_rng(init_ss), **kwargs)
        self.act_rng = np.random.default_rng(act_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.sync_epoch = 0
        self.targets = self.q.sync_targets(self.sync_epoch)
        self.env_steps = 0
        self.updates = 0
        self.last_update: UpdateRecord | None = None

    @property
    def n_heads(self) -> int:
        return self.config.n_heads

    def epsilon(self) -> float:
        return self.config.epsilon(self.env_steps)

    # acting -----------------------------------------------------------------
    def begin_episode(self, rng: np.random.Generator | None = None) -> EpisodeContext:
        rng = self.act_rng if rng is None else rng
        return EpisodeContext(active_head=int(rng.integers(0, self.n_heads)))

    def greedy_actions(self, obs) -> np.ndarray:
        """Greedy action of every head; ``np.argmax`` breaks ties towards the lowest index."""
        return np.argmax(self.q.forward(obs), axis=-1)

    def act(self, ctx: EpisodeContext, obs, epsilon: float | None = None) -> int:
        eps = self.epsilon() if epsilon is None else epsilon
        if self.act_rng.random() < eps:
            return int(self.act_rng.integers(0, self.n_actions))
        return int(np.argmax(self.q.forward(obs)[ctx.active_head]))

    def act_majority(self, obs) -> int:
        votes = np.bincount(self.greedy_actions(obs), minlength=self.n_actions)
        return int(np.argmax(votes))

    @staticmethod
    def majority_from_values(values: np.ndarray) -> np.ndarray:
        """Majority-vote actions for ``(K, B, A)`` head values -> ``(B,)``."""
        greedy = np.argmax(values, axis=-1)
        n_actions = values.shape[-1]
        votes = (greedy[..., None] == np.arange(n_actions)).sum(axis=0)
        return np.argmax(votes, axis=-1)

    # learning ---------------------------------------------------------------
    def updates_due(self, global_step: int) -> int:
        """Number of update steps owed after environment step ``global_step`` (1-based)."""
        u = self.config.updates_per_env_step
        return int((global_step * u) // 1 - ((global_step - 1) * u) // 1)

    def ready(self, buf: ReplayBuffer) -> bool:
        return len(buf) >= max(self.config.batch_size, self.config.learning_starts, 1)

    def double_q_values(self, obs: np.ndarray) -> np.ndarray:
        """``(K, B)`` values: online head picks the action, the head's snapshot values it."""
        live = self.q.forward(obs)
        frozen = self.targets.forward(obs)
        best = np.argmax(live, axis=-1)
        return np.take_along_axis(frozen, best[..., None], axis=-1)[..., 0]

    def update_step(self, buf: ReplayBuffer) -> np.ndarray | None:
        """One batch update of every head; ``None`` when the buffer is not yet full enough."""
        if not self.ready(buf):
            return None
        if self.config.mode == LAMBDA:
            return self._lambda_update(buf)
        cfg = self.config
        starts = buf.sample_starts(cfg.batch_size, self.sample_rng)
        by_horizon = {}
        for n in sorted(set(cfg.head_backups)):
            seg = buf.segments(starts, n)
            by_horizon[n] = (seg, self.double_q_values(seg.bootstrap_obs))
        targets = np.empty((self.n_heads, len(starts)))
        for k, n in enumerate(cfg.head_backups):
            seg, greedy = by_horizon[n]
            targets[k] = batch_n_step_returns(seg.rewards, seg.lengths, greedy[k], seg.terminated, cfg.gamma)
        losses = np.empty(self.n_heads)
        for k, n in enumerate(cfg.head_backups):
            seg = by_horizon[n][0]
            losses[k] = self.q.head_update(k, seg.obs, seg.actions, targets[k], cfg.learning_rate)
        self.updates += 1
        self.last_update = UpdateRecord(starts, cfg.head_backups, targets, losses, self.sync_epoch)
        return losses

    def lambda_evaluator(self, obs: np.ndarray) -> np.ndarray:
        return self.double_q_values(obs)[0]

    def refresh_cache(self, buf: ReplayBuffer) -> None:
        buf.refresh_lambda_cache(self.lambda_evaluator, self.config.gamma, self.config.lambda_spec, self.sync_epoch)

    def _lambda_update(self, buf: ReplayBuffer) -> np.ndarray:
        cfg = self.config
        if buf.cache_epoch != self.sync_epoch:
            self.refresh_cache(buf)
        starts = buf.sample_starts(cfg.batch_size, self.sample_rng, cached_only=True)
        targets = buf.lambda_targets(starts, self.sync_epoch)
        slots = starts % buf.capacity
        loss = self.q.head_update(0, buf.obs[slots], buf.action[slots], targets, cfg.learning_rate)
        losses = np.array([loss])
        self.updates += 1
        self.last_update = UpdateRecord(starts, (0,), targets[None, :], losses, self.sync_epoch)
        return losses

    def sync(self, buf: ReplayBuffer | None = None) -> None:
        self.sync_epoch += 1
        self.targets = self.q.sync_targets(self.sync_epoch)
        if self.config.mode == LAMBDA and buf is not None:
            self.refresh_cache(buf)

    def maybe_sync(self, global_step: int, buf: ReplayBuffer | None = None) -> bool:
        if global_step % self.config.target_sync_period == 0:
            self.sync(buf)
            return True
        return False


class BootstrappedDQNAgent(MBDQNAgent):
    """Plain bootstrapped DQN with one-step double-Q targets, written without segment machinery."""

    def update_step(self, buf: ReplayBuffer) -> np.ndarray | None:
        if not self.ready(buf):
            return None
        cfg = self.config
        starts = buf.sample_starts(cfg.batch_size, self.sample_rng)
        slots = starts % buf.capacity
        obs, actions = buf.obs[slots], buf.action[slots]
        rewards, done = buf.reward[slots], buf.terminal[slots]
        next_values = self.double_q_values(buf.next_obs[slots])
        targets = rewards[None, :] * 1.0 + cfg.gamma * np.where(done[None, :], 0.0, next_values)
        losses = np.array([self.q.head_update(k, obs, actions, targets[k], cfg.learning_rate) for k in range(self.n_heads)])
        self.updates += 1
        self.last_update = UpdateRecord(starts, cfg.head_backups, targets, losses, self.sync_epoch)
        return losses


def build_agent(config: AgentConfig, obs_dim: int, n_actions: int, seed: int = 0) -> MBDQNAgent:
    cls = BootstrappedDQNAgent if config.algorithm == "bootstrapped_dqn" else MBDQNAgent
    return cls(config, obs_dim, n_actions, seed)


def with_overrides(config: AgentConfig, **changes) -> AgentConfig:
    return replace(config, **changes)
