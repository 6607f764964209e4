"""Episode-aware replay memory with variable-horizon segment sampling and a lambda-return cache."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mbdqn.envelope import EnvelopeError, read_envelope, write_envelope
from mbdqn.returns import DiscountSpec, InvalidHorizonError, LambdaSpec, RewardSegment


class SequencingError(ValueError):
    """Appended transition does not continue the stored episode stream."""


class EmptyBufferError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """The lambda cache was computed under a different target-sync epoch."""


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool
    episode_id: int
    step_index: int


@dataclass(frozen=True)
class SegmentSample:
    start: Transition
    segment: RewardSegment
    bootstrap_obs: np.ndarray | None


@dataclass
class SegmentBatch:
    """Padded batch of segments of one requested horizon.

    ``rewards[i, j]`` is zero for ``j >= lengths[i]``. ``bootstrap_obs[i]``
    is the ``next_obs`` of the segment's last transition; it is meaningless
    where ``terminated[i]`` is set.
    """

    starts: np.ndarray
    horizon: int
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    lengths: np.ndarray
    terminated: np.ndarray
    bootstrap_obs: np.ndarray
    episode_ids: np.ndarray

    def __len__(self):
        return len(self.starts)


class ReplayBuffer:
    """Ring buffer of transitions in arrival order.

    Positions handed out by :meth:`sample_starts` are absolute insertion
    counters, so they stay meaningful until the transition is evicted.
    Segments never cross an episode boundary: they stop at the episode's
    terminal or at its newest stored transition, whichever comes first.
    """

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.obs = np.zeros((self.capacity, self.obs_dim))
        self.next_obs = np.zeros((self.capacity, self.obs_dim))
        self.action = np.zeros(self.capacity, dtype=np.int64)
        self.reward = np.zeros(self.capacity)
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.episode_id = np.zeros(self.capacity, dtype=np.int64)
        self.step_index = np.zeros(self.capacity, dtype=np.int64)
        self.lambda_cache = np.full(self.capacity, np.nan)
        self.cache_epoch: int | None = None
        self.total = 0
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def oldest(self) -> int:
        return self.total - self._size

    def _slot(self, absolute):
        return np.asarray(absolute) % self.capacity

    def append(self, t: Transition) -> None:
        if self._size:
            last = (self.total - 1) % self.capacity
            if t.episode_id == self.episode_id[last]:
                if self.terminal[last]:
                    raise SequencingError(f"episode {t.episode_id} already terminated")
                if t.step_index != self.step_index[last] + 1:
                    raise SequencingError(
                        f"episode {t.episode_id}: step {t.step_index} does not follow {self.step_index[last]}"
                    )
            elif t.episode_id < self.episode_id[last]:
                raise SequencingError(f"episode id {t.episode_id} precedes stored id {self.episode_id[last]}")
        slot = self.total % self.capacity
        self.obs[slot] = t.obs
        self.next_obs[slot] = t.next_obs
        self.action[slot] = t.action
        self.reward[slot] = t.reward
        self.terminal[slot] = t.terminal
        self.episode_id[slot] = t.episode_id
        self.step_index[slot] = t.step_index
        self.lambda_cache[slot] = np.nan
        self.total += 1
        self._size = min(self._size + 1, self.capacity)

    def transition(self, absolute: int) -> Transition:
        if not self.oldest <= absolute < self.total:
            raise IndexError(f"position {absolute} not stored")
        s = absolute % self.capacity
        return Transition(
            self.obs[s].copy(), int(self.action[s]), float(self.reward[s]), self.next_obs[s].copy(),
            bool(self.terminal[s]), int(self.episode_id[s]), int(self.step_index[s]),
        )

    def __iter__(self):
        return (self.transition(a) for a in range(self.oldest, self.total))

    # sampling -------------------------------------------------------------
    def sample_starts(self, batch_size: int, rng: np.random.Generator, cached_only: bool = False) -> np.ndarray:
        """Uniform draw (with replacement) of absolute start positions."""
        if self._size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if not cached_only:
            return rng.integers(self.oldest, self.total, size=batch_size)
        positions = np.arange(self.oldest, self.total)
        valid = positions[~np.isnan(self.lambda_cache[self._slot(positions)])]
        if len(valid) == 0:
            raise EmptyBufferError("no cached lambda-returns to sample")
        return valid[rng.integers(0, len(valid), size=batch_size)]

    def segments(self, starts, horizon: int) -> SegmentBatch:
        if horizon < 1:
            raise InvalidHorizonError(f"horizon must be >= 1, got {horizon}")
        starts = np.asarray(starts, dtype=np.int64)
        if self._size == 0:
            raise EmptyBufferError("cannot read segments from an empty buffer")
        if np.any(starts < self.oldest) or np.any(starts >= self.total):
            raise IndexError("segment start not stored")
        absolute = starts[:, None] + np.arange(horizon)[None, :]
        slots = absolute % self.capacity
        eps = self.episode_id[slots]
        # episodes are contiguous and end at their terminal, so equality with the start's id is a prefix mask
        same = (absolute < self.total) & (eps == eps[:, :1])
        lengths = same.sum(axis=1)
        rows = np.arange(len(starts))
        last = slots[rows, lengths - 1]
        first = slots[:, 0]
        return SegmentBatch(
            starts=starts,
            horizon=horizon,
            obs=self.obs[first],
            actions=self.action[first],
            rewards=np.where(same, self.reward[slots], 0.0),
            lengths=lengths,
            terminated=self.terminal[last],
            bootstrap_obs=self.next_obs[last],
            episode_ids=self.episode_id[first],
        )

    def sample_segments(self, batch_size: int, horizon: int, rng: np.random.Generator) -> list[SegmentSample]:
        """Uniformly drawn segments as standalone samples (bootstrap values left at 0)."""
        batch = self.segments(self.sample_starts(batch_size, rng), horizon)
        out = []
        for i, start in enumerate(batch.starts):
            seg = RewardSegment(batch.rewards[i, : batch.lengths[i]], 0.0, bool(batch.terminated[i]))
            boot = None if batch.terminated[i] else batch.bootstrap_obs[i].copy()
            out.append(SegmentSample(self.transition(int(start)), seg, boot))
        return out

    # lambda cache ----------------------------------------------------------
    def refresh_lambda_cache(
        self,
        evaluator: Callable[[np.ndarray], np.ndarray],
        gamma: DiscountSpec | float,
        spec: LambdaSpec,
        epoch: int = 0,
    ) -> None:
        """Recompute the truncated lambda-return of every stored transition.

        ``evaluator`` maps a ``(B, obs_dim)`` batch of observations to their
        greedy values. Each return runs over the transition's in-buffer
        episode suffix, capped at ``spec.max_horizon`` steps; an unfinished or
        partially stored episode bootstraps fully at its newest transition.
        """
        g = gamma.gamma if isinstance(gamma, DiscountSpec) else float(gamma)
        lam = spec.lam
        n = self._size
        if n == 0:
            self.cache_epoch = epoch
            return
        positions = np.arange(self.oldest, self.total)
        slots = self._slot(positions)
        rewards = self.reward[slots]
        term = self.terminal[slots]
        values = np.asarray(evaluator(self.next_obs[slots]), dtype=np.float64).reshape(-1)
        values = np.where(term, 0.0, values)
        eps = self.episode_id[slots]
        # index of the last stored transition of each position's episode
        run_end = np.flatnonzero(np.r_[eps[1:] != eps[:-1], True])
        last = run_end[np.searchsorted(run_end, np.arange(n))]
        length = np.minimum(last - np.arange(n) + 1, spec.max_horizon)
        ret = np.zeros(n)
        base = np.arange(n)
        for k in range(int(length.max()) - 1, -1, -1):
            idx = np.minimum(base + k, n - 1)
            r, v = rewards[idx], values[idx]
            tail = r + g * v
            mid = r + g * ((1.0 - lam) * v + lam * ret)
            ret = np.where(k == length - 1, tail, np.where(k < length - 1, mid, ret))
        self.lambda_cache[slots] = ret
        self.cache_epoch = epoch

    def lambda_targets(self, starts, epoch: int) -> np.ndarray:
        if self.cache_epoch != epoch:
            raise StaleCacheError(f"cache stamped {self.cache_epoch}, requested epoch {epoch}")
        out = self.lambda_cache[self._slot(np.asarray(starts))]
        if np.any(np.isnan(out)):
            raise StaleCacheError("requested a transition appended after the last refresh")
        return out

    # persistence -----------------------------------------------------------
    def dump(self, path) -> None:
        slots = self._slot(np.arange(self.oldest, self.total))
        write_envelope(
            path,
            "replay",
            {
                "meta": np.array([self.capacity, self.obs_dim, self.total], dtype=np.float64),
                "obs": self.obs[slots],
                "next_obs": self.next_obs[slots],
                "action": self.action[slots],
                "reward": self.reward[slots],
                "terminal": self.terminal[slots],
                "episode_id": self.episode_id[slots],
                "step_index": self.step_index[slots],
            },
        )

    @classmethod
    def restore(cls, path) -> "ReplayBuffer":
        kind, arrays = read_envelope(path)
        if kind != "replay":
            raise EnvelopeError(f"{path} holds {kind!r}, not a replay dump")
        capacity, obs_dim, total = (int(x) for x in arrays["meta"])
        buf = cls(capacity, obs_dim)
        size = len(arrays["reward"])
        if arrays["obs"].shape != (size, obs_dim):
            raise EnvelopeError("replay dump has inconsistent observation shape")
        buf.total = total
        buf._size = size
        slots = buf._slot(np.arange(total - size, total))
        buf.obs[slots] = arrays["obs"]
        buf.next_obs[slots] = arrays["next_obs"]
        buf.action[slots] = arrays["action"].astype(np.int64)
        buf.reward[slots] = arrays["reward"]
        buf.terminal[slots] = arrays["terminal"].astype(bool)
        buf.episode_id[slots] = arrays["episode_id"].astype(np.int64)
        buf.step_index[slots] = arrays["step_index"].astype(np.int64)
        return buf
