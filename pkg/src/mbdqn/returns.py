"""Return-estimation kernels: truncated n-step returns, per-head targets and lambda-returns.

Indexing convention: an ``n``-step return sums ``n`` real rewards and
bootstraps with ``gamma**n`` at the state reached after the ``n``-th reward,
so ``n = 1`` is the ordinary one-step TD target ``r + gamma * q``. Segments
that hit a terminal before ``n`` rewards are truncated there with a zero
bootstrap.

The scalar functions take plain Python sequences; the ``batch_*`` variants
operate on padded numpy arrays and are what the agent uses in its hot loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InvalidHorizonError(ValueError):
    """Raised when a backup length / horizon is smaller than one."""


class InvalidSegmentError(ValueError):
    """Raised for empty or misaligned reward segments."""


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class LambdaSpec:
    lam: float
    max_horizon: int = 100

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.max_horizon < 1:
            raise InvalidHorizonError(f"max_horizon must be >= 1, got {self.max_horizon}")


@dataclass(frozen=True)
class RewardSegment:
    """Consecutive rewards of one episode plus the value used to bootstrap after them."""

    rewards: tuple[float, ...]
    bootstrap_value: float = 0.0
    terminated: bool = False
    effective_length: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if not self.rewards:
            raise InvalidSegmentError("a reward segment needs at least one reward")
        object.__setattr__(self, "effective_length", len(self.rewards))
        if self.terminated:
            # terminal states carry no continuation value
            object.__setattr__(self, "bootstrap_value", 0.0)


def _gamma(gamma: DiscountSpec | float) -> float:
    if isinstance(gamma, DiscountSpec):
        return gamma.gamma
    return DiscountSpec(float(gamma)).gamma


def n_step_return(segment: RewardSegment, gamma: DiscountSpec | float, n: int) -> float:
    """Discounted sum of the segment's rewards plus the discounted bootstrap value.

    ``n`` is the requested backup length; the segment may be shorter when the
    episode ended first, in which case its own length is used for the
    bootstrap exponent.
    """
    if n < 1:
        raise InvalidHorizonError(f"backup length must be >= 1, got {n}")
    if segment.effective_length > n:
        raise InvalidSegmentError(
            f"segment holds {segment.effective_length} rewards but horizon is {n}"
        )
    g = _gamma(gamma)
    total = 0.0
    discount = 1.0
    for r in segment.rewards:
        total += discount * r
        discount *= g
    return total + discount * segment.bootstrap_value


def per_head_target(
    segment: RewardSegment, gamma: DiscountSpec | float, n_k: int, greedy_next_value: float
) -> float:
    """TD target for a head with backup length ``n_k``.

    ``greedy_next_value`` is the double-Q value at the bootstrap state (action
    picked by the online head, valued by that head's target snapshot). It is
    ignored when the segment terminated.
    """
    bootstrap = 0.0 if segment.terminated else float(greedy_next_value)
    seg = RewardSegment(segment.rewards, bootstrap, segment.terminated)
    return n_step_return(seg, gamma, n_k)


def lambda_return(
    rewards: Sequence[float],
    bootstrap_values: Sequence[float],
    gamma: DiscountSpec | float,
    spec: LambdaSpec,
) -> float:
    """Truncated lambda-return by backward recursion.

    ``bootstrap_values[j]`` is the value estimate of the state that follows
    ``rewards[j]`` (zero at a terminal). Only the first ``spec.max_horizon``
    entries are used; the last one used bootstraps fully, which folds the
    tail weight ``lam**(H-1)`` onto the longest n-step return.
    """
    if len(rewards) != len(bootstrap_values):
        raise InvalidSegmentError(
            f"{len(rewards)} rewards but {len(bootstrap_values)} bootstrap values"
        )
    if len(rewards) == 0:
        raise InvalidSegmentError("lambda_return needs at least one reward")
    g = _gamma(gamma)
    lam = spec.lam
    horizon = min(len(rewards), spec.max_horizon)
    ret = float(rewards[horizon - 1]) + g * float(bootstrap_values[horizon - 1])
    for j in range(horizon - 2, -1, -1):
        ret = float(rewards[j]) + g * ((1.0 - lam) * float(bootstrap_values[j]) + lam * ret)
    return ret


def batch_n_step_returns(
    rewards: np.ndarray,
    lengths: np.ndarray,
    bootstrap_values: np.ndarray,
    terminated: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Vectorised :func:`n_step_return` over a padded ``(B, n)`` reward matrix.

    Entries of ``rewards`` beyond each row's ``lengths`` must be zero.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    lengths = np.asarray(lengths)
    if rewards.ndim != 2:
        raise InvalidSegmentError(f"expected a (B, n) reward matrix, got shape {rewards.shape}")
    if np.any(lengths < 1) or np.any(lengths > rewards.shape[1]):
        raise InvalidSegmentError("segment lengths must lie in 1..n")
    discounts = gamma ** np.arange(rewards.shape[1], dtype=np.float64)
    partial = rewards @ discounts
    boot = np.where(terminated, 0.0, bootstrap_values)
    return partial + gamma ** lengths.astype(np.float64) * boot
