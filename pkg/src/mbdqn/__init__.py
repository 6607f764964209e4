"""Mixture Bootstrapped DQN: bootstrapped Q-ensembles whose heads use different backup lengths."""

from mbdqn.agent import (
    AgentConfig,
    BootstrappedDQNAgent,
    EpsilonSchedule,
    MBDQNAgent,
    all_n_step,
    build_agent,
    lambda_baseline,
    mixed,
    mixed_backups,
)
from mbdqn.approximator import HeadSpec, MLPQ, TabularQ, TargetSnapshot
from mbdqn.envs import ChainMDP, GridMaze, dense_maze, optimal_values, sparse_maze
from mbdqn.replay import ReplayBuffer, Transition
from mbdqn.returns import DiscountSpec, LambdaSpec, RewardSegment, lambda_return, n_step_return, per_head_target

__version__ = "0.1.0"
