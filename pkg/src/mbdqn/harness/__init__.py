"""Experiment protocols: training runs, paired agents, comparisons, heatmaps and the CLI."""

from mbdqn.harness.config import ConfigError, EnvSpec, RunConfig, build_run_config, load_run_config
from mbdqn.harness.heatmap import VisitationMap, export_heatmap
from mbdqn.harness.runner import (
    ComparisonTable,
    EvalRow,
    RunMetrics,
    evaluate,
    run_comparison,
    run_paired,
    run_training,
    stable_goal_step,
    summarize,
)

__all__ = [
    "ComparisonTable", "ConfigError", "EnvSpec", "EvalRow", "RunConfig", "RunMetrics", "VisitationMap",
    "build_run_config", "evaluate", "export_heatmap", "load_run_config", "run_comparison", "run_paired",
    "run_training", "stable_goal_step", "summarize",
]
