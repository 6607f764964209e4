"""Compare a Mixed-1-3 ensemble, a homogeneous one-step ensemble and the
single-target DQN(lambda) baseline on the Dense Maze.

The summary table is sorted by the area under the evaluation curve.
"""

from mbdqn.agent import all_n_step, lambda_baseline, mixed
from mbdqn.harness import RunConfig, run_comparison

STEPS = 20_000
common = dict(total_env_steps=STEPS, eval_period=STEPS // 10, seeds=(0, 1), return_threshold=-9.0)
configs = [
    RunConfig(name="mixed13", agent=mixed([1, 3]), **common),
    RunConfig(name="all1", agent=all_n_step(1), **common),
    RunConfig(name="lambda0.9", agent=lambda_baseline(0.9, 100), **common),
]
table = run_comparison(configs, out_dir="demo_out/compare")
print(table.summary_csv())
