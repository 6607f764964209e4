"""Train a one-step and a five-step ensemble on the 10x10 Dense Maze and
compare where they went.

Writes heatmaps (CSV + 16-bit PGM) under ``demo_out/visitation``. Takes a
couple of minutes on one core; lower ``STEPS`` for a quicker look.
"""

from pathlib import Path

from mbdqn.agent import all_n_step
from mbdqn.harness import RunConfig, run_training, stable_goal_step

STEPS = 50_000
OUT = Path("demo_out/visitation")

for n in (1, 5):
    cfg = RunConfig(name=f"all{n}", agent=all_n_step(n), total_env_steps=STEPS, eval_period=STEPS // 20,
                    seeds=(0,), out_dir=str(OUT / f"all{n}"))
    metrics = run_training(cfg)
    rows = metrics.seed_rows(0)
    early = rows[len(rows) // 5]
    print(f"All-{n}-Step: unique states by step {early.step}: {early.unique_states}; "
          f"stable goal-reaching from step {stable_goal_step(rows)}; final return {rows[-1].majority_return:.2f}")
    print(metrics.visitation[0].counts)

print("heatmaps in", OUT.resolve())
