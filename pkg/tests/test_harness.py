import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from mbdqn.agent import all_n_step, build_agent, lambda_baseline, mixed, with_overrides
from mbdqn.harness import runner
from mbdqn.harness.config import ConfigError, EnvSpec, RunConfig
from mbdqn.harness.heatmap import read_counts_csv, read_pgm
from mbdqn.harness.runner import (
    evaluate,
    metrics_header,
    run_comparison,
    run_paired,
    run_training,
    stable_goal_step,
    summarize,
    EvalRow,
)

SMALL_ENV = EnvSpec(size=4, max_episode_steps=30)


def small_run(agent=None, **kw):
    agent = agent or all_n_step(1, 3, hidden_sizes=(8,), batch_size=8, target_sync_period=50,
                                epsilon=replace(all_n_step(1).epsilon, decay_steps=200))
    base = dict(name="small", env=SMALL_ENV, agent=agent, total_env_steps=400, eval_period=100,
                eval_episode_count=3, seeds=(0, 1))
    base.update(kw)
    return RunConfig(**base)


def read_rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_metrics_schema(tmp_path):
    cfg = small_run(out_dir=str(tmp_path))
    metrics = run_training(cfg)
    rows = read_rows((tmp_path / "metrics_seed0.csv").read_text())
    assert rows[0] == ["seed", "step", "majority_return", "return_stderr", "head0_return", "head1_return",
                       "head2_return", "unique_states", "mean_episode_len"]
    assert [int(r[1]) for r in rows[1:]] == [0, 100, 200, 300, 400]
    assert rows[0] == metrics_header(3)
    merged = read_rows((tmp_path / "metrics.csv").read_text())
    assert len(merged) == 1 + 2 * 5
    assert len(metrics.rows) == 10


def test_zero_budget_run(tmp_path):
    cfg = small_run(total_env_steps=0, seeds=(0,), out_dir=str(tmp_path))
    metrics = run_training(cfg)
    assert len(metrics.rows) == 1 and metrics.rows[0].step == 0
    assert metrics.rows[0].unique_states == 0
    assert np.all(read_counts_csv(tmp_path / "heatmap_seed0.csv") == 0)
    assert np.all(read_pgm(tmp_path / "heatmap_seed0.pgm") == 0)


def test_heatmap_conserves_steps():
    metrics = run_training(small_run(total_env_steps=357, eval_period=100))
    for vmap in metrics.visitation.values():
        assert vmap.total == 357


def test_same_seed_byte_identical(tmp_path):
    outputs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        run_training(small_run(out_dir=str(out), record_trajectory=True))
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0].keys() == outputs[1].keys()
    assert {"metrics.csv", "heatmap_seed0.pgm", "trajectory_seed1.csv"} <= outputs[0].keys()
    assert outputs[0] == outputs[1]


def test_unwritable_output_fails_before_compute(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")

    def boom(*args, **kwargs):
        raise AssertionError("training started")

    monkeypatch.setattr(runner, "train_seed", boom)
    with pytest.raises(OSError):
        run_training(small_run(out_dir=str(blocker / "sub")))


def test_evaluation_is_pure():
    cfg = small_run()
    env = cfg.env.build()
    agent = build_agent(cfg.agent, env.obs_dim, env.n_actions, seed=0)
    params = [p.copy() for p in agent.q.params()]
    act_state = agent.act_rng.bit_generator.state
    sample_state = agent.sample_rng.bit_generator.state
    env_steps = agent.env_steps
    evaluate(agent, env, 5)
    for before, after in zip(params, agent.q.params()):
        np.testing.assert_array_equal(before, after)
    assert agent.act_rng.bit_generator.state == act_state
    assert agent.sample_rng.bit_generator.state == sample_state
    assert agent.env_steps == env_steps


def test_evaluation_follows_greedy_model():
    # a tabular agent whose table says "go right, then down" reaches the goal of a 2x2 maze in 2 steps
    cfg = small_run(env=EnvSpec(size=2), agent=all_n_step(1, 2, backend="tabular"))
    env = cfg.env.build()
    agent = build_agent(cfg.agent, env.obs_dim, env.n_actions, seed=0)
    agent.q.table[:, env.state_index((0, 0)), 3] = 1.0  # RIGHT
    agent.q.table[:, env.state_index((1, 0)), 1] = 1.0  # DOWN
    res = evaluate(agent, env, 2)
    assert res["majority_len"].tolist() == [2, 2]
    assert res["majority_goal"].all()
    expected = env.rewards[env.state_index((0, 0)), 3] + env.rewards[env.state_index((1, 0)), 1]
    np.testing.assert_allclose(res["heads"], expected)


def test_all_one_step_degenerates_to_reference(tmp_path):
    cfg = small_run(record_trajectory=True)
    ref = replace(cfg, agent=with_overrides(cfg.agent, algorithm="bootstrapped_dqn"))
    run_training(replace(cfg, out_dir=str(tmp_path / "ours")))
    run_training(replace(ref, out_dir=str(tmp_path / "ref")))
    for name in ("metrics.csv", "trajectory_seed0.csv", "trajectory_seed1.csv", "heatmap_seed0.csv"):
        assert (tmp_path / "ours" / name).read_bytes() == (tmp_path / "ref" / name).read_bytes()


def test_paired_frozen_learner_stays_flat(tmp_path):
    cfg = small_run(out_dir=str(tmp_path))
    learner = with_overrides(cfg.agent, learning_rate=0.0)
    gen, learn = run_paired(cfg, learner)
    for seed in cfg.seeds:
        returns = {r.majority_return for r in learn.seed_rows(seed)}
        assert len(returns) == 1
        assert all(r.unique_states == 0 for r in learn.seed_rows(seed))
    assert (tmp_path / "generator" / "metrics.csv").exists()
    assert (tmp_path / "learner" / "metrics.csv").exists()


def test_paired_identical_configs_see_identical_batches():
    cfg = small_run(seeds=(3,))
    seen = []

    def hook(gen_update, learn_update):
        if gen_update is None:
            return
        np.testing.assert_array_equal(gen_update.starts, learn_update.starts)
        np.testing.assert_array_equal(gen_update.targets, learn_update.targets)
        seen.append(1)

    gen, learn = run_paired(cfg, cfg.agent, hook=hook)
    assert len(seen) > 50
    assert [r.majority_return for r in gen.rows] == [r.majority_return for r in learn.rows]


def test_compare_with_itself():
    a = small_run(name="a", seeds=(0,))
    table = run_comparison([a, replace(a, name="b")])
    ra, rb = sorted(table.summary, key=lambda s: s.config)
    assert (ra.final_return, ra.auc, ra.steps_to_threshold) == (rb.final_return, rb.auc, rb.steps_to_threshold)


def test_compare_rejects_mismatched_env():
    a = small_run(name="a")
    with pytest.raises(ConfigError):
        run_comparison([a, replace(a, name="b", env=replace(SMALL_ENV, size=5))])
    with pytest.raises(ConfigError):
        run_comparison([a, replace(a, name="b", total_env_steps=800)])
    with pytest.raises(ConfigError):
        run_comparison([a, a])


def test_k_ablation_table(tmp_path):
    configs = []
    common = dict(hidden_sizes=(8,), batch_size=8, target_sync_period=50)
    for K in (2, 4, 10):
        configs.append(small_run(name=f"all1_K{K}", agent=all_n_step(1, K, **common), seeds=(0,)))
        configs.append(small_run(name=f"mixed13_K{K}", agent=mixed([1, 3], K, **common), seeds=(0,)))
    table = run_comparison(configs, out_dir=str(tmp_path))
    assert sorted(s.config for s in table.summary) == sorted(c.name for c in configs)
    aucs = [s.auc for s in table.summary]
    assert aucs == sorted(aucs, reverse=True)
    merged = read_rows((tmp_path / "comparison.csv").read_text())
    assert merged[0][:2] == ["config", "seed"] and "head9_return" in merged[0]
    assert all(len(r) == len(merged[0]) for r in merged)


def test_summary_recomputes_from_csv(tmp_path):
    a = small_run(name="mix", agent=mixed([1, 3], 4, hidden_sizes=(8,), batch_size=8), return_threshold=-20.0)
    b = small_run(name="lam", agent=lambda_baseline(0.9, hidden_sizes=(8,), batch_size=8), return_threshold=-20.0)
    run_comparison([a, b], out_dir=str(tmp_path))
    merged = read_rows((tmp_path / "comparison.csv").read_text())
    header, body = merged[0], merged[1:]
    summary = {r[0]: r for r in read_rows((tmp_path / "summary.csv").read_text())[1:]}
    for name in ("mix", "lam"):
        rows = [EvalRow(seed=int(r[1]), step=int(r[2]), majority_return=float(r[3]), return_stderr=float(r[4]),
                        head_returns=(), unique_states=int(r[header.index("unique_states")]),
                        mean_episode_len=float(r[-1]))
                for r in body if r[0] == name]
        again = summarize(name, rows, -20.0)
        got = summary[name]
        assert float(got[1]) == again.final_return
        assert float(got[2]) == again.auc
        assert got[3] == ("" if again.steps_to_threshold is None else str(again.steps_to_threshold))


def test_stable_goal_step():
    def row(step, rate):
        return EvalRow(0, step, 0.0, 0.0, (), 0, 0.0, rate)

    assert stable_goal_step([row(0, 0), row(10, 1), row(20, 0), row(30, 1), row(40, 1)]) == 30
    assert stable_goal_step([row(0, 1), row(10, 0)]) == float("inf")
    assert stable_goal_step([row(0, 0.96)]) == 0
