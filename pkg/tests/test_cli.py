import numpy as np
import pytest

from mbdqn.harness.cli import main
from mbdqn.harness.heatmap import read_pgm

SMALL = """\
name = tiny
env.size = 4
env.max_episode_steps = 30
agent.n_heads = 2
agent.hidden_sizes = [8]
agent.batch_size = 8
agent.epsilon_decay_steps = 100
run.total_env_steps = 200
run.eval_period = 100
run.eval_episode_count = 2
run.seeds = [0, 1]
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(SMALL)
    return path


def test_train_writes_outputs(tmp_path, config, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(config), "--seed", "5", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["heatmap_seed5.csv", "heatmap_seed5.pgm", "metrics.csv",
                                                    "metrics_seed5.csv"]
    assert "tiny seed=5" in capsys.readouterr().out


def test_set_overrides_file(tmp_path, config):
    out = tmp_path / "out"
    assert main(["train", "--config", str(config), "--set", "run.total_env_steps=100",
                 "--set", "name=renamed", "--out", str(out)]) == 0
    lines = (out / "metrics_seed0.csv").read_text().splitlines()
    assert len(lines) == 3  # header + steps 0 and 100


def test_bad_key_is_reported(config, capsys):
    assert main(["train", "--config", str(config), "--set", "agent.bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_paired_and_compare(tmp_path, config, capsys):
    assert main(["paired", "--config", str(config), "--seed", "0", "--out", str(tmp_path / "p"),
                 "--learner-set", "agent.learning_rate=0.0"]) == 0
    assert (tmp_path / "p" / "learner" / "metrics.csv").exists()
    other = tmp_path / "other.cfg"
    other.write_text(SMALL.replace("name = tiny", "name = mixed\nagent.backup_mix = [1, 3]"))
    capsys.readouterr()
    assert main(["compare", "--config", str(config), "--config", str(other), "--out", str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "config,final_return,auc,steps_to_threshold"
    assert {line.split(",")[0] for line in out[1:]} == {"tiny", "mixed"}


def test_heatmap_renders_counts(tmp_path):
    counts = tmp_path / "c.csv"
    counts.write_text("0,1\n2,4\n")
    assert main(["heatmap", str(counts), "--out", str(tmp_path / "img")]) == 0
    pixels = read_pgm(tmp_path / "img.pgm")
    np.testing.assert_array_equal(pixels, [[0, 16384], [32768, 65535]])


def test_check_subcommand(capsys):
    assert main(["check", "--only", "returns", "--only", "sampling"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
