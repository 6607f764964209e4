import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbdqn.replay import (
    EmptyBufferError,
    ReplayBuffer,
    SequencingError,
    StaleCacheError,
    Transition,
)
from mbdqn.returns import LambdaSpec

from oracles import discounted_sum, weighted_lambda_return


def fill(buf, episode_lengths, rng=None, terminal_last=True, obs_dim=2):
    rng = rng or np.random.default_rng(0)
    for ep, length in enumerate(episode_lengths):
        for i in range(length):
            buf.append(
                Transition(
                    obs=np.array([ep, i], dtype=float)[:obs_dim],
                    action=int(rng.integers(0, 4)),
                    reward=float(rng.normal()),
                    next_obs=np.array([ep, i + 1], dtype=float)[:obs_dim],
                    terminal=terminal_last and i == length - 1,
                    episode_id=ep,
                    step_index=i,
                )
            )


def test_ring_eviction():
    buf = ReplayBuffer(5, 2)
    fill(buf, [6])
    assert len(buf) == 5
    stored = [t.step_index for t in buf]
    assert stored == [1, 2, 3, 4, 5]
    with pytest.raises(IndexError):
        buf.transition(0)


def test_single_transition_segments():
    for terminal in (True, False):
        buf = ReplayBuffer(10, 2)
        fill(buf, [1], terminal_last=terminal)
        for n in (1, 3, 7):
            batch = buf.segments([0], n)
            assert batch.lengths[0] == 1
            assert bool(batch.terminated[0]) is terminal


def test_boundary_truncation():
    buf = ReplayBuffer(20, 2)
    fill(buf, [5, 4])
    batch = buf.segments([4], 3)
    assert batch.lengths[0] == 1 and batch.terminated[0]
    batch = buf.segments([1], 3)
    assert batch.lengths[0] == 3 and not batch.terminated[0]
    np.testing.assert_array_equal(batch.bootstrap_obs[0], [0, 4])
    batch = buf.segments([3, 5], 4)
    assert batch.lengths.tolist() == [2, 4]


def test_one_step_segments_are_transitions():
    buf = ReplayBuffer(50, 2)
    fill(buf, [7, 3, 9])
    rng = np.random.default_rng(1)
    for s in buf.sample_segments(40, 1, rng):
        assert s.segment.effective_length == 1
        assert s.segment.rewards[0] == s.start.reward
        assert s.segment.terminated == s.start.terminal
        if not s.start.terminal:
            np.testing.assert_array_equal(s.bootstrap_obs, s.start.next_obs)


def test_ongoing_episode_bootstraps_at_newest():
    buf = ReplayBuffer(20, 2)
    fill(buf, [3], terminal_last=False)
    batch = buf.segments([1], 5)
    assert batch.lengths[0] == 2 and not batch.terminated[0]
    np.testing.assert_array_equal(batch.bootstrap_obs[0], [0, 3])


def test_sequencing_errors():
    buf = ReplayBuffer(10, 2)
    fill(buf, [2])
    with pytest.raises(SequencingError):
        buf.append(Transition(np.zeros(2), 0, 0.0, np.zeros(2), False, 0, 2))
    buf = ReplayBuffer(10, 2)
    fill(buf, [2], terminal_last=False)
    with pytest.raises(SequencingError):
        buf.append(Transition(np.zeros(2), 0, 0.0, np.zeros(2), False, 0, 3))
    buf.append(Transition(np.zeros(2), 0, 0.0, np.zeros(2), False, 3, 0))
    with pytest.raises(SequencingError):
        buf.append(Transition(np.zeros(2), 0, 0.0, np.zeros(2), False, 0, 2))


def test_empty_buffer():
    buf = ReplayBuffer(10, 2)
    with pytest.raises(EmptyBufferError):
        buf.sample_starts(4, np.random.default_rng(0))


def test_start_uniformity():
    buf = ReplayBuffer(10, 2)
    fill(buf, [4, 6])
    draws = buf.sample_starts(10_000, np.random.default_rng(7))
    counts = np.bincount(draws - buf.oldest, minlength=10)
    mean, sd = 1000, np.sqrt(10_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - mean) < 4 * sd)


def brute_segment(transitions, start, n):
    """Reference: walk forward from start until n rewards, terminal, episode change or end."""
    seg = [transitions[start]]
    i = start
    while len(seg) < n and not transitions[i].terminal and i + 1 < len(transitions):
        if transitions[i + 1].episode_id != transitions[start].episode_id:
            break
        i += 1
        seg.append(transitions[i])
    return seg


@settings(max_examples=60, deadline=None)
@given(
    lengths=st.lists(st.integers(1, 6), min_size=1, max_size=6),
    capacity=st.integers(1, 20),
    last_open=st.booleans(),
)
def test_segments_exhaustive_against_brute_force(lengths, capacity, last_open):
    buf = ReplayBuffer(capacity, 2)
    rng = np.random.default_rng(0)
    for ep, length in enumerate(lengths):
        for i in range(length):
            terminal = i == length - 1 and not (last_open and ep == len(lengths) - 1)
            buf.append(Transition(np.array([ep, i], float), 0, float(rng.normal()), np.array([ep, i + 1], float), terminal, ep, i))
    stored = list(buf)
    for n in range(1, 8):
        batch = buf.segments(np.arange(buf.oldest, buf.total), n)
        for p in range(len(stored)):
            ref = brute_segment(stored, p, n)
            assert batch.lengths[p] == len(ref)
            assert batch.episode_ids[p] == ref[0].episode_id
            np.testing.assert_array_equal(batch.rewards[p, : len(ref)], [t.reward for t in ref])
            assert bool(batch.terminated[p]) == ref[-1].terminal
            np.testing.assert_array_equal(batch.bootstrap_obs[p], ref[-1].next_obs)


def value_fn(obs):
    return np.sin(obs[:, 0] * 1.3 + obs[:, 1] * 0.7)


def test_lambda_zero_cache_is_one_step():
    buf = ReplayBuffer(100, 2)
    fill(buf, [5, 8, 3])
    buf.refresh_lambda_cache(value_fn, 0.9, LambdaSpec(0.0), epoch=1)
    for a, t in zip(range(buf.oldest, buf.total), buf):
        want = t.reward + (0.0 if t.terminal else 0.9 * value_fn(t.next_obs[None])[0])
        assert buf.lambda_targets([a], 1)[0] == pytest.approx(want, abs=1e-14)


def test_lambda_one_zero_evaluator_is_monte_carlo():
    buf = ReplayBuffer(100, 2)
    fill(buf, [5, 8])
    buf.refresh_lambda_cache(lambda o: np.zeros(len(o)), 0.95, LambdaSpec(1.0), epoch=0)
    stored = list(buf)
    for p, t in enumerate(stored):
        suffix = [s.reward for s in stored[p:] if s.episode_id == t.episode_id]
        assert buf.lambda_targets([p], 0)[0] == pytest.approx(discounted_sum(suffix, 0.95), rel=1e-12)


@pytest.mark.parametrize("horizon", [100, 6])
def test_lambda_cache_matches_weighted_oracle(horizon):
    buf = ReplayBuffer(100, 2)
    fill(buf, [20, 7], rng=np.random.default_rng(3))
    lam, gamma = 0.7, 0.97
    buf.refresh_lambda_cache(value_fn, gamma, LambdaSpec(lam, horizon), epoch=4)
    stored = list(buf)
    for p, t in enumerate(stored):
        suffix = [s for s in stored[p:] if s.episode_id == t.episode_id]
        rewards = [s.reward for s in suffix]
        values = [0.0 if s.terminal else value_fn(s.next_obs[None])[0] for s in suffix]
        want = weighted_lambda_return(rewards, values, gamma, lam, horizon)
        assert buf.lambda_targets([p], 4)[0] == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_stale_cache_never_served():
    buf = ReplayBuffer(10, 2)
    fill(buf, [4], terminal_last=False)
    with pytest.raises(StaleCacheError):
        buf.lambda_targets([0], 0)
    buf.refresh_lambda_cache(value_fn, 0.9, LambdaSpec(0.5), epoch=2)
    with pytest.raises(StaleCacheError):
        buf.lambda_targets([0], 3)
    buf.append(Transition(np.zeros(2), 0, 1.0, np.zeros(2), True, 0, 4))
    with pytest.raises(StaleCacheError):
        buf.lambda_targets([4], 2)
    starts = buf.sample_starts(200, np.random.default_rng(0), cached_only=True)
    assert set(starts.tolist()) <= {0, 1, 2, 3}


def test_cache_entries_follow_eviction():
    buf = ReplayBuffer(4, 2)
    fill(buf, [4])
    buf.refresh_lambda_cache(value_fn, 0.9, LambdaSpec(0.5), epoch=0)
    buf.append(Transition(np.zeros(2), 0, 1.0, np.zeros(2), True, 9, 0))
    assert len(buf) == 4
    newest = buf.total - 1
    assert np.isnan(buf.lambda_cache[newest % buf.capacity])
    cached = [a for a in range(buf.oldest, buf.total) if not np.isnan(buf.lambda_cache[a % 4])]
    assert cached == [1, 2, 3]


def test_dump_restore_round_trip(tmp_path):
    buf = ReplayBuffer(6, 2)
    fill(buf, [3, 5])
    path = tmp_path / "buf.bin"
    buf.dump(path)
    back = ReplayBuffer.restore(path)
    assert (back.total, len(back), back.capacity) == (buf.total, len(buf), buf.capacity)
    for a, b in zip(buf, back):
        assert a.episode_id == b.episode_id and a.step_index == b.step_index
        assert a.reward == b.reward and a.terminal == b.terminal
        np.testing.assert_array_equal(a.obs, b.obs)
    starts = np.arange(buf.oldest, buf.total)
    np.testing.assert_array_equal(buf.segments(starts, 3).rewards, back.segments(starts, 3).rewards)
