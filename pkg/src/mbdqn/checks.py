"""Self-checks behind ``mbdqn check``: return kernels, gradients and sampling.

Each check compares the library against a direct, loop-based recomputation
and reports a :class:`CheckResult`. They are cheap enough to run on any
install as a smoke test of the numerics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mbdqn.agent import MBDQNAgent, all_n_step
from mbdqn.approximator import MLPQ, head_specs
from mbdqn.replay import ReplayBuffer, Transition
from mbdqn.returns import LambdaSpec, RewardSegment, lambda_return, n_step_return


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _direct_lambda(rewards, values, gamma, lam, horizon):
    """(1 - lam)-weighted mixture of every n-step return, tail weight on the longest."""
    H = min(len(rewards), horizon)
    nstep = [math.fsum([gamma**j * rewards[j] for j in range(n)] + [gamma**n * values[n - 1]]) for n in range(1, H + 1)]
    terms = [(1 - lam) * lam ** (n - 1) * nstep[n - 1] for n in range(1, H)]
    return math.fsum(terms + [lam ** (H - 1) * nstep[H - 1]])


def check_returns(episodes: int = 1000, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(episodes):
        length = int(rng.integers(1, 40))
        rewards = rng.normal(size=length)
        values = rng.normal(size=length)
        terminated = bool(rng.random() < 0.5)
        if terminated:
            values[-1] = 0.0
        gamma = float(rng.uniform(0.5, 1.0))
        n = int(rng.integers(1, length + 1))
        boot = 0.0 if terminated and n == length else float(values[n - 1])
        got = n_step_return(RewardSegment(rewards[:n], boot, terminated and n == length), gamma, n)
        want = math.fsum([gamma**j * rewards[j] for j in range(n)] + [gamma**n * boot])
        worst = max(worst, _relative(got, want))
        lam = float(rng.uniform(0, 1))
        horizon = int(rng.integers(1, 50))
        got = lambda_return(rewards, values, gamma, LambdaSpec(lam, horizon))
        worst = max(worst, _relative(got, _direct_lambda(rewards, values, gamma, lam, horizon)))
    return CheckResult("return kernels", worst < tol, f"max relative error {worst:.2e} over {episodes} episodes")


def check_gradients(pairs: int = 100, seed: int = 0, tol: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        obs_dim, n_actions = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 3))))
        specs = head_specs(*rng.integers(1, 4, size=int(rng.integers(1, 4))))
        q = MLPQ(obs_dim, n_actions, specs, hidden_sizes=hidden, rng=rng)
        head = int(rng.integers(len(specs)))
        worst = max(worst, q.gradient_check(rng.normal(size=obs_dim), int(rng.integers(n_actions)),
                                            float(rng.normal()), head=head))
    return CheckResult("gradients", worst < tol, f"max relative deviation {worst:.2e} over {pairs} networks")


def _within(counts: np.ndarray, p: float, sigmas: float = 4.0) -> bool:
    n = counts.sum()
    return bool(np.all(np.abs(counts - n * p) < sigmas * math.sqrt(n * p * (1 - p))))


def check_sampling(draws: int = 20_000, seed: int = 0) -> CheckResult:
    agent = MBDQNAgent(all_n_step(1, 10), obs_dim=3, n_actions=4, seed=seed)
    heads = np.bincount([agent.begin_episode().active_head for _ in range(draws)], minlength=10)
    ctx = agent.begin_episode()
    obs = np.zeros(3)
    actions = np.bincount([agent.act(ctx, obs, epsilon=1.0) for _ in range(draws)], minlength=4)
    buf = ReplayBuffer(50, 1)
    for i in range(80):
        buf.append(Transition(np.zeros(1), 0, 0.0, np.zeros(1), i % 7 == 6, i // 7, i % 7))
    starts = np.bincount(buf.sample_starts(draws, np.random.default_rng(seed)) - buf.oldest, minlength=len(buf))
    ok = {"heads": _within(heads, 0.1), "actions": _within(actions, 0.25), "starts": _within(starts, 1 / len(buf))}
    crossing = 0
    stored = list(buf)
    for n in range(1, 9):
        batch = buf.segments(np.arange(buf.oldest, buf.total), n)
        for row, start in enumerate(range(buf.oldest, buf.total)):
            ids = {stored[start - buf.oldest + j].episode_id for j in range(int(batch.lengths[row]))}
            crossing += len(ids) != 1
    ok["segments"] = crossing == 0
    detail = ", ".join(f"{k} {'ok' if v else 'off'}" for k, v in ok.items())
    return CheckResult("sampling", all(ok.values()), detail)


CHECKS = {"returns": check_returns, "gradients": check_gradients, "sampling": check_sampling}


def run_checks(names=None, seed: int = 0) -> list[CheckResult]:
    names = list(CHECKS) if not names else list(names)
    unknown = set(names) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    return [CHECKS[name](seed=seed) for name in names]
