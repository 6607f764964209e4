"""A tour of the return kernels and of how heads with different backup lengths
see the same stretch of experience.

Run with ``python demos/01_returns_and_heads.py``.
"""

import numpy as np

from mbdqn.returns import LambdaSpec, RewardSegment, lambda_return, n_step_return, per_head_target

# One episode fragment: three rewards, then the episode continues.
rewards = [1.0, 0.0, 2.0]
gamma = 0.9

# A one-step head only sees the first reward and bootstraps right away.
one = per_head_target(RewardSegment(rewards[:1]), gamma, 1, greedy_next_value=5.0)
print("1-step target:", one)  # 1 + 0.9 * 5

# A three-step head sums all three rewards before bootstrapping.
three = per_head_target(RewardSegment(rewards), gamma, 3, greedy_next_value=5.0)
print("3-step target:", three)  # 1 + 0 + 0.81*2 + 0.729*5

# If the episode had ended after the third reward there is nothing to bootstrap.
print("terminated   :", n_step_return(RewardSegment(rewards, 5.0, terminated=True), gamma, 3))

# %% The lambda-return blends every n-step return; lam=0 and lam=1 are the endpoints.
values = np.array([4.0, 3.0, 5.0])
for lam in (0.0, 0.5, 1.0):
    print(f"lambda={lam:.1f} ->", round(lambda_return(rewards, values, gamma, LambdaSpec(lam)), 6))
