"""Desk-scale environments: grid mazes (dense and sparse reward) and a chain MDP.

All environments are deterministic, expose one-hot observations by default
and publish their full transition model (``model(state, action)``) so that
:func:`optimal_values` can solve them exactly by value iteration.

Text layout format for mazes, one row per line::

    #....G
    #.##..
    S.....

``#`` wall, ``.`` free, ``S`` start, ``G`` goal. Cells outside the grid act
as walls.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}


class EpisodeFinishedError(RuntimeError):
    pass


class MazeLayoutError(ValueError):
    pass


@dataclass(frozen=True)
class EnvStep:
    obs: np.ndarray
    reward: float
    terminal: bool
    cell: tuple[int, int]
    reached_goal: bool = False

    @property
    def truncated(self) -> bool:
        """Episode ended on the step budget rather than at the goal."""
        return self.terminal and not self.reached_goal


class GridMaze:
    """Four-action grid world with a single start and goal cell.

    Dense mode pays ``r_max * (1 - d / d_max) - step_penalty`` for the cell
    the agent lands in, with ``d`` the wall-aware shortest-path distance to the
    goal and ``d_max`` its maximum over free cells. Sparse mode pays ``r_goal``
    on entering the goal and ``-step_penalty`` otherwise. Episodes end at the
    goal or after ``max_episode_steps`` moves.
    """

    n_actions = 4

    def __init__(
        self,
        width: int,
        height: int,
        start: tuple[int, int],
        goal: tuple[int, int],
        walls=(),
        reward_mode: str = "dense",
        max_episode_steps: int = 200,
        r_max: float = 1.0,
        step_penalty: float = 1.0,
        r_goal: float = 1.0,
        encoding: str = "onehot",
    ):
        if reward_mode not in ("dense", "sparse"):
            raise ValueError(f"unknown reward_mode {reward_mode!r}")
        if encoding not in ("onehot", "xy"):
            raise ValueError(f"unknown encoding {encoding!r}")
        self.width, self.height = int(width), int(height)
        self.walls = frozenset(tuple(w) for w in walls)
        self.start, self.goal = tuple(start), tuple(goal)
        self.reward_mode = reward_mode
        self.max_episode_steps = int(max_episode_steps)
        self.r_max, self.step_penalty, self.r_goal = float(r_max), float(step_penalty), float(r_goal)
        self.encoding = encoding
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not self._inside(cell) or cell in self.walls:
                raise MazeLayoutError(f"{name} cell {cell} is blocked or outside the grid")
        if self.start == self.goal:
            raise MazeLayoutError("start and goal must differ")
        self.distance = self._bfs(self.goal)
        if self.start not in self.distance:
            raise MazeLayoutError("goal is unreachable from start")
        self.d_max = max(self.distance.values())
        self._cell = self.start
        self._steps = 0
        self._done = False
        self._build_model()

    # layout ---------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, **kwargs) -> "GridMaze":
        rows = [line.rstrip("\n") for line in text.strip("\n").splitlines() if line.strip()]
        if not rows:
            raise MazeLayoutError("empty layout")
        width = max(len(r) for r in rows)
        walls, start, goal = set(), None, None
        for y, row in enumerate(rows):
            for x, ch in enumerate(row.ljust(width, "#")):
                if ch == "#":
                    walls.add((x, y))
                elif ch == "S":
                    start = (x, y)
                elif ch == "G":
                    goal = (x, y)
                elif ch != ".":
                    raise MazeLayoutError(f"unexpected character {ch!r} at ({x}, {y})")
        if start is None or goal is None:
            raise MazeLayoutError("layout needs one S and one G")
        return cls(width, len(rows), start, goal, walls, **kwargs)

    @classmethod
    def from_file(cls, path, **kwargs) -> "GridMaze":
        return cls.from_text(Path(path).read_text(), **kwargs)

    def to_text(self) -> str:
        chars = {self.start: "S", self.goal: "G"}
        lines = []
        for y in range(self.height):
            lines.append(
                "".join(chars.get((x, y), "#" if (x, y) in self.walls else ".") for x in range(self.width))
            )
        return "\n".join(lines) + "\n"

    def _inside(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def _free(self, cell) -> bool:
        return self._inside(cell) and cell not in self.walls

    def _bfs(self, source):
        dist = {source: 0}
        queue = deque([source])
        while queue:
            cell = queue.popleft()
            for dx, dy in MOVES.values():
                nxt = (cell[0] + dx, cell[1] + dy)
                if self._free(nxt) and nxt not in dist:
                    dist[nxt] = dist[cell] + 1
                    queue.append(nxt)
        return dist

    # dynamics -------------------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def obs_dim(self) -> int:
        return self.n_states if self.encoding == "onehot" else 2

    def state_index(self, cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell_of(self, state: int) -> tuple[int, int]:
        return state % self.width, state // self.width

    def free_states(self) -> list[int]:
        return [self.state_index(c) for c in sorted(self.distance, key=lambda c: (c[1], c[0]))]

    @property
    def terminal_states(self) -> frozenset[int]:
        return frozenset({self.state_index(self.goal)})

    def move(self, cell, action: int):
        dx, dy = MOVES[int(action)]
        nxt = (cell[0] + dx, cell[1] + dy)
        return nxt if self._free(nxt) else cell

    def reward_at(self, cell) -> float:
        if self.reward_mode == "dense":
            return self.r_max * (1.0 - self.distance[cell] / self.d_max) - self.step_penalty
        return self.r_goal if cell == self.goal else -self.step_penalty

    def _build_model(self):
        # transition tables over every grid index; walls map to themselves with zero reward
        S, A = self.n_states, self.n_actions
        self.next_state = np.tile(np.arange(S)[:, None], (1, A))
        self.rewards = np.zeros((S, A))
        self.done = np.zeros((S, A), dtype=bool)
        for cell in self.distance:
            s = self.state_index(cell)
            for a in range(A):
                nxt = self.move(cell, a)
                self.next_state[s, a] = self.state_index(nxt)
                self.rewards[s, a] = self.reward_at(nxt)
                self.done[s, a] = nxt == self.goal
        self._eye = np.eye(S)

    def model(self, state: int, action: int):
        return int(self.next_state[state, action]), float(self.rewards[state, action]), bool(self.done[state, action])

    def observe(self, cell) -> np.ndarray:
        if self.encoding == "onehot":
            return self._eye[self.state_index(cell)].copy()
        return np.array([cell[0] / max(self.width - 1, 1), cell[1] / max(self.height - 1, 1)])

    @property
    def cell(self) -> tuple[int, int]:
        return self._cell

    def reset(self, rng=None) -> np.ndarray:
        self._cell = self.start
        self._steps = 0
        self._done = False
        return self.observe(self._cell)

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise EpisodeFinishedError("episode finished; call reset()")
        self._cell = self.move(self._cell, action)
        self._steps += 1
        reward = self.reward_at(self._cell)
        goal = self._cell == self.goal
        self._done = goal or self._steps >= self.max_episode_steps
        return EnvStep(self.observe(self._cell), reward, self._done, self._cell, goal)


class ChainMDP:
    """Deterministic corridor of ``length`` states; action 0 moves left, 1 moves right.

    The episode starts in state 0 and terminates on entering the right end,
    which pays ``r_goal``; every other move pays ``-step_penalty``.
    """

    n_actions = 2

    def __init__(self, length: int = 5, r_goal: float = 1.0, step_penalty: float = 0.0, max_episode_steps: int = 100):
        if length < 2:
            raise ValueError("a chain needs at least two states")
        self.length = int(length)
        self.r_goal = float(r_goal)
        self.step_penalty = float(step_penalty)
        self.max_episode_steps = int(max_episode_steps)
        self.width, self.height = self.length, 1
        self.goal = (self.length - 1, 0)
        self.start = (0, 0)
        S = self.length
        self.next_state = np.stack([np.maximum(np.arange(S) - 1, 0), np.minimum(np.arange(S) + 1, S - 1)], axis=1)
        self.done = self.next_state == S - 1
        self.rewards = np.where(self.done, self.r_goal, -self.step_penalty)
        self.done[S - 1] = False
        self.rewards[S - 1] = 0.0
        self.next_state[S - 1] = S - 1
        self._eye = np.eye(S)
        self._state = 0
        self._steps = 0
        self._done = False

    n_states = property(lambda self: self.length)
    obs_dim = property(lambda self: self.length)
    terminal_states = property(lambda self: frozenset({self.length - 1}))

    def free_states(self):
        return list(range(self.length))

    def state_index(self, cell) -> int:
        return cell[0]

    def cell_of(self, state):
        return state, 0

    def model(self, state, action):
        return int(self.next_state[state, action]), float(self.rewards[state, action]), bool(self.done[state, action])

    def observe(self, cell):
        return self._eye[cell[0]].copy()

    @property
    def cell(self):
        return self._state, 0

    def reset(self, rng=None):
        self._state = 0
        self._steps = 0
        self._done = False
        return self.observe(self.cell)

    def step(self, action):
        if self._done:
            raise EpisodeFinishedError("episode finished; call reset()")
        s = self._state
        self._state = int(self.next_state[s, action])
        self._steps += 1
        goal = self._state == self.length - 1
        self._done = goal or self._steps >= self.max_episode_steps
        return EnvStep(self.observe(self.cell), float(self.rewards[s, action]), self._done, self.cell, goal)


def dense_maze(size: int = 10, **kwargs) -> GridMaze:
    """Open ``size`` x ``size`` Dense Maze, start top-left, goal bottom-right."""
    kwargs.setdefault("reward_mode", "dense")
    return GridMaze(size, size, (0, 0), (size - 1, size - 1), **kwargs)


def sparse_maze(size: int = 10, **kwargs) -> GridMaze:
    kwargs.setdefault("reward_mode", "sparse")
    kwargs.setdefault("step_penalty", 0.01)
    return GridMaze(size, size, (0, 0), (size - 1, size - 1), **kwargs)


def optimal_values(env, gamma: float, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Q* as an ``(n_states, n_actions)`` table by synchronous value iteration.

    Terminal and wall rows stay zero. Iterates until the sup-norm change drops
    below ``tol``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    live = np.zeros(env.n_states, dtype=bool)
    live[env.free_states()] = True
    live[list(env.terminal_states)] = False
    q = np.zeros((env.n_states, env.n_actions))
    cont = gamma * ~env.done
    for _ in range(max_iter):
        v = q.max(axis=1)
        new = np.where(live[:, None], env.rewards + cont * v[env.next_state], 0.0)
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tol:
            break
    return q


def optimal_actions(q_star: np.ndarray, tol: float = 1e-9) -> list[set[int]]:
    """Per-state set of actions whose Q* is within ``tol`` of the best."""
    best = q_star.max(axis=1, keepdims=True)
    return [set(np.flatnonzero(row >= b - tol).tolist()) for row, b in zip(q_star, best)]
