"""Kinematic point maze and its shortest-path waypoint controller."""

from __future__ import annotations

from collections import deque

import numpy as np

from hifql.autodiff import DTYPE
from hifql.errors import ContractViolation

WALL = "#"
FREE = "."


def parse_layout(rows):
    """Turn a list of strings into a boolean occupancy grid (True = wall)."""
    if not rows:
        raise ContractViolation("maze layout is empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ContractViolation("maze layout rows differ in length")
    bad = {ch for r in rows for ch in r} - {WALL, FREE}
    if bad:
        raise ContractViolation(f"maze layout has unknown symbols {sorted(bad)}")
    grid = np.array([[ch == WALL for ch in r] for r in rows], dtype=bool)
    if not (grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all()):
        raise ContractViolation("maze border must be all wall")
    if grid.all():
        raise ContractViolation("maze has no free cell")
    return grid


class MazeEnv:
    """A point moving on a 2-D grid of unit cells scaled by ``cell_size``.

    Position ``(x, y)`` maps to cell ``(row, col) = (y // cell_size, x // cell_size)``.
    Observations are the position followed by ``d_pad`` zeros.
    """

    act_dim = 2

    def __init__(self, layout, cell_size=1.0, max_step=0.25, epsilon=0.5, d_pad=0,
                 name="custom"):
        if cell_size <= 0 or max_step <= 0 or epsilon <= 0:
            raise ContractViolation("cell_size, max_step and epsilon must be positive")
        if d_pad < 0:
            raise ContractViolation(f"d_pad must be >= 0, got {d_pad}")
        self.name = name
        self.layout = list(layout)
        self.grid = parse_layout(self.layout)
        self.cell_size = float(cell_size)
        self.max_step = float(max_step)
        self.epsilon = float(epsilon)
        self.d_pad = int(d_pad)
        self.margin = 1e-3 * self.cell_size
        self.state = self.cell_center(self.free_cells()[0])

    @property
    def obs_dim(self):
        return 2 + self.d_pad

    @property
    def shape(self):
        return self.grid.shape

    # --- geometry ---

    def cell_of(self, pos):
        cs = self.cell_size
        return int(np.floor(pos[1] / cs)), int(np.floor(pos[0] / cs))

    def cell_center(self, cell):
        r, c = cell
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])

    def is_free_cell(self, cell):
        r, c = cell
        rows, cols = self.grid.shape
        return 0 <= r < rows and 0 <= c < cols and not self.grid[r, c]

    def is_free(self, pos):
        return self.is_free_cell(self.cell_of(pos))

    def free_cells(self):
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(~self.grid))]

    def neighbors(self, cell):
        r, c = cell
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (r + dr, c + dc)
            if self.is_free_cell(nxt):
                yield nxt

    def bfs_path(self, start, goal):
        """Shortest 4-connected cell path from ``start`` to ``goal`` (inclusive), or None."""
        if not (self.is_free_cell(start) and self.is_free_cell(goal)):
            return None
        parent = {start: None}
        queue = deque([start])
        while queue:
            cell = queue.popleft()
            if cell == goal:
                break
            for nxt in self.neighbors(cell):
                if nxt not in parent:
                    parent[nxt] = cell
                    queue.append(nxt)
        if goal not in parent:
            return None
        path = [goal]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        return path[::-1]

    def distance_field(self, goal):
        """BFS step counts from every reachable cell to ``goal``."""
        dist = {goal: 0}
        queue = deque([goal])
        while queue:
            cell = queue.popleft()
            for nxt in self.neighbors(cell):
                if nxt not in dist:
                    dist[nxt] = dist[cell] + 1
                    queue.append(nxt)
        return dist

    # --- dynamics ---

    def observe(self, pos=None):
        pos = self.state if pos is None else pos
        obs = np.zeros(self.obs_dim, dtype=DTYPE)
        obs[:2] = pos
        return obs

    def reset(self, pos):
        pos = np.asarray(pos, dtype=np.float64)
        if not self.is_free(pos):
            raise ContractViolation(f"reset position {pos.tolist()} is not in a free cell")
        self.state = pos.copy()
        return self.observe()

    def _sweep(self, pos, axis, delta):
        """Move along one axis, stopping ``margin`` short of the first wall face."""
        cs = self.cell_size
        r, c = self.cell_of(pos)
        target = pos[axis] + delta
        here = c if axis == 0 else r
        there = int(np.floor(target / cs))
        step = 1 if there > here else -1
        for idx in range(here + step, there + step, step):
            cell = (r, idx) if axis == 0 else (idx, c)
            if not self.is_free_cell(cell):
                return idx * cs - self.margin if step > 0 else (idx + 1) * cs + self.margin
        return target

    def step(self, action):
        """Clip the action to the box, scale by ``max_step`` and apply x then y."""
        a = np.clip(np.asarray(action, dtype=np.float64)[:2], -1.0, 1.0)
        delta = a * self.max_step
        pos = self.state.copy()
        pos[0] = self._sweep(pos, 0, delta[0])
        pos[1] = self._sweep(pos, 1, delta[1])
        self.state = pos
        return self.observe()

    def reached(self, pos, goal):
        return float(np.linalg.norm(np.asarray(pos)[:2] - np.asarray(goal)[:2])) <= self.epsilon


def step(env, action):
    return env.step(action)


class WaypointController:
    """Steers toward the center of the next cell on a shortest path to ``goal``.

    Once inside the goal cell it heads for the goal point itself and holds there.
    With an ``rng``, ties between equally short routes follow a random per-controller
    ranking, so forked mazes get both routes in the data.
    """

    def __init__(self, env, goal, rng=None):
        self.env = env
        self.goal = np.asarray(goal, dtype=np.float64)[:2]
        self.goal_cell = env.cell_of(self.goal)
        self.dist = env.distance_field(self.goal_cell)
        cells = sorted(self.dist)
        ranks = rng.random(len(cells)) if rng is not None else np.zeros(len(cells))
        self.rank = dict(zip(cells, ranks.tolist()))

    def reachable(self, pos):
        return self.env.cell_of(pos) in self.dist

    def waypoint(self, pos):
        cell = self.env.cell_of(pos)
        if cell not in self.dist:
            raise ContractViolation(f"cell {cell} cannot reach goal cell {self.goal_cell}")
        if cell == self.goal_cell:
            return self.goal
        nxt = min(self.env.neighbors(cell),
                  key=lambda n: (self.dist.get(n, np.inf), self.rank.get(n, 0.0)))
        return self.env.cell_center(nxt)

    def __call__(self, pos):
        pos = np.asarray(pos, dtype=np.float64)[:2]
        direction = (self.waypoint(pos) - pos) / self.env.max_step
        return np.clip(direction, -1.0, 1.0)
