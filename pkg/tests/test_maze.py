"""Tests for the point maze: layout parsing, dynamics, waypoint controller."""

import numpy as np
import pytest

from hifql.errors import ContractViolation
from hifql.maze import MazeEnv, WaypointController, parse_layout, step
from hifql.maze_registry import make_env

OPEN = ["#####", "#...#", "#...#", "#####"]


class TestLayout:
    """Tests for occupancy grid parsing."""

    def test_walls_and_free(self):
        grid = parse_layout(OPEN)
        assert grid.shape == (4, 5)
        assert grid[0].all()
        assert not grid[1, 1]

    def test_open_border_rejected(self):
        with pytest.raises(ContractViolation):
            parse_layout(["#.#", "#.#", "###"])

    def test_ragged_rejected(self):
        with pytest.raises(ContractViolation):
            parse_layout(["####", "#.#", "####"])

    def test_unknown_symbol(self):
        with pytest.raises(ContractViolation):
            parse_layout(["###", "#x#", "###"])


class TestGeometry:
    """Tests for cell/position conversions and BFS."""

    def test_cell_of_center(self):
        env = MazeEnv(OPEN)
        assert env.cell_of(env.cell_center((2, 3))) == (2, 3)

    def test_cell_size_scales(self):
        env = MazeEnv(OPEN, cell_size=2.0)
        np.testing.assert_allclose(env.cell_center((1, 2)), [5.0, 3.0])

    def test_bfs_path_length(self):
        env = make_env("small")
        path = env.bfs_path((1, 1), (1, 5))
        assert path[0] == (1, 1)
        assert path[-1] == (1, 5)
        assert len(path) == 5

    def test_bfs_to_wall(self):
        env = make_env("small")
        assert env.bfs_path((1, 1), (0, 0)) is None

    def test_distance_field(self):
        env = make_env("corridor")
        dist = env.distance_field((1, 9))
        assert dist[(1, 1)] == 8
        assert dist[(1, 9)] == 0


class TestStep:
    """Tests for kinematic dynamics and wall clamping."""

    def test_zero_action(self):
        env = make_env("small")
        env.reset(env.cell_center((1, 1)))
        before = env.state.copy()
        step(env, np.zeros(2))
        np.testing.assert_array_equal(env.state, before)

    def test_room_moves_by_max_step(self):
        env = make_env("room")
        env.reset(env.cell_center((1, 1)))
        for i in range(1, 4):
            obs = step(env, np.array([1.0, 0.0]))
            assert obs[0] == pytest.approx(1.5 + 0.1 * i, abs=1e-6)
            assert obs[1] == pytest.approx(1.5)

    def test_clamped_at_wall_face(self):
        env = make_env("room")
        env.reset(env.cell_center((1, 1)))
        for _ in range(20):
            step(env, np.array([1.0, 0.0]))
        assert env.state[0] == pytest.approx(2.0 - env.margin)
        assert env.is_free(env.state)

    def test_action_clipped(self):
        env = make_env("room")
        env.reset(env.cell_center((1, 1)))
        step(env, np.array([0.0, -50.0]))
        assert env.state[1] == pytest.approx(1.5 - env.max_step)

    def test_never_crosses_wall(self):
        env = make_env("small")
        env.reset(env.cell_center((3, 1)))
        rng = np.random.default_rng(0)
        for _ in range(2000):
            step(env, rng.uniform(-1, 1, size=2))
            assert env.is_free(env.state)

    def test_reset_into_wall(self):
        env = make_env("small")
        with pytest.raises(ContractViolation):
            env.reset(env.cell_center((0, 0)))

    def test_observation_padding(self):
        env = make_env("small", d_pad=3)
        obs = env.reset(env.cell_center((1, 1)))
        assert obs.shape == (5,)
        assert obs.dtype == np.float32
        assert not obs[2:].any()

    def test_reached(self):
        env = make_env("small")
        assert env.reached(np.array([1.5, 1.5]), np.array([1.9, 1.5]))
        assert not env.reached(np.array([1.5, 1.5]), np.array([2.5, 1.5]))


class TestWaypointController:
    """Tests for the shortest-path controller used for data and as an oracle."""

    @pytest.mark.parametrize("goal_cell", [(1, 5), (5, 1), (3, 3), (5, 5)])
    def test_reaches_goal(self, goal_cell):
        env = make_env("small")
        env.reset(env.cell_center((1, 1)))
        goal = env.cell_center(goal_cell)
        controller = WaypointController(env, goal)
        for _ in range(200):
            step(env, controller(env.state))
            if env.reached(env.state, goal):
                break
        assert env.reached(env.state, goal)

    def test_output_in_box(self):
        env = make_env("medium")
        controller = WaypointController(env, env.cell_center((9, 1)))
        for cell in env.free_cells():
            if not controller.reachable(env.cell_center(cell)):
                continue
            a = controller(env.cell_center(cell))
            assert np.all(np.abs(a) <= 1.0)

    def test_tie_break_picks_both_fork_routes(self):
        env = make_env("fork")
        start, goal = env.cell_center((3, 1)), env.cell_center((3, 9))
        first_moves = set()
        for seed in range(20):
            controller = WaypointController(env, goal, rng=np.random.default_rng(seed))
            first_moves.add(tuple(np.sign(controller(start)).astype(int)))
        assert (0, -1) in first_moves
        assert (0, 1) in first_moves
