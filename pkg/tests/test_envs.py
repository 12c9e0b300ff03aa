import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from digail.envs import (DOWN, FREE_CELLS, HEIGHT, LEFT, RIGHT, ROOM_CELLS, UP, WALLS, WIDTH, CircleWorldEnv,
                         FourRoomsEnv, FourRoomsState, PendulumEnv, PendulumState, Trajectory, bfs_distance,
                         circleworld_expert, fourrooms_decode, fourrooms_expert, fourrooms_obs,
                         fourrooms_reset, fourrooms_step, generate_experts, make_env, pendulum_expert,
                         pendulum_step, room_of, wrap_angle)


def grid_graph():
    """Independent adjacency over free cells, built without the environment's move rule."""
    g = nx.Graph()
    free = {(r, c) for r in range(HEIGHT) for c in range(WIDTH) if not WALLS[r, c]}
    g.add_nodes_from(free)
    for r, c in free:
        for nb in ((r + 1, c), (r, c + 1)):
            if nb in free:
                g.add_edge((r, c), nb)
    return g


def test_map_layout():
    assert WALLS.shape == (11, 15)
    assert len(FREE_CELLS) == 165 - int(WALLS.sum())
    assert nx.is_connected(grid_graph())
    assert {room_of(c) for c in ROOM_CELLS} == {1, 2, 3, 4}
    # exactly one doorway joins each adjacent pair of rooms
    g = grid_graph()
    doorways = [c for c in FREE_CELLS if room_of(c) == 0]
    assert len(doorways) == 4
    for d in doorways:
        rooms = {room_of(nb) for nb in g.neighbors(d)}
        assert len(rooms) == 2


def test_boundary_blocks_move():
    s = FourRoomsState((0, 0), (10, 14))
    nxt, done = fourrooms_step(s, UP)
    assert nxt.agent == (0, 0) and not done
    nxt, _ = fourrooms_step(s, LEFT)
    assert nxt.agent == (0, 0)


def test_wall_blocks_move():
    s = FourRoomsState((0, 6), (10, 14))
    assert WALLS[0, 7]
    assert fourrooms_step(s, RIGHT)[0].agent == (0, 6)


def test_adjacent_apple_done():
    s = FourRoomsState((1, 1), (1, 2))
    nxt, done = fourrooms_step(s, RIGHT)
    assert done and nxt.agent == (1, 2)
    assert fourrooms_expert(s) == RIGHT


def test_random_walk_never_enters_wall():
    rng = np.random.default_rng(0)
    s = fourrooms_reset(rng)
    for _ in range(1000):
        s, _ = fourrooms_step(s, int(rng.integers(4)))
        assert not WALLS[s.agent]


def test_reset_places_apple_in_a_room():
    rng = np.random.default_rng(1)
    for _ in range(200):
        s = fourrooms_reset(rng)
        assert room_of(s.apple) > 0 and s.agent != s.apple and not WALLS[s.agent]


def test_tie_break_prefers_earlier_action():
    # goal diagonally down-right in open space: up/left are worse, down comes before right
    s = FourRoomsState((1, 1), (2, 2))
    assert fourrooms_expert(s) == DOWN


def test_expert_length_equals_independent_bfs_all_pairs():
    g = grid_graph()
    lengths = dict(nx.all_pairs_shortest_path_length(g))
    env = FourRoomsEnv()
    for goal in ROOM_CELLS:
        for start in FREE_CELLS:
            if start == goal:
                continue
            assert bfs_distance(start, goal) == lengths[start][goal]
    rng = np.random.default_rng(2)
    for _ in range(100):
        env.reset(rng)
        start, goal = env.state.agent, env.state.apple
        steps, done = 0, False
        while not done:
            _, _, done = env.step(env.expert_action())
            steps += 1
        assert steps == lengths[start][goal]


def test_observation_encodings():
    s = FourRoomsState((3, 4), (9, 12))
    o = fourrooms_obs(s)
    assert o.shape == (330,) and o.sum() == 2.0
    assert fourrooms_decode(o) == s
    assert fourrooms_decode(fourrooms_obs(s, "xy"), "xy") == s
    assert FourRoomsEnv("xy").state_dim == 4


def test_circle_expert_unit_actions_and_retrace():
    tr = circleworld_expert(1.2, 100)
    assert len(tr) == 100
    np.testing.assert_allclose(np.linalg.norm(tr.actions, axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(tr.states[0], [0.0, 0.0])
    assert tr.phases.tolist() == [0] * 50 + [1] * 50
    step = 2 * 1.2 * math.sin(math.pi / 50)
    for t in range(1, 50):
        assert np.linalg.norm(tr.states[t] - tr.states[100 - t]) <= step
    # cross product of consecutive displacements: negative, then positive
    path = np.vstack([tr.states, [0.0, 0.0]])
    d = np.diff(path, axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    assert np.all(cross[:49] < 0) and np.all(cross[50:] > 0)
    signs = np.sign(cross[np.abs(cross) > 1e-12])
    assert int(np.sum(signs[1:] != signs[:-1])) == 1


def test_circle_expert_rejects_bad_lengths():
    with pytest.raises(ValueError):
        circleworld_expert(1.0, 2)
    with pytest.raises(ValueError):
        circleworld_expert(1.0, 11)


def test_circle_env_replays_expert():
    tr = circleworld_expert(0.8, 100)
    env = CircleWorldEnv()
    s = env.reset_from(tr)
    for t in range(len(tr)):
        np.testing.assert_allclose(s, tr.states[t], atol=1e-9)
        s, r, done = env.step(tr.actions[t] * 3.0)  # actions are normalized before use
        assert r == 0.0 and not done


def test_pendulum_equilibrium_and_hanging_reward():
    nxt, r = pendulum_step(PendulumState(0.0, 0.0), 0.0)
    assert nxt == PendulumState(0.0, 0.0) and r == 0.0
    _, r = pendulum_step(PendulumState(math.pi, 0.0), 0.0)
    assert abs(r) == pytest.approx(math.pi ** 2)


def test_pendulum_step_hand_evaluation():
    nxt, r = pendulum_step(PendulumState(1.0, 0.0), 1.0)
    w = (15.0 * math.sin(1.0) + 3.0) * 0.05
    assert nxt.theta_dot == pytest.approx(w, abs=1e-15)
    assert nxt.theta == pytest.approx(1.0 + w * 0.05, abs=1e-15)
    assert r == pytest.approx(-(1.0 + 0.001), abs=1e-15)


@given(st.floats(-20, 20), st.floats(-8, 8), st.floats(-5, 5))
def test_pendulum_reward_nonpositive_and_speed_clamped(th, w, u):
    nxt, r = pendulum_step(PendulumState(th, w), u)
    assert r <= 0.0
    assert abs(nxt.theta_dot) <= 8.0


@given(st.floats(-50, 50))
def test_wrap_angle_range(th):
    w = wrap_angle(th)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(th), abs_tol=1e-9)


def test_pendulum_controller_examples():
    assert abs(pendulum_expert(PendulumState(math.pi, 0.0))) == 2.0
    assert pendulum_expert(PendulumState(0.0, 0.0)) == 0.0


def test_pendulum_controller_swings_up_and_holds():
    env = PendulumEnv()
    ok = 0
    for seed in range(100):
        env.reset(np.random.default_rng(seed))
        tail = []
        for t in range(200):
            env.step(env.expert_action())
            if t >= 150:
                tail.append(abs(wrap_angle(env.state.theta)))
        ok += max(tail) < 0.2
    assert ok >= 90


def test_make_env_rejects_unknown():
    with pytest.raises(ValueError):
        make_env("hopper")


def test_generate_experts_counts_and_lengths():
    rng = np.random.default_rng(3)
    assert len(generate_experts("pendulum", 25, rng)) == 25
    fr = generate_experts("fourrooms", 20, rng)
    assert len(fr) == 20 and all(len(t) >= 2 for t in fr)
    cw = generate_experts("circleworld", 5, rng)
    radii = [np.max(t.states[:, 1]) / 2 for t in cw]
    assert all(0.5 <= r <= 1.5 for r in radii)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory("pendulum", [[0, 0, 0]], [[0.0]])
    with pytest.raises(ValueError):
        Trajectory("pendulum", [[0, 0, 0]] * 3, [[0.0]] * 2)
    t = Trajectory("fourrooms", np.zeros((3, 330)), [0, 1, 2])
    assert t.discrete and t.action_matrix().shape == (3, 4)
