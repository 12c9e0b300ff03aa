"""Four Rooms, Circle-World and Pendulum, with their scripted experts."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nn import one_hot

# -- Four Rooms -------------------------------------------------------------------

WIDTH, HEIGHT = 15, 11
N_CELLS = WIDTH * HEIGHT
UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # (drow, dcol)

# Plus-shaped partition: wall column 7 and wall row 5, one doorway per room pair.
WALL_COL, WALL_ROW = 7, 5
DOORWAYS = ((2, 7), (8, 7), (5, 3), (5, 11))  # (row, col)


def _build_walls():
    walls = np.zeros((HEIGHT, WIDTH), dtype=bool)
    walls[:, WALL_COL] = True
    walls[WALL_ROW, :] = True
    for r, c in DOORWAYS:
        walls[r, c] = False
    return walls


WALLS = _build_walls()
WALLS.setflags(write=False)


def room_of(cell: tuple[int, int]) -> int:
    """Rooms numbered 1..4 clockwise from the top left; 0 for walls/doorways."""
    r, c = cell
    if WALLS[r, c] or r == WALL_ROW or c == WALL_COL:
        return 0
    top, left = r < WALL_ROW, c < WALL_COL
    return {(True, True): 1, (True, False): 2, (False, False): 3, (False, True): 4}[(top, left)]


FREE_CELLS = tuple((r, c) for r in range(HEIGHT) for c in range(WIDTH) if not WALLS[r, c])
ROOM_CELLS = tuple(cell for cell in FREE_CELLS if room_of(cell) > 0)


class CorruptMapError(RuntimeError):
    pass


@dataclass(frozen=True)
class FourRoomsState:
    agent: tuple[int, int]
    apple: tuple[int, int]


def cell_index(cell) -> int:
    return cell[0] * WIDTH + cell[1]


def index_cell(i: int) -> tuple[int, int]:
    return divmod(int(i), WIDTH)


def fourrooms_reset(rng: np.random.Generator) -> FourRoomsState:
    apple = ROOM_CELLS[rng.integers(len(ROOM_CELLS))]
    while True:
        agent = FREE_CELLS[rng.integers(len(FREE_CELLS))]
        if agent != apple:
            return FourRoomsState(agent, apple)


def _move(cell, action):
    dr, dc = MOVES[int(action)]
    r, c = cell[0] + dr, cell[1] + dc
    if 0 <= r < HEIGHT and 0 <= c < WIDTH and not WALLS[r, c]:
        return (r, c)
    return cell


def fourrooms_step(state: FourRoomsState, action) -> tuple[FourRoomsState, bool]:
    if int(action) not in range(4):
        raise ValueError(f"unknown action {action!r}")
    nxt = FourRoomsState(_move(state.agent, action), state.apple)
    return nxt, nxt.agent == nxt.apple


@lru_cache(maxsize=None)
def _distances_to(goal: tuple[int, int]) -> np.ndarray:
    dist = np.full((HEIGHT, WIDTH), -1, dtype=int)
    dist[goal] = 0
    queue = deque([goal])
    while queue:
        cell = queue.popleft()
        for a in range(4):
            nb = _move(cell, a)
            if nb != cell and dist[nb] < 0:
                dist[nb] = dist[cell] + 1
                queue.append(nb)
    dist.setflags(write=False)
    return dist


def bfs_distance(start, goal) -> int:
    d = int(_distances_to(tuple(goal))[tuple(start)])
    if d < 0:
        raise CorruptMapError(f"{goal} unreachable from {start}")
    return d


def fourrooms_expert(state: FourRoomsState) -> int:
    """First move of a shortest path; ties go to the earliest of up, down, left, right."""
    dist = _distances_to(state.apple)
    here = dist[state.agent]
    if here < 0:
        raise CorruptMapError(f"apple {state.apple} unreachable from {state.agent}")
    for a in range(4):
        nb = _move(state.agent, a)
        if nb != state.agent and dist[nb] == here - 1:
            return a
    raise CorruptMapError(f"no shortest-path move from {state.agent}")


def fourrooms_obs(state: FourRoomsState, mode: str = "onehot") -> np.ndarray:
    if mode == "onehot":
        obs = np.zeros(2 * N_CELLS)
        obs[cell_index(state.agent)] = 1.0
        obs[N_CELLS + cell_index(state.apple)] = 1.0
        return obs
    if mode == "xy":
        (ar, ac), (pr, pc) = state.agent, state.apple
        return np.array([ac / (WIDTH - 1), ar / (HEIGHT - 1), pc / (WIDTH - 1), pr / (HEIGHT - 1)])
    raise ValueError(f"unknown observation mode {mode!r}")


def fourrooms_decode(obs, mode: str = "onehot") -> FourRoomsState:
    obs = np.asarray(obs, dtype=float)
    if mode == "onehot":
        return FourRoomsState(index_cell(np.argmax(obs[:N_CELLS])), index_cell(np.argmax(obs[N_CELLS:])))
    ac, ar, pc, pr = obs
    return FourRoomsState((round(ar * (HEIGHT - 1)), round(ac * (WIDTH - 1))),
                          (round(pr * (HEIGHT - 1)), round(pc * (WIDTH - 1))))


class FourRoomsEnv:
    env_id = "fourrooms"
    discrete = True
    action_dim = 4
    episode_cap = 100

    def __init__(self, obs_mode: str = "onehot"):
        self.obs_mode = obs_mode
        self.state_dim = 2 * N_CELLS if obs_mode == "onehot" else 4
        self.state = None

    def observe(self):
        return fourrooms_obs(self.state, self.obs_mode)

    def reset(self, rng):
        self.state = fourrooms_reset(rng)
        return self.observe()

    def reset_from(self, traj: "Trajectory"):
        self.state = fourrooms_decode(traj.states[0], self.obs_mode)
        return self.observe()

    def set_state(self, state: FourRoomsState):
        self.state = state
        return self.observe()

    def step(self, action):
        self.state, done = fourrooms_step(self.state, int(action))
        return self.observe(), (1.0 if done else 0.0), done

    def applied_action(self, action):
        return int(action)

    def expert_action(self):
        return fourrooms_expert(self.state)


# -- Circle-World -----------------------------------------------------------------

CIRCLE_RADII = (0.5, 1.5)
CIRCLE_STEPS = 100


def circle_points(radius: float, half: int) -> np.ndarray:
    """half+1 points of a clockwise loop through the origin, centre (0, radius)."""
    theta = 2.0 * np.pi * np.arange(half + 1) / half
    pts = np.stack([-radius * np.sin(theta), radius - radius * np.cos(theta)], axis=1)
    pts[-1] = 0.0
    return pts


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def circleworld_expert(radius: float, n_steps: int = CIRCLE_STEPS) -> "Trajectory":
    """Clockwise loop from (0, 0), then the same path retraced counter-clockwise."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_steps < 4 or n_steps % 2:
        raise ValueError("n_steps must be even and at least 4")
    half = n_steps // 2
    pts = circle_points(radius, half)
    path = np.concatenate([pts, pts[-2::-1]])  # 0..half then back to 0; length n_steps + 1
    states = path[:-1]
    actions = _unit(path[1:] - path[:-1])
    phases = np.repeat([0, 1], half)
    return Trajectory("circleworld", states, actions, phases)


class CircleWorldEnv:
    env_id = "circleworld"
    discrete = False
    state_dim = 2
    action_dim = 2

    def __init__(self, n_steps: int = CIRCLE_STEPS, radii=CIRCLE_RADII):
        self.n_steps = n_steps
        self.radii = radii
        self.episode_cap = n_steps
        self.pos = np.zeros(2)
        self.step_size = 0.0

    def _chord(self, radius):
        return 2.0 * radius * math.sin(math.pi / (self.n_steps // 2))

    def reset(self, rng):
        self.set_radius(rng.uniform(*self.radii))
        return self.pos.copy()

    def set_radius(self, radius):
        self.radius = float(radius)
        self.step_size = self._chord(radius)
        self.pos = np.zeros(2)
        return self.pos.copy()

    def reset_from(self, traj):
        self.pos = np.array(traj.states[0], dtype=float)
        self.step_size = float(np.linalg.norm(traj.states[1] - traj.states[0]))
        self.radius = self.step_size / (2.0 * math.sin(math.pi / (self.n_steps // 2)))
        return self.pos.copy()

    def applied_action(self, action):
        a = np.asarray(action, dtype=float)
        n = np.linalg.norm(a)
        return a / n if n > 1e-12 else np.zeros(2)

    def step(self, action):
        self.pos = self.pos + self.step_size * self.applied_action(action)
        return self.pos.copy(), 0.0, False


# -- Pendulum ---------------------------------------------------------------------

G, MASS, LENGTH, DT = 10.0, 1.0, 1.0, 0.05
MAX_SPEED, MAX_TORQUE = 8.0, 2.0
UPRIGHT_ENERGY = 1.5 * G / LENGTH  # 0.5 w^2 + (3g/2l) cos(theta) at rest upright
CAPTURE_ANGLE = 0.3


def wrap_angle(theta):
    """Map to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class PendulumState:
    theta: float
    theta_dot: float


def pendulum_step(state: PendulumState, torque: float) -> tuple[PendulumState, float]:
    u = float(np.clip(torque, -MAX_TORQUE, MAX_TORQUE))
    th, w = state.theta, state.theta_dot
    reward = -(wrap_angle(th) ** 2 + 0.1 * w * w + 0.001 * u * u)
    w_new = w + (3.0 * G / (2.0 * LENGTH) * math.sin(th) + 3.0 / (MASS * LENGTH ** 2) * u) * DT
    w_new = float(np.clip(w_new, -MAX_SPEED, MAX_SPEED))
    return PendulumState(th + w_new * DT, w_new), reward


def pendulum_obs(state: PendulumState) -> np.ndarray:
    return np.array([math.cos(state.theta), math.sin(state.theta), state.theta_dot])


def pendulum_energy(state: PendulumState) -> float:
    return 0.5 * state.theta_dot ** 2 + 1.5 * G / LENGTH * math.cos(state.theta)


def pendulum_expert(state: PendulumState) -> float:
    """Energy-pumping swing-up with a linear catch near upright."""
    err = wrap_angle(state.theta)
    if abs(err) < CAPTURE_ANGLE:
        return float(np.clip(-(16.0 * err + 4.0 * state.theta_dot), -MAX_TORQUE, MAX_TORQUE))
    direction = 1.0 if state.theta_dot >= 0 else -1.0
    if pendulum_energy(state) < UPRIGHT_ENERGY:
        return MAX_TORQUE * direction
    return 0.0


class PendulumEnv:
    env_id = "pendulum"
    discrete = False
    state_dim = 3
    action_dim = 1
    episode_cap = 200

    def __init__(self):
        self.state = PendulumState(0.0, 0.0)

    def reset(self, rng):
        self.state = PendulumState(float(rng.uniform(-np.pi, np.pi)), float(rng.uniform(-1.0, 1.0)))
        return pendulum_obs(self.state)

    def reset_from(self, traj):
        c, s, w = traj.states[0]
        self.state = PendulumState(math.atan2(s, c), float(w))
        return pendulum_obs(self.state)

    def applied_action(self, action):
        return np.clip(np.asarray(action, dtype=float).reshape(1), -MAX_TORQUE, MAX_TORQUE)

    def step(self, action):
        self.state, reward = pendulum_step(self.state, float(self.applied_action(action)[0]))
        return pendulum_obs(self.state), reward, False

    def expert_action(self):
        return np.array([pendulum_expert(self.state)])


ENV_IDS = ("fourrooms", "circleworld", "pendulum")


def make_env(env_id: str, **kw):
    if env_id == "fourrooms":
        return FourRoomsEnv(obs_mode=kw.get("obs_mode", "onehot"))
    if env_id == "circleworld":
        return CircleWorldEnv(n_steps=kw.get("n_steps", CIRCLE_STEPS))
    if env_id == "pendulum":
        return PendulumEnv()
    raise ValueError(f"unknown environment {env_id!r}; choose from {', '.join(ENV_IDS)}")


# -- trajectories and expert datasets ---------------------------------------------

@dataclass(frozen=True)
class Step:
    state: np.ndarray
    action: np.ndarray
    reward: float | None = None


class Trajectory:
    """One episode: states (T x state_dim), actions (T,) ints or (T x action_dim)."""

    def __init__(self, env_id, states, actions, phases=None, rewards=None):
        self.env_id = env_id
        self.states = np.asarray(states, dtype=float)
        actions = np.asarray(actions)
        self.actions = actions.astype(int) if actions.dtype.kind in "iub" else actions.astype(float)
        self.phases = None if phases is None else np.asarray(phases, dtype=int)
        self.rewards = None if rewards is None else np.asarray(rewards, dtype=float)
        if len(self.states) < 2:
            raise ValueError("a trajectory needs at least two steps")
        if len(self.actions) != len(self.states):
            raise ValueError("states and actions differ in length")
        if self.phases is not None and len(self.phases) != len(self.states):
            raise ValueError("phase labels must cover every step")

    def __len__(self):
        return len(self.states)

    @property
    def discrete(self) -> bool:
        return self.actions.dtype.kind == "i"

    def steps(self):
        for t in range(len(self)):
            r = None if self.rewards is None else float(self.rewards[t])
            yield Step(self.states[t], self.actions[t], r)

    def action_matrix(self, n_actions=None) -> np.ndarray:
        """Actions as rows: one-hot for discrete trajectories."""
        if self.discrete:
            return one_hot(self.actions, n_actions or 4)
        return self.actions

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None
                                                 and a.shape == b.shape and np.array_equal(a, b))
        return (self.env_id == other.env_id and same(self.states, other.states)
                and same(self.actions, other.actions) and same(self.phases, other.phases)
                and same(self.rewards, other.rewards))

    def __repr__(self):
        return f"Trajectory({self.env_id!r}, T={len(self)})"


def _expert_episode(env, rng, cap=None):
    cap = cap or env.episode_cap
    obs = env.reset(rng)
    states, actions, rewards = [], [], []
    for _ in range(cap):
        a = env.expert_action()
        states.append(obs)
        actions.append(a)
        obs, r, done = env.step(a)
        rewards.append(r)
        if done:
            break
    return states, actions, rewards


def expert_rollout(env, rng, cap=None) -> Trajectory:
    """Run a scripted expert in a fresh episode of ``env``."""
    states, actions, rewards = _expert_episode(env, rng, cap)
    return Trajectory(env.env_id, states, np.asarray(actions), rewards=rewards)


def trajectory_terminated(traj: Trajectory, obs_mode: str | None = None) -> bool:
    """Whether the episode ended in a terminal state (only Four Rooms has them)."""
    if traj.env_id != "fourrooms":
        return False
    mode = obs_mode or ("onehot" if traj.states.shape[1] > 4 else "xy")
    return fourrooms_step(fourrooms_decode(traj.states[-1], mode), int(traj.actions[-1]))[1]


def generate_experts(env_id: str, n: int, rng: np.random.Generator, **env_kw) -> list[Trajectory]:
    if n < 1:
        raise ValueError("need at least one expert trajectory")
    if env_id == "circleworld":
        n_steps = env_kw.get("n_steps", CIRCLE_STEPS)
        return [circleworld_expert(rng.uniform(*CIRCLE_RADII), n_steps) for _ in range(n)]
    env = make_env(env_id, **env_kw)
    out = []
    while len(out) < n:
        # one-step episodes (apple next to the agent) are too short to keep
        states, actions, rewards = _expert_episode(env, rng)
        if len(states) >= 2:
            out.append(Trajectory(env.env_id, states, np.asarray(actions), rewards=rewards))
    return out
