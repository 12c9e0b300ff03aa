"""Segmentation metrics, return statistics, code-schedule composition and PCA."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .envs import FREE_CELLS, FourRoomsState, Trajectory, bfs_distance, fourrooms_decode, fourrooms_obs
from .networks import PolicyNet, PosteriorNet
from .nn import one_hot
from .vae import LatentSequence, run_posterior


def segment_trajectory(q: PosteriorNet, trajectory) -> LatentSequence:
    """Hardened codes of the frozen encoder run along ``trajectory``."""
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    idx, probs = run_posterior(q, states)
    seq = LatentSequence(one_hot(idx, q.k), idx)
    seq.soft = probs
    return seq


def label_matched_accuracy(pred, truth, k: int | None = None) -> float:
    """Best per-step agreement over injective maps from truth labels into predicted labels."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if len(pred) == 0:
        raise ValueError("empty sequences")
    k = int(pred.max()) + 1 if k is None else int(k)
    m = int(truth.max()) + 1
    if k < m:
        raise ValueError(f"{k} predicted labels cannot cover {m} true labels")
    # counts[i, j]: steps with truth i and prediction j
    counts = np.zeros((m, k))
    np.add.at(counts, (truth, pred), 1.0)
    best = max(counts[np.arange(m), list(perm)].sum() for perm in itertools.permutations(range(k), m))
    return float(best / len(pred))


@dataclass
class SegmentationReport:
    sequences: list
    switch_counts: np.ndarray
    accuracies: np.ndarray | None
    usage: np.ndarray

    @property
    def mean_accuracy(self):
        return None if self.accuracies is None else float(np.mean(self.accuracies))

    @property
    def mean_switches(self):
        return float(np.mean(self.switch_counts))

    @property
    def usage_fraction(self):
        return self.usage / self.usage.sum()


def segment_dataset(q: PosteriorNet, trajs: list[Trajectory]) -> SegmentationReport:
    seqs = [segment_trajectory(q, t) for t in trajs]
    switches = np.array([s.switches for s in seqs])
    usage = np.bincount(np.concatenate([s.hardened for s in seqs]), minlength=q.k)
    accs = None
    if all(t.phases is not None for t in trajs):
        accs = np.array([label_matched_accuracy(s.hardened, t.phases, q.k) for s, t in zip(seqs, trajs)])
    return SegmentationReport(seqs, switches, accs, usage)


@dataclass
class Episode:
    states: np.ndarray
    actions: np.ndarray
    codes: np.ndarray   # (T,) indices, -1 when no latent is used
    ret: float
    success: bool

    def __len__(self):
        return len(self.states)


def run_episode(env, pi: PolicyNet | None, q: PosteriorNet | None, rng, deterministic=True,
                schedule=None, start=None, cap=None) -> Episode:
    """One episode; ``pi=None`` runs the environment's scripted expert.

    Codes come from ``schedule`` when given, otherwise from ``q`` online.
    """
    obs = env.reset_from(start) if start is not None else env.reset(rng)
    cap = cap or env.episode_cap
    K = 0 if pi is None else pi.k
    c_prev = np.zeros(K)
    states, actions, codes = [], [], []
    ret, done = 0.0, False
    for t in range(cap):
        if K:
            if schedule is not None:
                k = int(np.asarray(schedule)[t])
            else:
                k = int(np.argmax(q.logits(obs, c_prev)))
            c = one_hot(k, K)
        else:
            k, c = -1, np.zeros(0)
        if pi is None:
            a = env.expert_action()
        else:
            out, _ = pi.forward(obs[None], c[None])
            a = (pi.mode(out) if deterministic else pi.sample(out, rng))[0]
        states.append(obs)
        actions.append(a)
        codes.append(k)
        obs, r, done = env.step(a)
        ret += r
        c_prev = c
        if done:
            break
    acts = np.asarray(actions)
    return Episode(np.asarray(states), acts, np.asarray(codes), ret, bool(done))


def _seeded_episode(setup, i):
    env, pi, q, seed, deterministic = setup
    return run_episode(env, pi, q, np.random.default_rng([seed, i]), deterministic)


@dataclass
class ReturnStats:
    mean: float
    std: float
    returns: np.ndarray = field(repr=False)
    lengths: np.ndarray = field(repr=False)
    success: np.ndarray = field(repr=False)

    @property
    def n(self):
        return len(self.returns)


def evaluate_returns(pi: PolicyNet | None, q: PosteriorNet | None, env, n_episodes: int = 300,
                     seed: int = 0, deterministic: bool = True, workers: int = 1) -> ReturnStats:
    """Mean and std of undiscounted returns; episode i uses the seed (seed, i)."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    if pi is not None and pi.k and q is None:
        raise ValueError("a latent-conditioned policy needs the encoder for online codes")
    if workers > 1:
        # each episode owns its seed, so the split across processes does not change results
        with ProcessPoolExecutor(workers) as pool:
            eps = list(pool.map(_seeded_episode, itertools.repeat((env, pi, q, seed, deterministic)),
                                range(n_episodes), chunksize=max(1, n_episodes // (4 * workers))))
    else:
        eps = [_seeded_episode((env, pi, q, seed, deterministic), i) for i in range(n_episodes)]
    rets = np.array([e.ret for e in eps])
    s1, s2 = rets.sum(), (rets * rets).sum()
    mean = s1 / len(rets)
    std = math.sqrt(max(s2 / len(rets) - mean * mean, 0.0))
    return ReturnStats(float(mean), std, rets, np.array([len(e) for e in eps]),
                       np.array([e.success for e in eps]))


def compose_with_schedule(pi: PolicyNet, schedule, env, rng=None, start=None) -> Episode:
    """Roll out ``pi`` on externally supplied codes, ignoring any encoder."""
    if isinstance(schedule, LatentSequence):
        schedule = schedule.hardened
    schedule = np.asarray(schedule, dtype=int)
    cap = env.episode_cap
    if len(schedule) < cap:
        raise ValueError(f"schedule has {len(schedule)} codes, episode may run {cap} steps")
    rng = np.random.default_rng(0) if rng is None else rng
    return run_episode(env, pi, None, rng, True, schedule=schedule, start=start, cap=cap)


def swap_codes(schedule, a: int, b: int) -> np.ndarray:
    s = np.asarray(schedule.hardened if isinstance(schedule, LatentSequence) else schedule).copy()
    ia, ib = s == a, s == b
    s[ia], s[ib] = b, a
    return s


def rotation_signs(states) -> np.ndarray:
    """Sign of the cross product of consecutive displacements of a 2-D path."""
    d = np.diff(np.asarray(states, dtype=float), axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    return np.sign(cross)


@dataclass
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray   # (d, D), orthonormal rows
    explained: np.ndarray    # variance ratios, non-increasing
    points: np.ndarray       # (N, d)
    codes: np.ndarray
    rank_deficient: bool = False


def pca_project(states, codes, d: int, tol: float = 1e-10) -> PcaProjection:
    X = np.asarray(states, dtype=float)
    if X.ndim != 2:
        raise ValueError("states must be an (N, D) array")
    if len(np.unique(X, axis=0)) < d + 1:
        raise ValueError(f"need at least {d + 1} distinct states")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    total = vals.sum()
    keep = min(d, int(np.sum(vals > tol * max(vals[0], tol))))
    comps = vecs[:, :keep].T
    # fix signs so the largest-magnitude loading is positive
    flip = np.sign(comps[np.arange(keep), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    explained = vals[:keep] / total if total > 0 else np.zeros(keep)
    return PcaProjection(mean, comps, explained, Xc @ comps.T, np.asarray(codes), keep < d)


def arrow_map(pi: PolicyNet, code: int, goal) -> dict:
    """Most probable action per free cell with the apple at ``goal`` and a fixed code."""
    cells = [c for c in FREE_CELLS]
    obs = np.stack([fourrooms_obs(FourRoomsState(c, tuple(goal)), "onehot" if pi.state_dim > 4 else "xy")
                    for c in cells])
    c = np.repeat(one_hot(code, pi.k)[None], len(cells), axis=0) if pi.k else None
    out, _ = pi.forward(obs, c)
    return dict(zip(cells, np.argmax(out, axis=1).tolist()))


def arrow_map_difference(pi: PolicyNet, a: int, b: int, goal) -> float:
    ma, mb = arrow_map(pi, a, goal), arrow_map(pi, b, goal)
    return float(np.mean([ma[c] != mb[c] for c in ma]))


@dataclass
class NavigationReport:
    success_rate: float
    path_ratio: float      # steps taken / BFS distance, summed over successful episodes
    usage: np.ndarray      # fraction of steps spent under each code

    def codes_above(self, frac):
        return int(np.sum(self.usage >= frac))


def navigation_report(pi: PolicyNet, q: PosteriorNet | None, env, n_episodes=100, seed=0) -> NavigationReport:
    """Goal-reaching rate and path efficiency of a Four Rooms policy run with online codes."""
    steps = optimal = 0
    wins = 0
    counts = np.zeros(max(pi.k, 1))
    for i in range(n_episodes):
        ep = run_episode(env, pi, q, np.random.default_rng([seed, i]), deterministic=True)
        start = fourrooms_decode(ep.states[0], env.obs_mode)
        if pi.k:
            counts += np.bincount(ep.codes, minlength=pi.k)
        if ep.success:
            wins += 1
            steps += len(ep)
            optimal += bfs_distance(start.agent, start.apple)
    ratio = steps / optimal if optimal else float("inf")
    total = counts.sum()
    return NavigationReport(wins / n_episodes, ratio, counts / total if total else counts)
