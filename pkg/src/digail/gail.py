"""Adversarial imitation with a directed-information reward term.

The discriminator is trained toward 1 on policy samples and 0 on expert
samples. The policy reward for one step is

    -log D(s_t, a_t) + lambda1 * log q(c_t | s_t, c_{t-1})

with q the frozen encoder from pre-training. Policies are optimized with
clipped PPO and generalized advantage estimation. Plain GAIL is the same loop
with no latent code (K = 0) and lambda1 = 0.

Episodes that end in a terminal state pass into an absorbing state, which is
scored by the discriminator like any other state. Its discounted value
replaces the zero bootstrap, so a positive -log D reward no longer pays the
policy for avoiding termination.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .envs import Trajectory, make_env, trajectory_terminated
from .networks import Discriminator, PolicyNet, PosteriorNet, ValueNet, latent_input
from .nn import AdamState, adam_step, forward_with_cache, mlp_backward, one_hot, softmax_logprobs
from .vae import LatentSequence, run_posterior

log = logging.getLogger(__name__)

D_CLAMP = 1e-8


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def discriminator_loss(D: Discriminator, policy_s, policy_a, expert_s, expert_a,
                       backward: bool = False, policy_absorbing: int = 0, expert_absorbing: int = 0) -> float:
    """-E_pi[log D] - E_expert[log(1 - D)], computed from logits.

    ``policy_absorbing`` and ``expert_absorbing`` append that many absorbing-state
    rows to each side.
    """
    if len(policy_s) == 0 or len(expert_s) == 0:
        raise ValueError("discriminator batches must be nonempty")
    x_pol = np.concatenate([D.inputs(policy_s, policy_a), D.absorbing_inputs(policy_absorbing)])
    x_exp = np.concatenate([D.inputs(expert_s, expert_a), D.absorbing_inputs(expert_absorbing)])
    z_pol, c_pol = forward_with_cache(D.mlp, x_pol)
    z_exp, c_exp = forward_with_cache(D.mlp, x_exp)
    n_pol, n_exp = len(x_pol), len(x_exp)
    loss = float(np.mean(_softplus(-z_pol)) + np.mean(_softplus(z_exp)))
    if backward:
        p_pol = 1.0 / (1.0 + np.exp(-z_pol))
        p_exp = 1.0 / (1.0 + np.exp(-z_exp))
        mlp_backward(D.mlp, x_pol, (p_pol - 1.0) / n_pol, c_pol)
        mlp_backward(D.mlp, x_exp, p_exp / n_exp, c_exp)
    return loss


def posterior_logprob(q: PosteriorNet, s, c_t, c_prev) -> np.ndarray:
    """log q(c_t | s, c_prev) for code vectors ``c_t`` (one-hot or soft), rowwise."""
    logq = softmax_logprobs(q.logits(s, c_prev))
    return np.sum(np.asarray(c_t, dtype=float) * logq, axis=-1)


def step_reward(D: Discriminator, q: PosteriorNet | None, s_t, a_t, c_t, c_prev, lambda1: float):
    """Per-step reward; vectorized over rows when given batches."""
    single = np.ndim(s_t) == 1
    d = np.clip(D.prob(s_t, a_t), D_CLAMP, 1.0 - D_CLAMP)
    r = -np.log(d)
    if q is not None and lambda1:
        r = r + lambda1 * posterior_logprob(q, np.atleast_2d(s_t), np.atleast_2d(c_t), np.atleast_2d(c_prev))
    return float(r[0]) if single else r


def absorbing_value(D: Discriminator, gamma: float) -> float:
    """Discounted value of staying in the absorbing state forever under reward -log D."""
    d = min(max(D.absorbing_prob(), D_CLAMP), 1.0 - D_CLAMP)
    return -math.log(d) / (1.0 - gamma)


def fit_length(codes, length):
    """Truncate, or pad by repeating the last code."""
    codes = np.asarray(codes)
    if len(codes) >= length:
        return codes[:length]
    return np.concatenate([codes, np.repeat(codes[-1:], length - len(codes), axis=0)])


def sample_latent_sequence(q: PosteriorNet, source: str, rng, dataset=None, length=None):
    """Codes for conditioning one rollout.

    ``expert-demo`` picks a random expert trajectory, runs the frozen encoder
    along it and returns (LatentSequence, trajectory); ``online-posterior``
    returns (None, None) because codes are produced during the rollout.
    """
    if source == "online-posterior":
        return None, None
    if source != "expert-demo":
        raise ValueError(f"unknown latent source {source!r}")
    if not dataset:
        raise ValueError("expert-demo latents need a nonempty expert dataset")
    traj = dataset[int(rng.integers(len(dataset)))]
    idx, probs = run_posterior(q, traj.states)
    if length is not None:
        idx, probs = fit_length(idx, length), fit_length(probs, length)
    return LatentSequence(one_hot(idx, q.k), idx), traj


@dataclass
class RolloutBatch:
    states: np.ndarray
    codes: np.ndarray
    prev_codes: np.ndarray
    actions: np.ndarray
    env_actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    rewards: np.ndarray
    ends: np.ndarray
    terminals: np.ndarray
    env_rewards: np.ndarray
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)
    episode_success: list = field(default_factory=list)
    terminal_value: float = 0.0

    def __len__(self):
        return len(self.states)


class _Episode:
    def __init__(self, seq):
        self.seq = seq
        self.rows = []
        self.done = False
        self.c_prev = None


def _episode_cap(env, cfg):
    return env.episode_cap


def collect_rollouts(pi: PolicyNet, q: PosteriorNet | None, D: Discriminator, env_id: str, cfg: TrainConfig,
                     rng, dataset=None, value: ValueNet | None = None, latent_source=None,
                     n_envs=None, deterministic=False) -> RolloutBatch:
    """Run lockstep episodes until at least ``cfg.batch_size`` steps are stored.

    New episodes stop starting once the target is met; running ones finish
    unless that would reach ``batch_size + episode_cap`` steps, in which case
    they are truncated (and bootstrapped).
    """
    source = latent_source or cfg.latent_source
    K = 0 if q is None else q.k
    make = lambda: make_env(env_id, obs_mode=cfg.obs_mode)
    probe = make()
    cap = probe.episode_cap
    E = n_envs or max(1, min(cap, math.ceil(cfg.batch_size / cap)))
    envs = [make() for _ in range(E)]
    episodes: list[_Episode | None] = [None] * E
    obs = [None] * E
    finished: list[_Episode] = []
    in_progress = lambda: sum(len(ep.rows) for ep in episodes if ep is not None)
    completed = 0

    def start(i):
        seq, traj = (None, None)
        if K:
            seq, traj = sample_latent_sequence(q, source, rng, dataset, length=cap + 1)
        if traj is not None:
            obs[i] = envs[i].reset_from(traj)
        else:
            obs[i] = envs[i].reset(rng)
        ep = _Episode(seq)
        ep.c_prev = np.zeros(K)
        episodes[i] = ep

    def code_for(ep, t, s):
        if not K:
            return np.zeros(0)
        if ep.seq is not None:
            return ep.seq.codes[t]
        logits = q.logits(s, ep.c_prev)
        return one_hot(int(np.argmax(logits)), K)

    for i in range(E):
        start(i)
    while any(ep is not None for ep in episodes):
        live = [i for i in range(E) if episodes[i] is not None]
        s = np.stack([obs[i] for i in live])
        c = np.stack([code_for(episodes[i], len(episodes[i].rows), obs[i]) for i in live]) if K else np.zeros((len(live), 0))
        out, _ = pi.forward(s, c)
        a = pi.mode(out) if deterministic else pi.sample(out, rng)
        logp = pi.log_prob(out, a)
        v = value(s, c) if value is not None else np.zeros(len(live))
        for j, i in enumerate(live):
            ep = episodes[i]
            a_j = a[j]
            nxt, r_env, done = envs[i].step(a_j)
            ep.rows.append((s[j], c[j], ep.c_prev.copy(), np.atleast_1d(a_j), envs[i].applied_action(a_j),
                            logp[j], v[j], r_env))
            ep.c_prev = c[j]
            obs[i] = nxt
            if done or len(ep.rows) >= cap:
                ep.done = done
                ep.next_obs = nxt
                finished.append(ep)
                completed += len(ep.rows)
                episodes[i] = None
                if completed + in_progress() < cfg.batch_size:
                    start(i)
        n_active = sum(ep is not None for ep in episodes)
        total = completed + in_progress()
        if n_active and total >= cfg.batch_size and total + n_active >= cfg.batch_size + cap:
            for i in range(E):
                if episodes[i] is not None:
                    ep = episodes[i]
                    ep.next_obs = obs[i]
                    finished.append(ep)
                    completed += len(ep.rows)
                    episodes[i] = None
    return _assemble(finished, pi, q, D, value, cfg, K)


def _assemble(finished, pi, q, D, value, cfg, K):
    cols = [[] for _ in range(8)]
    next_values, ends, terminals = [], [], []
    returns, lengths, success = [], [], []
    for ep in finished:
        n = len(ep.rows)
        for k, col in enumerate(zip(*ep.rows)):
            cols[k].extend(col)
        vals = [row[6] for row in ep.rows]
        if ep.done or value is None:
            boot = 0.0
        else:
            if K and ep.seq is not None:
                c_next = ep.seq.codes[min(n, len(ep.seq.codes) - 1)]
            elif K:
                c_next = one_hot(int(np.argmax(q.logits(ep.next_obs, ep.c_prev))), K)
            else:
                c_next = np.zeros(0)
            boot = float(value(ep.next_obs[None], c_next[None])[0])
        next_values.extend(vals[1:] + [boot])
        ends.extend([False] * (n - 1) + [True])
        terminals.extend([False] * (n - 1) + [bool(ep.done)])
        returns.append(float(sum(row[7] for row in ep.rows)))
        lengths.append(n)
        success.append(bool(ep.done))
    states, codes, prev, actions, env_actions, logp, values, env_r = (np.asarray(c) for c in cols)
    if K == 0:
        codes = np.zeros((len(states), 0))
        prev = np.zeros((len(states), 0))
    if pi.discrete:
        actions = actions.reshape(-1).astype(int)
        env_actions = env_actions.reshape(-1).astype(int)
    terminal_value = 0.0
    if D is None:
        rewards = env_r.astype(float)
    else:
        rewards = step_reward(D, q, states, env_actions, codes, prev, cfg.lambda1 if K else 0.0)
        if cfg.absorbing:
            terminal_value = absorbing_value(D, cfg.gamma)
    return RolloutBatch(states, codes, prev, actions, env_actions, logp.astype(float), values.astype(float),
                        np.asarray(next_values, dtype=float), np.asarray(rewards, dtype=float),
                        np.asarray(ends), np.asarray(terminals), env_r.astype(float),
                        returns, lengths, success, terminal_value)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float):
    """Advantages and value targets; episodes are stored contiguously."""
    n = len(batch)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nv = batch.terminal_value if batch.terminals[t] else batch.next_values[t]
        delta = batch.rewards[t] + gamma * nv - batch.values[t]
        if batch.ends[t]:
            running = 0.0
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + batch.values


def surrogate_grad(ratio, adv, clip):
    """d/d(log pi) of min(r A, clip(r) A) per sample; zero on the clipped side."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    clipped = ((adv > 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip))
    return np.where(clipped, 0.0, ratio * adv)


def surrogate_objective(ratio, adv, clip):
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


@dataclass
class ExpertPool:
    """Flattened expert (s, a) pairs plus encoder codes for the L2 term."""
    states: np.ndarray
    actions: np.ndarray
    codes: np.ndarray
    terminal: np.ndarray | None = None

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], q: PosteriorNet | None):
        states = np.concatenate([t.states for t in trajs])
        actions = np.concatenate([t.actions for t in trajs])
        if q is None:
            codes = np.zeros((len(states), 0))
        else:
            codes = np.concatenate([one_hot(run_posterior(q, t.states)[0], q.k) for t in trajs])
        terminal = np.concatenate([np.eye(1, len(t), len(t) - 1, dtype=bool)[0] & trajectory_terminated(t)
                                   for t in trajs])
        return cls(states, actions, codes, terminal)

    def sample(self, n, rng):
        idx = rng.integers(len(self.states), size=n)
        return self.states[idx], self.actions[idx], self.codes[idx]


def l2_bc_gradient(pi: PolicyNet, expert_states, expert_actions, expert_codes, weight: float) -> float:
    """Accumulate the gradient of weight * mean |mean_pi(s, c) - a_expert|^2.

    Returns the unweighted mean squared distance.
    """
    if pi.discrete:
        raise ValueError("the L2 action term needs a continuous action space")
    out, cache = pi.forward(expert_states, expert_codes)
    diff = out - np.asarray(expert_actions, dtype=float)
    mse = float(np.mean(np.sum(diff * diff, axis=-1)))
    if weight:
        pi.backward(pi.inputs(expert_states, expert_codes), 2.0 * weight * diff / len(diff), None, cache)
    return mse


def action_mse(pi: PolicyNet, pool: ExpertPool) -> float:
    out, _ = pi.forward(pool.states, pool.codes)
    return float(np.mean(np.sum((out - pool.actions) ** 2, axis=-1)))


def ppo_update(pi: PolicyNet, value: ValueNet, batch: RolloutBatch, cfg: TrainConfig, rng,
               opt_pi: AdamState, opt_v: AdamState, pool: ExpertPool | None = None) -> dict:
    adv, returns = compute_gae(batch, cfg.gamma, cfg.gae_lambda)
    if not np.all(np.isfinite(adv)) or not np.all(np.isfinite(returns)):
        return {"rejected": True}
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(batch)
    mb = max(1, n // cfg.ppo_minibatches)
    x_all = latent_input(batch.states, batch.codes, pi.k)
    stats = {"rejected": False, "clip_frac": 0.0, "entropy": 0.0, "value_loss": 0.0, "l2": 0.0}
    n_updates = 0
    for _ in range(cfg.ppo_epochs):
        perm = rng.permutation(n)
        for lo in range(0, n - mb + 1, mb):
            idx = perm[lo:lo + mb]
            x = x_all[idx]
            out, cache = forward_with_cache(pi.mlp, x)
            logp = pi.log_prob(out, batch.actions[idx])
            ratio = np.exp(logp - batch.logp[idx])
            g = surrogate_grad(ratio, adv[idx], cfg.ppo_clip) / len(idx)
            d_out, d_ls = pi.log_prob_grad(out, batch.actions[idx])
            h_out, h_ls = pi.entropy_grad(out)
            # minimize -(surrogate + lambda2 * entropy)
            grad_out = -(g[:, None] * d_out + cfg.lambda2 / len(idx) * h_out)
            grad_ls = None
            if d_ls is not None:
                grad_ls = -(g[:, None] * d_ls + cfg.lambda2 / len(idx) * h_ls)
            pi.backward(x, grad_out, grad_ls, cache)
            if pool is not None and cfg.l2_bc_weight > 0:
                es, ea, ec = pool.sample(len(idx), rng)
                stats["l2"] += l2_bc_gradient(pi, es, ea, ec, cfg.l2_bc_weight)
            adam_step(opt_pi, pi)

            xv = latent_input(batch.states[idx], batch.codes[idx], value.k)
            v, vcache = forward_with_cache(value.mlp, xv)
            err = v[:, 0] - returns[idx]
            mlp_backward(value.mlp, xv, (2.0 * err / len(idx))[:, None], vcache)
            adam_step(opt_v, value)

            stats["clip_frac"] += float(np.mean(np.abs(ratio - 1.0) > cfg.ppo_clip))
            stats["entropy"] += float(np.mean(pi.entropy(out)))
            stats["value_loss"] += float(np.mean(err ** 2))
            n_updates += 1
    for key in ("clip_frac", "entropy", "value_loss", "l2"):
        stats[key] /= max(1, n_updates)
    return stats


def update_discriminator(D: Discriminator, opt_d: AdamState, batch: RolloutBatch, expert: ExpertPool,
                         cfg: TrainConfig, rng) -> float:
    n = len(batch)
    mb = max(1, n // cfg.ppo_minibatches)
    losses = []
    for _ in range(cfg.disc_epochs):
        perm = rng.permutation(n)
        for lo in range(0, n - mb + 1, mb):
            idx = perm[lo:lo + mb]
            ei = rng.integers(len(expert.states), size=len(idx))
            n_pol = n_exp = 0
            if cfg.absorbing:
                # each terminal step is followed by one visit to the absorbing state
                n_pol = int(batch.terminals[idx].sum())
                n_exp = int(expert.terminal[ei].sum()) if expert.terminal is not None else 0
            losses.append(discriminator_loss(D, batch.states[idx], batch.env_actions[idx], expert.states[ei],
                                             expert.actions[ei], backward=True, policy_absorbing=n_pol,
                                             expert_absorbing=n_exp))
            adam_step(opt_d, D)
    return float(np.mean(losses))


@dataclass
class TrainResult:
    pi: PolicyNet
    value: ValueNet
    D: Discriminator
    curve: list[dict]


def train_digail(cfg: TrainConfig, expert_data: list[Trajectory], q: PosteriorNet | None,
                 pi: PolicyNet | None = None, rng=None, epochs: int | None = None,
                 callback=None) -> TrainResult:
    """Alternate discriminator steps and PPO on collected batches.

    ``q`` stays frozen. ``pi`` is the decoder from pre-training; it is copied
    when ``cfg.warm_start`` is set and otherwise only supplies the shape.
    """
    if not expert_data:
        raise ValueError("need expert demonstrations")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    first = expert_data[0]
    env = make_env(cfg.env_id, obs_mode=cfg.obs_mode)
    K = 0 if q is None else q.k
    state_dim, discrete, action_dim = env.state_dim, env.discrete, env.action_dim
    if first.states.shape[1] != state_dim:
        raise ValueError("expert states do not match the environment")
    if pi is not None and cfg.warm_start:
        pi = pi.copy()
    else:
        pi = PolicyNet.create(state_dim, K, action_dim, discrete, rng)
    value = ValueNet.create(state_dim, K, rng)
    D = Discriminator.create(state_dim, action_dim, discrete, rng)
    opt_pi = AdamState.for_params(pi, lr=cfg.lr)
    opt_v = AdamState.for_params(value, lr=cfg.lr)
    opt_d = AdamState.for_params(D, lr=cfg.lr)
    pool = ExpertPool.from_trajectories(expert_data, q)
    curve = []
    n_epochs = cfg.epochs if epochs is None else epochs
    for epoch in range(n_epochs):
        batch = collect_rollouts(pi, q, D, cfg.env_id, cfg, rng, expert_data, value)
        d_loss = update_discriminator(D, opt_d, batch, pool, cfg, rng)
        stats = ppo_update(pi, value, batch, cfg, rng, opt_pi, opt_v, pool if cfg.l2_bc_weight > 0 else None)
        row = {"epoch": epoch, "disc_loss": d_loss, "reward": float(np.mean(batch.rewards)),
               "env_return": float(np.mean(batch.episode_returns)),
               "ep_len": float(np.mean(batch.episode_lengths)),
               "success": float(np.mean(batch.episode_success)),
               "entropy": stats.get("entropy", float("nan")), "l2": stats.get("l2", 0.0),
               "rejected": stats["rejected"]}
        curve.append(row)
        if callback is not None:
            callback(row, pi, value, D)
        if epoch % 50 == 0:
            log.info("epoch %d d_loss %.3f reward %.3f return %.2f len %.1f", epoch, d_loss,
                     row["reward"], row["env_return"], row["ep_len"])
    return TrainResult(pi, value, D, curve)


def train_gail(cfg: TrainConfig, expert_data: list[Trajectory], rng=None, epochs=None,
               callback=None) -> TrainResult:
    """Latent-free baseline: same loop, no codes, no posterior reward."""
    return train_digail(cfg.with_(lambda1=0.0), expert_data, None, None, rng=rng, epochs=epochs,
                        callback=callback)


def train_ppo_expert(cfg: TrainConfig, rng=None, epochs: int | None = None, callback=None) -> PolicyNet:
    """Latent-free PPO on the environment's own reward, for regenerating experts."""
    if cfg.env_id == "circleworld":
        raise ValueError("circleworld has no task reward to train an expert on")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    env = make_env(cfg.env_id, obs_mode=cfg.obs_mode)
    pi = PolicyNet.create(env.state_dim, 0, env.action_dim, env.discrete, rng)
    value = ValueNet.create(env.state_dim, 0, rng)
    opt_pi = AdamState.for_params(pi, lr=cfg.lr)
    opt_v = AdamState.for_params(value, lr=cfg.lr)
    for epoch in range(cfg.epochs if epochs is None else epochs):
        batch = collect_rollouts(pi, None, None, cfg.env_id, cfg, rng, value=value)
        ppo_update(pi, value, batch, cfg, rng, opt_pi, opt_v)
        if callback is not None:
            callback(epoch, float(np.mean(batch.episode_returns)))
    return pi


def policy_demonstrations(pi: PolicyNet, env_id: str, n: int, rng, obs_mode="onehot") -> list[Trajectory]:
    """Deterministic rollouts of a latent-free policy, stored like scripted demos."""
    env = make_env(env_id, obs_mode=obs_mode)
    out = []
    while len(out) < n:
        obs = env.reset(rng)
        states, actions, rewards = [], [], []
        for _ in range(env.episode_cap):
            out_, _ = pi.forward(obs[None], None)
            a = pi.mode(out_)[0]
            states.append(obs)
            actions.append(env.applied_action(a) if not env.discrete else a)
            obs, r, done = env.step(a)
            rewards.append(r)
            if done:
                break
        if len(states) >= 2:
            out.append(Trajectory(env_id, states, np.asarray(actions), rewards=rewards))
    return out
