"""Categorical-latent VAE over expert demonstrations.

The encoder q(c_t | s_t, c_{t-1}) emits Gumbel-softmax codes, the decoder
pi(a_t | s_t, c_t) reconstructs the expert action. The loss per trajectory is

    sum_t -log pi(a_t | s_t, c_t) + sum_t KL(q(. | s_t, c_{t-1}) || uniform)
        + lambda_s * sum_t [1 - c_{t-1} . c_t / max(|c_{t-1}|, |c_t|)]

Gradients are propagated through the relaxed samples, including the path
from c_{t-1} into the next encoder step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .envs import Trajectory
from .networks import PolicyNet, PosteriorNet
from .nn import (AdamState, adam_step, entropy_logit_grad, forward_with_cache, gumbel_softmax_backward,
                 gumbel_softmax_sample, harden, mlp_backward, sample_gumbel, softmax, softmax_logprobs,
                 temperature)

log = logging.getLogger(__name__)


@dataclass
class Batch:
    states: np.ndarray   # (B, T, state_dim)
    actions: np.ndarray  # (B, T) ints or (B, T, action_dim)
    mask: np.ndarray     # (B, T), 1 on real steps

    @property
    def size(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.states.shape[1]


def make_batch(trajs: list[Trajectory]) -> Batch:
    B, T = len(trajs), max(len(t) for t in trajs)
    ds = trajs[0].states.shape[1]
    states = np.zeros((B, T, ds))
    mask = np.zeros((B, T))
    if trajs[0].discrete:
        actions = np.zeros((B, T), dtype=int)
    else:
        actions = np.zeros((B, T, trajs[0].actions.shape[1]))
    for i, tr in enumerate(trajs):
        n = len(tr)
        states[i, :n] = tr.states
        actions[i, :n] = tr.actions
        mask[i, :n] = 1.0
    return Batch(states, actions, mask)


def encode(q: PosteriorNet, s_t, c_prev, tau, rng, noise=None):
    """One encoder step: (relaxed sample, logits)."""
    logits = q.logits(s_t, c_prev)
    return gumbel_softmax_sample(logits, tau, rng, noise=noise), logits


def decode_logprob(pi: PolicyNet, s_t, c_t, a_t) -> float:
    out, _ = pi.forward(s_t, c_t)
    return float(pi.log_prob(out, a_t))


def _smooth_terms(prev, cur):
    """Per-row smoothing term and its gradients with respect to both codes."""
    n_prev = np.linalg.norm(prev, axis=-1)
    n_cur = np.linalg.norm(cur, axis=-1)
    m = np.maximum(n_prev, n_cur)
    dot = np.sum(prev * cur, axis=-1)
    safe = np.where(m > 0, m, 1.0)
    term = np.where(m > 0, 1.0 - dot / safe, 1.0)
    # d/dx of -dot/m with m the larger norm
    g_prev = -cur / safe[:, None]
    g_cur = -prev / safe[:, None]
    coef = (dot / safe ** 2)[:, None]
    prev_max = (n_prev >= n_cur)[:, None]
    g_prev = g_prev + np.where(prev_max, coef * prev / np.where(n_prev > 0, n_prev, 1.0)[:, None], 0.0)
    g_cur = g_cur + np.where(~prev_max, coef * cur / np.where(n_cur > 0, n_cur, 1.0)[:, None], 0.0)
    dead = (m <= 0)[:, None]
    return term, np.where(dead, 0.0, g_prev), np.where(dead, 0.0, g_cur)


def smoothing_penalty(codes) -> float:
    codes = np.asarray(codes, dtype=float)
    if len(codes) < 2:
        raise ValueError("smoothing needs at least two codes")
    term, _, _ = _smooth_terms(codes[:-1], codes[1:])
    return float(np.sum(term))


@dataclass
class LatentSequence:
    codes: np.ndarray                      # (T, K) simplex rows
    hardened: np.ndarray | None = None     # (T,) category indices

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=float)
        if self.hardened is None:
            self.hardened = np.argmax(self.codes, axis=-1)

    def __len__(self):
        return len(self.codes)

    @property
    def switches(self) -> int:
        return int(np.sum(self.hardened[1:] != self.hardened[:-1]))


@dataclass
class LossTerms:
    nll: float
    kl: float
    smooth: float
    total: float
    codes: np.ndarray = field(repr=False, default=None)


def vae_batch_loss(q: PosteriorNet, pi: PolicyNet, batch: Batch, tau: float, lambda_s: float,
                   rng: np.random.Generator, backward: bool = False,
                   straight_through: bool = False, kl_weight: float = 1.0) -> LossTerms:
    """Mean over the batch of per-trajectory VAE losses.

    With ``backward=True`` the gradients are accumulated into both networks.
    ``kl_weight`` scales the KL term in the total and in the gradient.
    """
    B, T, ds = batch.states.shape
    K = q.k
    noise = sample_gumbel((B, T, K), rng)
    log_k = math.log(K)
    c_prev = np.zeros((B, K))
    steps = []
    nll = kl = smooth = 0.0
    codes = np.zeros((B, T, K))
    for t in range(T):
        m = batch.mask[:, t]
        x_enc = np.concatenate([batch.states[:, t], c_prev], axis=1)
        logits, enc_cache = forward_with_cache(q.mlp, x_enc)
        y = softmax((logits + noise[:, t]) / tau)
        y_in = harden(y) if straight_through else y
        x_dec = np.concatenate([batch.states[:, t], y_in], axis=1)
        out, dec_cache = forward_with_cache(pi.mlp, x_dec)
        a_t = batch.actions[:, t]
        nll -= float(np.sum(pi.log_prob(out, a_t) * m))
        logq = softmax_logprobs(logits)
        kl += float(np.sum((np.sum(np.exp(logq) * logq, axis=1) + log_k) * m))
        pair = None
        if t > 0 and lambda_s:
            pm = m * batch.mask[:, t - 1]
            term, g_prev, g_cur = _smooth_terms(steps[-1]["y"], y)
            smooth += float(np.sum(term * pm))
            pair = (pm, g_prev, g_cur)
        codes[:, t] = y
        steps.append(dict(x_enc=x_enc, enc_cache=enc_cache, y=y, x_dec=x_dec, dec_cache=dec_cache,
                          out=out, a=a_t, logq=logq, m=m, pair=pair))
        c_prev = y_in
    total = (nll + kl_weight * kl + lambda_s * smooth) / B
    terms = LossTerms(nll / B, kl / B, smooth / B, total, codes)
    if backward:
        _backward(q, pi, steps, tau, lambda_s, B, ds, kl_weight)
    return terms


def _backward(q, pi, steps, tau, lambda_s, B, ds, kl_weight):
    K = q.k
    carry = np.zeros((B, K))  # d loss / d y_t arriving from step t+1
    for t in range(len(steps) - 1, -1, -1):
        st = steps[t]
        w = st["m"] / B
        d_out, d_ls = pi.log_prob_grad(st["out"], st["a"])
        d_out = -d_out * w[:, None]
        if d_ls is not None:
            d_ls = -d_ls * w[:, None]
        dx_dec = pi.backward(st["x_dec"], d_out, d_ls, st["dec_cache"])
        dy = dx_dec[:, ds:] + carry
        carry = np.zeros((B, K))
        if st["pair"] is not None:
            pm, g_prev, g_cur = st["pair"]
            scale = (lambda_s * pm / B)[:, None]
            dy = dy + scale * g_cur
            carry += scale * g_prev
        d_logits = gumbel_softmax_backward(st["y"], tau, dy)
        d_logits += entropy_logit_grad(st["logq"]) * (kl_weight * w)[:, None]
        dx_enc = mlp_backward(q.mlp, st["x_enc"], d_logits, st["enc_cache"])
        if t > 0:
            carry += dx_enc[:, ds:]


def vae_loss(q, pi, trajectory: Trajectory, tau, lambda_s, rng, backward=False,
             straight_through=False, kl_weight=1.0) -> tuple[float, LossTerms]:
    terms = vae_batch_loss(q, pi, make_batch([trajectory]), tau, lambda_s, rng, backward,
                           straight_through, kl_weight)
    return terms.total, terms


@dataclass
class VaeResult:
    q: PosteriorNet
    pi: PolicyNet
    curve: list[dict]


class _Joint:
    """Adam views the encoder and decoder as one parameter bundle."""

    def __init__(self, *nets):
        self.nets = nets

    def parameters(self):
        return [p for n in self.nets for p in n.parameters()]


def build_vae(state_dim, action_dim, discrete, cfg: TrainConfig, rng):
    q = PosteriorNet.create(state_dim, cfg.K, rng)
    pi = PolicyNet.create(state_dim, cfg.K, action_dim, discrete, rng)
    return q, pi


def kl_weight(warmup: int, epoch: int) -> float:
    """Linear ramp of the KL weight from 0 to 1 over ``warmup`` epochs."""
    if warmup <= 0:
        return 1.0
    return min(1.0, epoch / warmup)


def pretrain_vae(dataset: list[Trajectory], cfg: TrainConfig, rng=None, init=None,
                 start_epoch: int = 0, epochs: int | None = None, action_dim=None,
                 callback=None) -> VaeResult:
    """Fit encoder and decoder; temperature is annealed once per epoch.

    ``init`` resumes from an existing (q, pi) pair, with epoch numbering
    continuing from ``start_epoch``.
    """
    if not dataset:
        raise ValueError("cannot pre-train on an empty dataset")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    first = dataset[0]
    discrete = first.discrete
    state_dim = first.states.shape[1]
    if action_dim is None:
        action_dim = 4 if discrete else first.actions.shape[1]
    q, pi = init if init is not None else build_vae(state_dim, action_dim, discrete, cfg, rng)
    opt = AdamState.for_params(_Joint(q, pi), lr=cfg.vae_lr)
    n_epochs = cfg.vae_epochs if epochs is None else epochs
    curve = []
    order = np.arange(len(dataset))
    for epoch in range(start_epoch, start_epoch + n_epochs):
        tau = temperature(cfg.schedule, epoch)
        beta = kl_weight(cfg.kl_warmup, epoch)
        rng.shuffle(order)
        sums = np.zeros(4)
        for lo in range(0, len(order), cfg.vae_batch_size):
            idx = order[lo:lo + cfg.vae_batch_size]
            terms = vae_batch_loss(q, pi, make_batch([dataset[i] for i in idx]), tau, cfg.lambda_s,
                                   rng, backward=True, straight_through=cfg.straight_through,
                                   kl_weight=beta)
            adam_step(opt, _Joint(q, pi))
            sums += len(idx) * np.array([terms.nll, terms.kl, terms.smooth, terms.total])
        row = dict(zip(("nll", "kl", "smooth", "total"), sums / len(dataset)))
        row = {"epoch": epoch, "tau": tau, "kl_weight": beta, **row}
        curve.append(row)
        if callback is not None:
            callback(row, q, pi)
        if epoch % 100 == 0:
            log.info("vae epoch %d tau %.3f total %.4f nll %.4f kl %.4f smooth %.4f",
                     epoch, tau, row["total"], row["nll"], row["kl"], row["smooth"])
    return VaeResult(q, pi, curve)


def run_posterior(q: PosteriorNet, states) -> tuple[np.ndarray, np.ndarray]:
    """Run the frozen encoder greedily: hardened codes feed the next step.

    Returns (indices (T,), softmax probabilities (T, K)).
    """
    states = np.asarray(states, dtype=float)
    c_prev = np.zeros(q.k)
    idx, probs = [], []
    for s in states:
        p = softmax(q.logits(s, c_prev))
        k = int(np.argmax(p))
        idx.append(k)
        probs.append(p)
        c_prev = np.zeros(q.k)
        c_prev[k] = 1.0
    return np.array(idx), np.array(probs)
