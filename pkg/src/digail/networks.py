"""Encoder, policy, discriminator and value networks built on :mod:`digail.nn`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import (MlpParams, forward_with_cache, mlp_backward, mlp_forward, one_hot,
                 softmax_logprobs)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HIDDEN = (64, 64)
# unit gain gives the fresh encoder state-dependent codes with memory through c_{t-1}
ENCODER_OUTPUT_GAIN = 1.0
LOG_2PI = math.log(2.0 * math.pi)


def latent_input(s, c, k):
    s = np.asarray(s, dtype=float)
    if k == 0:
        return s
    c = np.zeros(s.shape[:-1] + (k,)) if c is None else np.asarray(c, dtype=float)
    return np.concatenate([s, c], axis=-1)


@dataclass
class PosteriorNet:
    """q(c_t | s_t, c_{t-1}); outputs K logits."""
    mlp: MlpParams
    state_dim: int
    k: int

    @classmethod
    def create(cls, state_dim, k, rng, hidden=HIDDEN, output_gain=ENCODER_OUTPUT_GAIN):
        if k < 2:
            raise ValueError("posterior needs at least two categories")
        return cls(MlpParams.init([state_dim + k, *hidden, k], rng, output_gain=output_gain), state_dim, k)

    def logits(self, s, c_prev):
        return mlp_forward(self.mlp, latent_input(s, c_prev, self.k))

    def parameters(self):
        return self.mlp.parameters()


@dataclass
class PolicyNet:
    """pi(a | s, c): categorical logits or a diagonal Gaussian with free log-std.

    ``k == 0`` gives a latent-free policy (plain GAIL).
    """
    mlp: MlpParams
    state_dim: int
    k: int
    discrete: bool
    action_dim: int
    log_std: np.ndarray = field(default=None)
    grad_log_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.discrete:
            if self.log_std is None:
                self.log_std = np.zeros(self.action_dim)
            self.log_std = np.asarray(self.log_std, dtype=float)
            self.grad_log_std = np.zeros_like(self.log_std)

    @classmethod
    def create(cls, state_dim, k, action_dim, discrete, rng, hidden=HIDDEN, init_log_std=0.0):
        mlp = MlpParams.init([state_dim + k, *hidden, action_dim], rng)
        log_std = None if discrete else np.full(action_dim, float(init_log_std))
        return cls(mlp, state_dim, k, discrete, action_dim, log_std)

    def parameters(self):
        pairs = self.mlp.parameters()
        if not self.discrete:
            pairs.append((self.log_std, self.grad_log_std))
        return pairs

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.mlp.copy(), self.state_dim, self.k, self.discrete, self.action_dim,
                         None if self.discrete else self.log_std.copy())

    def inputs(self, s, c):
        return latent_input(s, c, self.k)

    def forward(self, s, c):
        return forward_with_cache(self.mlp, self.inputs(s, c))

    def clamped_log_std(self):
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def log_prob(self, out, a):
        """Log-likelihood of actions ``a`` under network output ``out`` (rowwise)."""
        if self.discrete:
            logp = softmax_logprobs(out)
            a = np.asarray(a, dtype=int).reshape(logp.shape[:-1])
            return np.take_along_axis(logp, a[..., None], axis=-1)[..., 0]
        ls = self.clamped_log_std()
        z = (np.asarray(a, dtype=float) - out) * np.exp(-ls)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(ls) - 0.5 * self.action_dim * LOG_2PI

    def log_prob_grad(self, out, a):
        """d log pi / d out and d log pi / d log_std, per row."""
        if self.discrete:
            logp = softmax_logprobs(out)
            a = np.asarray(a, dtype=int).reshape(logp.shape[:-1])
            return one_hot(a, self.action_dim) - np.exp(logp), None
        ls = self.clamped_log_std()
        inv_var = np.exp(-2.0 * ls)
        diff = np.asarray(a, dtype=float) - out
        d_ls = (diff * diff * inv_var - 1.0) * self._log_std_live()
        return diff * inv_var, d_ls

    def entropy(self, out):
        if self.discrete:
            logp = softmax_logprobs(out)
            return -np.sum(np.exp(logp) * logp, axis=-1)
        h = np.sum(self.clamped_log_std()) + 0.5 * self.action_dim * (1.0 + LOG_2PI)
        return np.full(np.shape(out)[:-1], h)

    def entropy_grad(self, out):
        """d H / d out (discrete) and d H / d log_std (continuous), per row."""
        if self.discrete:
            logp = softmax_logprobs(out)
            p = np.exp(logp)
            h = -np.sum(p * logp, axis=-1, keepdims=True)
            return -p * (logp + h), None
        d_ls = np.broadcast_to(self._log_std_live(), np.shape(out)).copy()
        return np.zeros_like(out), d_ls

    def _log_std_live(self):
        return ((self.log_std > LOG_STD_MIN) & (self.log_std < LOG_STD_MAX)).astype(float)

    def backward(self, x, d_out, d_log_std, cache):
        """Push gradients of a scalar objective into the grad slots."""
        if d_log_std is not None and not self.discrete:
            self.grad_log_std += np.sum(np.atleast_2d(d_log_std), axis=0)
        return mlp_backward(self.mlp, x, d_out, cache)

    def mode(self, out):
        if self.discrete:
            return np.argmax(out, axis=-1)
        return out

    def sample(self, out, rng):
        if self.discrete:
            p = np.exp(softmax_logprobs(out))
            u = rng.random(p.shape[:-1] + (1,))
            idx = (np.cumsum(p, axis=-1) < u).sum(axis=-1)
            return np.minimum(idx, self.action_dim - 1)
        return out + np.exp(self.clamped_log_std()) * rng.standard_normal(np.shape(out))

    def act(self, s, c, rng=None, deterministic=True):
        out, _ = self.forward(s, c)
        if deterministic or rng is None:
            return self.mode(out)
        return self.sample(out, rng)


@dataclass
class Discriminator:
    """D(s, a) in (0, 1); D -> 1 marks policy samples."""
    mlp: MlpParams
    state_dim: int
    action_dim: int
    discrete: bool

    @classmethod
    def create(cls, state_dim, action_dim, discrete, rng, hidden=HIDDEN):
        return cls(MlpParams.init([state_dim + action_dim, *hidden, 1], rng, output_gain=1.0),
                   state_dim, action_dim, discrete)

    def inputs(self, s, a):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if self.discrete:
            a = one_hot(np.asarray(a, dtype=int).reshape(-1), self.action_dim)
        else:
            a = np.asarray(a, dtype=float).reshape(s.shape[0], self.action_dim)
        return np.concatenate([s, a], axis=-1)

    def logits(self, s, a):
        return mlp_forward(self.mlp, self.inputs(s, a))[:, 0]

    def prob(self, s, a):
        return sigmoid(self.logits(s, a))

    def absorbing_inputs(self, n=1):
        # the all-zero row stands for the absorbing state after termination;
        # no real (s, a) encodes to it
        return np.zeros((n, self.state_dim + self.action_dim))

    def absorbing_prob(self) -> float:
        return float(sigmoid(mlp_forward(self.mlp, self.absorbing_inputs())[0, 0]))

    def parameters(self):
        return self.mlp.parameters()


@dataclass
class ValueNet:
    mlp: MlpParams
    state_dim: int
    k: int

    @classmethod
    def create(cls, state_dim, k, rng, hidden=HIDDEN):
        return cls(MlpParams.init([state_dim + k, *hidden, 1], rng, output_gain=1.0), state_dim, k)

    def __call__(self, s, c):
        return mlp_forward(self.mlp, latent_input(s, c, self.k))[..., 0]

    def parameters(self):
        return self.mlp.parameters()


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
