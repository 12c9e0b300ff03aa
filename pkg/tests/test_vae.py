import math

import numpy as np
import pytest

from digail.config import default_config
from digail.envs import Trajectory, circleworld_expert
from digail.networks import PolicyNet, PosteriorNet
from digail.nn import MlpParams, one_hot
from digail.vae import (decode_logprob, kl_weight, make_batch, pretrain_vae, run_posterior, smoothing_penalty,
                        vae_batch_loss, vae_loss)


def tiny(rng, discrete=False, hidden=(6,)):
    q = PosteriorNet.create(2, 2, rng, hidden=hidden)
    pi = PolicyNet.create(2, 2, 3 if discrete else 1, discrete, rng, hidden=hidden, init_log_std=-0.3)
    for net in (q, pi):
        for b in net.mlp.biases:
            b[...] = rng.normal(0, 0.5, b.shape)
        net.mlp.weights[-1][...] = rng.normal(0, 0.7, net.mlp.weights[-1].shape)
    return q, pi


def tiny_traj(rng, discrete=False):
    s = rng.normal(size=(3, 2))
    a = rng.integers(0, 3, 3) if discrete else rng.normal(size=(3, 1))
    return Trajectory("toy", s, a)


def fd_check(q, pi, tr, lambda_s, seed=5, eps=1e-6):
    f = lambda: vae_loss(q, pi, tr, 0.8, lambda_s, np.random.default_rng(seed))[0]
    for net in (q, pi):
        for _, g in net.parameters():
            g[...] = 0.0
    vae_loss(q, pi, tr, 0.8, lambda_s, np.random.default_rng(seed), backward=True)
    analytic, numeric = [], []
    for net in (q, pi):
        for p, g in net.parameters():
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + eps
                up = f()
                p[i] = old - eps
                dn = f()
                p[i] = old
                numeric.append((up - dn) / (2 * eps))
                analytic.append(g[i])
    analytic, numeric = np.array(analytic), np.array(numeric)
    return np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)


@pytest.mark.parametrize("discrete", [False, True])
@pytest.mark.parametrize("lambda_s", [0.0, 0.7])
def test_end_to_end_gradient_matches_fd(discrete, lambda_s):
    rng = np.random.default_rng(11)
    q, pi = tiny(rng, discrete)
    err = fd_check(q, pi, tiny_traj(rng, discrete), lambda_s)
    assert err <= 1e-3


def test_smoothing_examples():
    assert smoothing_penalty(np.tile([0.0, 1.0], (5, 1))) == 0.0
    assert smoothing_penalty([[1, 0], [0, 1], [1, 0]]) == 2.0
    expected = 1 - 0.32 / math.hypot(0.8, 0.2)
    assert smoothing_penalty([[0.8, 0.2], [0.2, 0.8]]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.612, abs=1e-3)
    assert smoothing_penalty([[0, 0], [0, 0]]) == 1.0
    with pytest.raises(ValueError):
        smoothing_penalty([[1, 0]])


def test_zero_networks_give_t_log_4():
    rng = np.random.default_rng(0)
    q = PosteriorNet(MlpParams.zeros([3 + 2, 4, 2]), 3, 2)
    pi = PolicyNet(MlpParams.zeros([3 + 2, 4, 4]), 3, 2, True, 4)
    tr = Trajectory("toy", rng.normal(size=(10, 3)), rng.integers(0, 4, 10))
    loss, terms = vae_loss(q, pi, tr, 1.0, 0.0, rng)
    assert loss == pytest.approx(10 * math.log(4), abs=1e-12)
    assert terms.kl == pytest.approx(0.0, abs=1e-12)


def test_breakdown_sums_and_nonnegative():
    rng = np.random.default_rng(1)
    q, pi = tiny(rng)
    for _ in range(10):
        loss, t = vae_loss(q, pi, tiny_traj(rng), 0.5, 0.9, rng)
        assert loss == pytest.approx(t.nll + t.kl + 0.9 * t.smooth, abs=1e-12)
        assert t.kl >= 0 and t.smooth >= 0


def test_decode_logprob_examples():
    pi = PolicyNet(MlpParams.zeros([3, 4, 4]), 1, 2, True, 4)
    assert decode_logprob(pi, [0.3], [1, 0], 2) == pytest.approx(math.log(0.25))
    pg = PolicyNet(MlpParams.zeros([3, 4, 2]), 1, 2, False, 2)
    assert decode_logprob(pg, [0.3], [1, 0], [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi))
    pg.log_std[...] = [0.2, -0.4]
    a = np.array([0.5, -1.0])
    sd = np.exp(pg.log_std)
    ref = float(np.sum(-0.5 * (a / sd) ** 2 - np.log(sd) - 0.5 * math.log(2 * math.pi)))
    assert decode_logprob(pg, [0.3], [1, 0], a) == pytest.approx(ref, abs=1e-12)


def test_first_step_sees_zero_code():
    rng = np.random.default_rng(2)
    q, _ = tiny(rng)
    s = rng.normal(size=(4, 2))
    idx, probs = run_posterior(q, s)
    ref = np.exp(q.logits(s[0], np.zeros(2)))
    np.testing.assert_allclose(probs[0], ref / ref.sum(), atol=1e-12)
    ref1 = np.exp(q.logits(s[1], one_hot(idx[0], 2)))
    np.testing.assert_allclose(probs[1], ref1 / ref1.sum(), atol=1e-12)


class FixedRng:
    """Generator stand-in returning preset uniforms so the Gumbel noise can be permuted."""

    def __init__(self, u):
        self.u = u

    def random(self, shape):
        assert tuple(shape) == self.u.shape
        return self.u


def test_batch_order_invariance():
    rng = np.random.default_rng(3)
    q, pi = tiny(rng)
    trajs = [Trajectory("toy", rng.normal(size=(n, 2)), rng.normal(size=(n, 1))) for n in (3, 5, 4)]
    u = np.random.default_rng(0).random((3, 5, 2))
    perm = [2, 0, 1]
    b1 = vae_batch_loss(q, pi, make_batch(trajs), 1.0, 0.5, FixedRng(u))
    b2 = vae_batch_loss(q, pi, make_batch([trajs[i] for i in perm]), 1.0, 0.5, FixedRng(u[perm]))
    assert b2.total == pytest.approx(b1.total, abs=1e-12)
    np.testing.assert_allclose(b2.codes, b1.codes[perm], atol=1e-12)


def test_constant_action_toy_halves_loss():
    rng = np.random.default_rng(4)
    trajs = [Trajectory("toy", rng.normal(size=(10, 2)), np.full((10, 1), 0.7)) for _ in range(8)]
    cfg = default_config("circleworld", K=2, vae_batch_size=8, lambda_s=0.0, vae_lr=3e-3)
    res = pretrain_vae(trajs, cfg, rng, epochs=200)
    assert res.curve[-1]["total"] < 0.5 * res.curve[0]["total"]


def test_resume_continues_epochs_and_rejects_empty():
    trajs = [circleworld_expert(1.0, 100)]
    cfg = default_config("circleworld")
    rng = np.random.default_rng(5)
    first = pretrain_vae(trajs, cfg, rng, epochs=3)
    again = pretrain_vae(trajs, cfg, rng, init=(first.q, first.pi), start_epoch=3, epochs=2)
    assert [r["epoch"] for r in first.curve + again.curve] == [0, 1, 2, 3, 4]
    assert again.curve[0]["tau"] == pytest.approx(5.0 * math.exp(-3e-3 * 3))
    with pytest.raises(ValueError):
        pretrain_vae([], cfg)


def test_kl_warmup_ramp():
    assert kl_weight(0, 0) == 1.0
    assert kl_weight(10, 5) == 0.5 and kl_weight(10, 20) == 1.0
