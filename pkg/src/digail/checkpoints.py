"""Save and restore encoder/policy bundles on top of the binary record format."""

from __future__ import annotations

import numpy as np

from .networks import Discriminator, PolicyNet, PosteriorNet, ValueNet
from .nn import load_checkpoint, save_checkpoint


def _policy_record(pi: PolicyNet):
    extra = [pi.state_dim, pi.k, pi.action_dim, float(pi.discrete)]
    if not pi.discrete:
        extra += list(pi.log_std)
    return pi.mlp, np.array(extra, dtype=float)


def _policy_from(params, extra) -> PolicyNet:
    state_dim, k, action_dim, discrete = (int(v) for v in extra[:4])
    log_std = None if discrete else extra[4:4 + action_dim].copy()
    return PolicyNet(params, state_dim, k, bool(discrete), action_dim, log_std)


def save_vae(path, q: PosteriorNet, pi: PolicyNet, next_epoch: int):
    save_checkpoint(path, {"q": (q.mlp, np.array([q.state_dim, q.k, next_epoch], dtype=float)),
                           "pi": _policy_record(pi)})


def load_vae(path):
    """Returns (q, pi, next_epoch)."""
    recs = load_checkpoint(path)
    if "q" not in recs or "pi" not in recs:
        raise ValueError(f"{path}: not a VAE checkpoint")
    qp, qx = recs["q"]
    q = PosteriorNet(qp, int(qx[0]), int(qx[1]))
    return q, _policy_from(*recs["pi"]), int(qx[2])


def save_policy(path, pi: PolicyNet, value: ValueNet | None = None, D: Discriminator | None = None):
    nets = {"pi": _policy_record(pi)}
    if value is not None:
        nets["value"] = (value.mlp, np.array([value.state_dim, value.k], dtype=float))
    if D is not None:
        nets["disc"] = (D.mlp, np.array([D.state_dim, D.action_dim, float(D.discrete)], dtype=float))
    save_checkpoint(path, nets)


def load_policy(path):
    """Returns (pi, value or None, discriminator or None)."""
    recs = load_checkpoint(path)
    if "pi" not in recs:
        raise ValueError(f"{path}: not a policy checkpoint")
    pi = _policy_from(*recs["pi"])
    value = D = None
    if "value" in recs:
        p, x = recs["value"]
        value = ValueNet(p, int(x[0]), int(x[1]))
    if "disc" in recs:
        p, x = recs["disc"]
        D = Discriminator(p, int(x[0]), int(x[1]), bool(x[2]))
    return pi, value, D
