"""Exact information quantities on short discrete (trajectory, code) chains.

A chain interleaves tau_1, c_1, tau_2, c_2, ..., tau_T, c_T where

    tau_t ~ p(tau_t | tau_{1:t-1}, c_{1:t-1})
    c_t   ~ p(c_t | c_{1:t-1}, tau_{1:t})

Everything is computed by enumerating the full joint, in nats. Joint axes are
ordered (tau_1..tau_T, c_1..c_T); table ``t`` (0-based) stores its history
axes in the same order followed by the outcome axis.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import OutOfSupportError

NORM_TOL = 1e-12


def _tau_axes(t, T):
    return list(range(t)) + [T + i for i in range(t)] + [t]


def _c_axes(t, T):
    return list(range(t + 1)) + [T + i for i in range(t)] + [T + t]


def _tau_shape(t, n_tau, n_c):
    return (n_tau,) * t + (n_c,) * t + (n_tau,)


def _c_shape(t, n_tau, n_c):
    return (n_tau,) * (t + 1) + (n_c,) * t + (n_c,)


def _check_tables(tables, shape_fn, n_tau, n_c, what):
    for t, tbl in enumerate(tables):
        if tbl.shape != shape_fn(t, n_tau, n_c):
            raise ValueError(f"{what} table {t + 1} has shape {tbl.shape}")
        if np.any(tbl < 0):
            raise ValueError(f"{what} table {t + 1} has negative entries")
        if np.max(np.abs(tbl.sum(axis=-1) - 1.0)) > NORM_TOL:
            raise ValueError(f"{what} table {t + 1} is not normalized")


@dataclass
class DiscreteChainModel:
    T: int
    n_tau: int
    n_c: int
    tau_tables: list[np.ndarray]
    c_tables: list[np.ndarray]

    def __post_init__(self):
        if not (1 <= self.T <= 4 and 1 <= self.n_tau <= 3 and 1 <= self.n_c <= 3):
            raise ValueError("chain too large to enumerate (T <= 4, alphabets <= 3)")
        self.tau_tables = [np.asarray(t, dtype=float) for t in self.tau_tables]
        self.c_tables = [np.asarray(t, dtype=float) for t in self.c_tables]
        if len(self.tau_tables) != self.T or len(self.c_tables) != self.T:
            raise ValueError("need one tau table and one c table per step")
        _check_tables(self.tau_tables, _tau_shape, self.n_tau, self.n_c, "tau")
        _check_tables(self.c_tables, _c_shape, self.n_tau, self.n_c, "c")

    @property
    def ndim(self):
        return 2 * self.T

    def joint(self) -> np.ndarray:
        shape = (self.n_tau,) * self.T + (self.n_c,) * self.T
        p = np.ones(shape)
        for t in range(self.T):
            p = p * _expand(self.tau_tables[t], _tau_axes(t, self.T), self.ndim)
            p = p * _expand(self.c_tables[t], _c_axes(t, self.T), self.ndim)
        return p

    def marginal(self, axes, joint=None):
        joint = self.joint() if joint is None else joint
        drop = tuple(a for a in range(self.ndim) if a not in set(axes))
        return joint.sum(axis=drop)


@dataclass
class ApproximatePosterior:
    """Tables q(c_t | c_{1:t-1}, tau_{1:t}) laid out like the model's c tables."""
    tables: list[np.ndarray]
    unreached: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.tables = [np.asarray(t, dtype=float) for t in self.tables]
        for t, tbl in enumerate(self.tables):
            if np.max(np.abs(tbl.sum(axis=-1) - 1.0)) > NORM_TOL:
                raise ValueError(f"posterior table {t + 1} is not normalized")


def _expand(table, axes, ndim):
    order = np.argsort(axes)
    shape = [1] * ndim
    for ax, size in zip(np.asarray(axes)[order], np.asarray(table.shape)[order]):
        shape[ax] = size
    return table.transpose(order).reshape(shape)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _tau_idx(T):
    return list(range(T))


def _c_idx(T):
    return [T + i for i in range(T)]


def exact_mutual_information(model: DiscreteChainModel) -> float:
    """I(tau; c) = sum p(tau, c) log p(tau, c) / (p(tau) p(c))."""
    joint = model.joint()
    p_tau = model.marginal(_tau_idx(model.T), joint)
    p_c = model.marginal(_c_idx(model.T), joint)
    outer = p_tau.reshape(p_tau.shape + (1,) * model.T) * p_c.reshape((1,) * model.T + p_c.shape)
    live = joint > 0
    return float(np.sum(joint[live] * (np.log(joint[live]) - np.log(outer[live]))))


def causally_conditioned_entropy(model: DiscreteChainModel, joint=None) -> float:
    """H(c || tau) = sum_t H(c_t | c_{1:t-1}, tau_{1:t})."""
    joint = model.joint() if joint is None else joint
    total = 0.0
    for t in range(model.T):
        hist = list(range(t + 1)) + [model.T + i for i in range(t)]
        total += entropy(model.marginal(hist + [model.T + t], joint)) - entropy(model.marginal(hist, joint))
    return total


def code_entropy(model: DiscreteChainModel, joint=None) -> float:
    return entropy(model.marginal(_c_idx(model.T), joint))


def exact_directed_information(model: DiscreteChainModel) -> float:
    joint = model.joint()
    return code_entropy(model, joint) - causally_conditioned_entropy(model, joint)


def true_posterior(model: DiscreteChainModel) -> ApproximatePosterior:
    """p(c_t | c_{1:t-1}, tau_{1:t}) by Bayes' rule on the joint.

    Histories of probability zero get a uniform row and are flagged in
    ``unreached``.
    """
    joint = model.joint()
    tables, flags = [], []
    for t in range(model.T):
        num = model.marginal(list(range(t + 1)) + [model.T + i for i in range(t + 1)], joint)
        den = num.sum(axis=-1, keepdims=True)
        dead = den[..., 0] <= 0
        post = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0 / model.n_c)
        tables.append(post)
        flags.append(dead)
    return ApproximatePosterior(tables, flags)


def _expected_log_q(weights, q_table, where):
    live = weights > 0
    if np.any(q_table[live] <= 0):
        raise OutOfSupportError(f"step {where}: q is zero where the model puts mass")
    return float(np.sum(weights[live] * np.log(q_table[live])))


def exact_variational_bound(model: DiscreteChainModel, q: ApproximatePosterior) -> float:
    """H(c) + sum_t E[log q(c_t | c_{1:t-1}, tau_{1:t})], re-factorized over codes.

    Each step's expectation is taken as
        sum_{c_{1:t}} p(c_{1:t}) sum_{tau_{1:t}} p(tau_{1:t} | c_{1:t}) log q(...)
    which is the joint expectation written with codes outermost.
    """
    _check_q(model, q)
    joint = model.joint()
    total = code_entropy(model, joint)
    for t in range(model.T):
        taus = list(range(t + 1))
        codes = [model.T + i for i in range(t + 1)]
        p_codes = model.marginal(codes, joint)                    # p(c_{1:t})
        p_all = model.marginal(taus + codes, joint)               # p(tau_{1:t}, c_{1:t})
        p_codes_b = p_codes.reshape((1,) * (t + 1) + p_codes.shape)
        cond = np.where(p_codes_b > 0, p_all / np.where(p_codes_b > 0, p_codes_b, 1.0), 0.0)
        total += _expected_log_q(p_codes_b * cond, q.tables[t], t + 1)
    return total


def posterior_form_bound(model: DiscreteChainModel, q: ApproximatePosterior) -> float:
    """Same bound, weighting log q by p(c_{1:t-1}, tau_{1:t}) p(c_t | c_{1:t-1}, tau_{1:t})."""
    _check_q(model, q)
    joint = model.joint()
    post = true_posterior(model)
    total = code_entropy(model, joint)
    for t in range(model.T):
        hist = model.marginal(list(range(t + 1)) + [model.T + i for i in range(t)], joint)
        total += _expected_log_q(hist[..., None] * post.tables[t], q.tables[t], t + 1)
    return total


def decoupled_bound(model: DiscreteChainModel, q: ApproximatePosterior) -> float:
    """Variant pairing p(c_{1:t}) with p(tau_{1:t} | c_{1:t-1}).

    Agrees with :func:`exact_variational_bound` only when c_t carries no
    information about tau_{1:t} beyond c_{1:t-1}. Otherwise each step is a
    cross-entropy against p(c_t | c_{1:t-1}), so the total never exceeds zero.
    Kept as a diagnostic.
    """
    _check_q(model, q)
    joint = model.joint()
    total = code_entropy(model, joint)
    for t in range(model.T):
        taus = list(range(t + 1))
        prev = [model.T + i for i in range(t)]
        p_codes = model.marginal(prev + [model.T + t], joint)
        p_prev = model.marginal(prev, joint) if prev else np.array(1.0)
        p_tau_prev = model.marginal(taus + prev, joint)
        p_prev_b = np.reshape(p_prev, (1,) * (t + 1) + np.shape(p_prev))
        cond = np.where(p_prev_b > 0, p_tau_prev / np.where(p_prev_b > 0, p_prev_b, 1.0), 0.0)
        w = cond[..., None] * p_codes.reshape((1,) * (t + 1) + p_codes.shape)
        total += _expected_log_q(w, q.tables[t], t + 1)
    return total


def _check_q(model, q):
    if len(q.tables) != model.T:
        raise ValueError("posterior has the wrong number of steps")
    for t, tbl in enumerate(q.tables):
        if tbl.shape != _c_shape(t, model.n_tau, model.n_c):
            raise ValueError(f"posterior table {t + 1} has shape {tbl.shape}")


# -- random and hand-built models --------------------------------------------------

def _dirichlet_table(rng, shape, alpha):
    g = rng.gamma(alpha, size=shape)
    g = np.maximum(g, 1e-300)
    return g / g.sum(axis=-1, keepdims=True)


def random_chain_model(rng, T=3, n_tau=2, n_c=2, tau_uses_c=True, c_uses_tau=True,
                       alpha=1.0) -> DiscreteChainModel:
    """Dirichlet-random chain; switches remove the feedback or the tau -> c link."""
    taus, cs = [], []
    for t in range(T):
        shape = _tau_shape(t, n_tau, n_c)
        if tau_uses_c:
            tbl = _dirichlet_table(rng, shape, alpha)
        else:
            base = _dirichlet_table(rng, (n_tau,) * t + (1,) * t + (n_tau,), alpha)
            tbl = np.broadcast_to(base, shape).copy()
        taus.append(tbl)
        shape = _c_shape(t, n_tau, n_c)
        if c_uses_tau:
            tbl = _dirichlet_table(rng, shape, alpha)
        else:
            base = _dirichlet_table(rng, (1,) * (t + 1) + (n_c,) * t + (n_c,), alpha)
            tbl = np.broadcast_to(base, shape).copy()
        cs.append(tbl)
    return DiscreteChainModel(T, n_tau, n_c, taus, cs)


def random_posterior(model: DiscreteChainModel, rng, alpha=1.0) -> ApproximatePosterior:
    return ApproximatePosterior([_dirichlet_table(rng, t.shape, alpha) for t in model.c_tables])


def uniform_posterior(model: DiscreteChainModel) -> ApproximatePosterior:
    return ApproximatePosterior([np.full(t.shape, 1.0 / model.n_c) for t in model.c_tables])


def copy_chain_model(T=1, n=2) -> DiscreteChainModel:
    """tau_t uniform and independent; c_t is a copy of tau_t."""
    taus = [np.full(_tau_shape(t, n, n), 1.0 / n) for t in range(T)]
    cs = []
    for t in range(T):
        tbl = np.zeros(_c_shape(t, n, n))
        for idx in np.ndindex(tbl.shape[:-1]):
            tbl[idx + (idx[t],)] = 1.0
        cs.append(tbl)
    return DiscreteChainModel(T, n, n, taus, cs)


# -- model files --------------------------------------------------------------------

def save_model(path, model: DiscreteChainModel):
    cp = configparser.ConfigParser()
    cp["model"] = {"T": str(model.T), "n_tau": str(model.n_tau), "n_c": str(model.n_c)}
    cp["tau_tables"] = {f"t{t + 1}": json.dumps(tbl.ravel().tolist()) for t, tbl in enumerate(model.tau_tables)}
    cp["c_tables"] = {f"t{t + 1}": json.dumps(tbl.ravel().tolist()) for t, tbl in enumerate(model.c_tables)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        cp.write(fh)


def load_model(path) -> DiscreteChainModel:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        sec = cp["model"]
        T, n_tau, n_c = int(sec["T"]), int(sec["n_tau"]), int(sec["n_c"])
        taus = [np.array(json.loads(cp["tau_tables"][f"t{t + 1}"])).reshape(_tau_shape(t, n_tau, n_c))
                for t in range(T)]
        cs = [np.array(json.loads(cp["c_tables"][f"t{t + 1}"])).reshape(_c_shape(t, n_tau, n_c))
              for t in range(T)]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad model file ({exc})") from None
    return DiscreteChainModel(T, n_tau, n_c, taus, cs)


def oracle_scan(rng, n_models=100, n_posteriors=5, max_T=3, max_alphabet=3):
    """Check the bound <= directed information <= mutual information chain.

    Returns a dict with the largest violation of each inequality and of the
    equality at the true posterior.
    """
    worst = {"bound_vs_di": -np.inf, "di_vs_mi": -np.inf, "equality_gap": 0.0}
    for _ in range(n_models):
        T = int(rng.integers(1, max_T + 1))
        model = random_chain_model(rng, T, int(rng.integers(2, max_alphabet + 1)),
                                   int(rng.integers(2, max_alphabet + 1)))
        di = exact_directed_information(model)
        mi = exact_mutual_information(model)
        worst["di_vs_mi"] = max(worst["di_vs_mi"], di - mi)
        for _ in range(n_posteriors):
            b = exact_variational_bound(model, random_posterior(model, rng))
            worst["bound_vs_di"] = max(worst["bound_vs_di"], b - di)
        gap = abs(exact_variational_bound(model, true_posterior(model)) - di)
        worst["equality_gap"] = max(worst["equality_gap"], gap)
    return worst
