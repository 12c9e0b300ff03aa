"""Command-line entry point: ``digail <command> ...``.

Commands: gen-experts, pretrain, train, eval, segment, plot, oracle. Outputs
go under ``--out``; a ``manifest.json`` is written last so that a partial run
is recognisable by its absence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .checkpoints import load_policy, load_vae, save_policy, save_vae
from .config import ConfigError, TrainConfig, config_text, default_config, load_config
from .dataset import DatasetError, load_trajectories, save_trajectories
from .envs import ENV_IDS, fourrooms_decode, generate_experts, make_env
from .evaluation import (arrow_map, evaluate_returns, pca_project, run_episode, segment_dataset)
from .figures import FigureError, RunArtifacts, emit_figures, write_csv
from .gail import policy_demonstrations, train_digail, train_gail, train_ppo_expert
from .info import oracle_scan
from .vae import pretrain_vae

log = logging.getLogger("digail")

ORACLE_TOL = 1e-10


class UsageError(Exception):
    pass


def _version():
    try:
        return metadata.version("digail")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def _seed(args_seed):
    env = os.environ.get("DIGAIL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DIGAIL_SEED must be an integer, got {env!r}") from None
    return args_seed


def _config(args) -> TrainConfig:
    overrides = {}
    seed = _seed(getattr(args, "seed", None))
    if seed is not None:
        overrides["seed"] = seed
    for key in ("epochs", "vae_epochs", "K", "batch_size"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "config", None):
        cfg = load_config(args.config, overrides)
        if getattr(args, "env", None) and args.env != cfg.env_id:
            raise UsageError(f"--env {args.env} disagrees with config env_id {cfg.env_id}")
        return cfg
    if not getattr(args, "env", None):
        raise UsageError("either --config or --env is required")
    try:
        return default_config(args.env, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_manifest(out: Path, cfg: TrainConfig | None, outputs: dict, command: str):
    missing = [p for p in outputs.values() if not Path(p).exists()]
    if missing:
        raise RuntimeError(f"declared outputs missing: {missing}")
    manifest = {"command": command, "tool_version": _version(),
                "seed": None if cfg is None else cfg.seed,
                "config": None if cfg is None else config_text(cfg),
                "outputs": {k: str(v) for k, v in sorted(outputs.items())}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _curve_csv(path, curve):
    if not curve:
        write_csv(path, ["epoch"], [])
        return
    keys = list(curve[0])
    write_csv(path, keys, [[row[k] for k in keys] for row in curve])


def cmd_gen_experts(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    seed = _seed(args.seed)
    rng = np.random.default_rng(seed)
    if args.ppo_epochs:
        cfg = default_config(args.env, seed=seed)
        pi = train_ppo_expert(cfg, rng, epochs=args.ppo_epochs)
        trajs = policy_demonstrations(pi, args.env, args.n, rng)
    else:
        trajs = generate_experts(args.env, args.n, rng)
    save_trajectories(args.out, trajs, make_env(args.env).action_dim)
    lengths = [len(t) for t in trajs]
    rets = [0.0 if t.rewards is None else float(np.sum(t.rewards)) for t in trajs]
    print(f"wrote {len(trajs)} trajectories to {args.out}: mean length {np.mean(lengths):.1f}, "
          f"mean return {np.mean(rets):.2f}")
    return 0


def cmd_pretrain(args):
    cfg = _config(args)
    data = load_trajectories(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    init, start = None, 0
    if args.resume:
        q, pi, start = load_vae(args.resume)
        init = (q, pi)
    env = make_env(cfg.env_id, obs_mode=cfg.obs_mode)
    res = pretrain_vae(data, cfg, rng=rng, init=init, start_epoch=start, action_dim=env.action_dim)
    ckpt, curve = out / "vae.ckpt", out / "vae_curve.csv"
    save_vae(ckpt, res.q, res.pi, start + len(res.curve))
    _curve_csv(curve, res.curve)
    (out / "config.ini").write_text(config_text(cfg))
    _write_manifest(out, cfg, {"data": Path(args.data), "vae": ckpt, "curve": curve,
                               "config": out / "config.ini"}, "pretrain")
    print(f"pre-trained {len(res.curve)} epochs; final loss {res.curve[-1]['total']:.4f}; checkpoint {ckpt}")
    return 0


def cmd_train(args):
    cfg = _config(args)
    if args.l2_weight is not None:
        cfg = cfg.with_(l2_bc_weight=args.l2_weight)
    data = load_trajectories(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    outputs = {"data": Path(args.data)}
    if args.method == "digail":
        if not args.vae:
            raise UsageError("--method digail requires --vae")
        q, pi, _ = load_vae(args.vae)
        res = train_digail(cfg.with_(K=q.k), data, q, pi, rng=rng)
        outputs["vae"] = Path(args.vae)
    else:
        if args.vae:
            log.warning("--method gail ignores --vae")
        res = train_gail(cfg, data, rng=rng)
    ckpt, curve = out / "policy.ckpt", out / "train_curve.csv"
    save_policy(ckpt, res.pi, res.value, res.D)
    _curve_csv(curve, res.curve)
    (out / "config.ini").write_text(config_text(cfg))
    outputs.update(policy=ckpt, curve=curve, config=out / "config.ini")
    _write_manifest(out, cfg, outputs, f"train --method {args.method}")
    last = res.curve[-1]
    print(f"trained {len(res.curve)} epochs with {args.method}; last batch return {last['env_return']:.2f}")
    return 0


def _load_pair(policy_path, vae_path):
    q = None
    if vae_path:
        q, vae_pi, _ = load_vae(vae_path)
    if policy_path:
        pi = load_policy(policy_path)[0]
    elif q is not None:
        pi = vae_pi
    else:
        pi = None
    if pi is not None and pi.k and q is None:
        raise UsageError("this policy is latent-conditioned; pass --vae")
    return pi, q


def cmd_eval(args):
    pi, q = _load_pair(args.policy, args.vae)
    env = make_env(args.env)
    seed = _seed(args.seed)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    stats = evaluate_returns(pi, q, env, args.episodes, seed=seed, workers=args.workers)
    label = args.label or ("expert" if pi is None else "policy")
    out = Path(args.out)
    table = out / "tables" / "returns.csv"
    write_csv(table, ["method", "env", "mean", "std", "n_episodes"],
              [(label, args.env, stats.mean, stats.std, stats.n)])
    _write_manifest(out, None, {"returns": table}, "eval")
    print(f"{label} on {args.env}: {stats.mean:.2f} +- {stats.std:.2f} over {stats.n} episodes")
    return 0


def cmd_segment(args):
    q, _, _ = load_vae(args.vae)
    data = load_trajectories(args.data)
    rep = segment_dataset(q, data)
    out = Path(args.out)
    table = out / "tables" / "segmentation.csv"
    rows = [(i, int(s), "" if rep.accuracies is None else float(rep.accuracies[i]))
            for i, s in enumerate(rep.switch_counts)]
    write_csv(table, ["trajectory", "switches", "accuracy"], rows)
    _write_manifest(out, None, {"segmentation": table}, "segment")
    usage = " ".join(f"{f:.3f}" for f in rep.usage_fraction)
    msg = f"mean switches {rep.mean_switches:.2f}; code usage {usage}"
    if rep.accuracies is not None:
        msg += f"; label-matched accuracy {rep.mean_accuracy:.4f}"
    print(msg)
    return 0


def cmd_plot(args):
    run = Path(args.run)
    mpath = run / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"run manifest not found: {mpath}")
    outputs = json.loads(mpath.read_text())["outputs"]
    if "vae" not in outputs:
        raise FigureError("plots need a run with a VAE checkpoint")
    q, vae_pi, _ = load_vae(outputs["vae"])
    pi = load_policy(outputs["policy"])[0] if "policy" in outputs else vae_pi
    data = load_trajectories(outputs["data"])
    env_id = data[0].env_id
    env = make_env(env_id, obs_mode="onehot" if data[0].states.shape[1] > 4 else "xy") \
        if env_id == "fourrooms" else make_env(env_id)
    rep = segment_dataset(q, data)
    art = RunArtifacts(env_id, k=q.k)
    n_show = min(3, len(data))
    art.code_sequences = [s.hardened for s in rep.sequences[:n_show]]
    states = np.concatenate([t.states for t in data])
    codes = np.concatenate([s.hardened for s in rep.sequences])
    try:
        art.pca = pca_project(states, codes, 3 if states.shape[1] >= 3 else 2)
    except ValueError as exc:
        log.warning("skipping PCA: %s", exc)
    art.segmentation = [(i, int(s), "" if rep.accuracies is None else float(rep.accuracies[i]))
                        for i, s in enumerate(rep.switch_counts)]
    rng = np.random.default_rng(_seed(args.seed) or 0)
    if env_id == "fourrooms":
        goal = fourrooms_decode(data[0].states[0], "onehot" if data[0].states.shape[1] > 4 else "xy").apple
        art.goal = goal
        art.arrow_maps = {c: arrow_map(pi, c, goal) for c in range(pi.k)}
        ep = run_episode(env, pi, q, rng, start=data[0])
        cells = [fourrooms_decode(s, "onehot" if len(s) > 4 else "xy").agent for s in ep.states]
        art.rollouts = [(cells, ep.codes)]
    else:
        art.rollouts = []
        for i in range(n_show):
            ep = run_episode(env, pi, q, rng, start=data[i])
            art.rollouts.append((ep.states[:, :2], ep.codes))
    written = emit_figures(art, args.out)
    print(f"wrote {len(written)} files under {args.out}")
    return 0


def cmd_oracle(args):
    seed = _seed(args.seed)
    worst = oracle_scan(np.random.default_rng(seed), args.models, args.trials)
    slack = max(worst["bound_vs_di"], worst["di_vs_mi"], 0.0)
    print(f"models {args.models}, posteriors per model {args.trials}")
    print(f"max bound - directed information: {worst['bound_vs_di']:.3e}")
    print(f"max directed information - mutual information: {worst['di_vs_mi']:.3e}")
    print(f"max gap at the true posterior: {worst['equality_gap']:.3e}")
    ok = slack <= ORACLE_TOL and worst["equality_gap"] <= ORACLE_TOL
    print("oracle: " + ("ok" if ok else f"VIOLATION (max slack {slack:.3e})"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="digail", description="Directed-information adversarial imitation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-experts", help="write scripted expert demonstrations")
    g.add_argument("--env", required=True, choices=ENV_IDS)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--ppo-epochs", dest="ppo_epochs", type=int, default=0,
                   help="train a PPO expert on the task reward for this many epochs instead of scripting")
    g.set_defaults(func=cmd_gen_experts)

    def train_flags(sp):
        sp.add_argument("--config")
        sp.add_argument("--env", choices=ENV_IDS)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--K", type=int)

    pre = sub.add_parser("pretrain", help="pre-train the VAE on demonstrations")
    train_flags(pre)
    pre.add_argument("--vae-epochs", dest="vae_epochs", type=int)
    pre.add_argument("--resume", help="continue from a VAE checkpoint")
    pre.set_defaults(func=cmd_pretrain)

    tr = sub.add_parser("train", help="adversarial training")
    train_flags(tr)
    tr.add_argument("--vae")
    tr.add_argument("--method", choices=("digail", "gail"), default="digail")
    tr.add_argument("--l2-weight", dest="l2_weight", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="mean and std of episode returns")
    ev.add_argument("--policy")
    ev.add_argument("--vae")
    ev.add_argument("--env", required=True, choices=ENV_IDS)
    ev.add_argument("--episodes", type=int, default=300)
    ev.add_argument("--label")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.add_argument("--workers", type=int, default=1, help="evaluation processes (results do not depend on it)")
    ev.set_defaults(func=cmd_eval)

    sg = sub.add_parser("segment", help="segment demonstrations with a trained encoder")
    sg.add_argument("--vae", required=True)
    sg.add_argument("--data", required=True)
    sg.add_argument("--out", required=True)
    sg.set_defaults(func=cmd_segment)

    pl = sub.add_parser("plot", help="emit SVG figures for a run directory")
    pl.add_argument("--run", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--seed", type=int, default=0)
    pl.set_defaults(func=cmd_plot)

    orc = sub.add_parser("oracle", help="exhaustive information-inequality scan")
    orc.add_argument("--models", type=int, default=100)
    orc.add_argument("--trials", type=int, default=5)
    orc.add_argument("--seed", type=int, default=0)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, DatasetError, FigureError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
