"""Newline-delimited JSON trajectory files.

Line 1 is a header object::

    {"format_version": 1, "env_id": ..., "state_dim": ..., "action_dim": ...,
     "discrete_actions": bool}

Every following line is one trajectory::

    {"env_id": ..., "states": [[...], ...], "actions": [[...], ...],
     "phases": [...] | null, "rewards": [...] | null}

Discrete actions are stored as one-element lists holding the action index.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .envs import Trajectory

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


def _header(trajs, action_dim=None):
    first = trajs[0]
    if first.discrete:
        adim = action_dim or 4
    else:
        adim = first.actions.shape[1]
    return {"format_version": FORMAT_VERSION, "env_id": first.env_id,
            "state_dim": int(first.states.shape[1]), "action_dim": int(adim),
            "discrete_actions": bool(first.discrete)}


def save_trajectories(path, trajs, action_dim=None):
    if not trajs:
        raise DatasetError("refusing to write an empty dataset")
    env_ids = {t.env_id for t in trajs}
    if len(env_ids) != 1:
        raise DatasetError(f"mixed env ids in one dataset: {sorted(env_ids)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(_header(trajs, action_dim)) + "\n")
        for t in trajs:
            actions = t.actions.reshape(len(t), -1).tolist()
            rec = {"env_id": t.env_id, "states": t.states.tolist(), "actions": actions,
                   "phases": None if t.phases is None else t.phases.tolist(),
                   "rewards": None if t.rewards is None else t.rewards.tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path, with_header=False):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    trajs, header = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if header is None:
                if rec.get("format_version") != FORMAT_VERSION:
                    raise DatasetError(f"{path}:{lineno}: missing or unsupported header")
                header = rec
                continue
            trajs.append(_parse_record(rec, header, f"{path}:{lineno}"))
    if header is None:
        raise DatasetError(f"{path}: empty file")
    return (trajs, header) if with_header else trajs


def _parse_record(rec, header, where):
    try:
        env_id = rec["env_id"]
        states = np.asarray(rec["states"], dtype=float)
        actions = np.asarray(rec["actions"], dtype=float)
        phases, rewards = rec.get("phases"), rec.get("rewards")
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: bad trajectory record ({exc})") from None
    if env_id != header["env_id"]:
        raise DatasetError(f"{where}: env_id {env_id!r} does not match header {header['env_id']!r}")
    if states.ndim != 2 or states.shape[1] != header["state_dim"]:
        raise DatasetError(f"{where}: states have shape {states.shape}")
    if header["discrete_actions"]:
        if actions.ndim != 2 or actions.shape[1] != 1:
            raise DatasetError(f"{where}: discrete actions must be one index per step")
        actions = actions[:, 0].astype(int)
    elif actions.ndim != 2 or actions.shape[1] != header["action_dim"]:
        raise DatasetError(f"{where}: actions have shape {actions.shape}")
    try:
        return Trajectory(env_id, states, actions, phases, rewards)
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from None
