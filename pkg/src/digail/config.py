"""Training configuration: per-environment defaults and the INI-style config file.

A config file has up to three sections, ``[env]``, ``[vae]`` and ``[digail]``,
each holding ``key = value`` lines. Keys must belong to their section; anything
unknown is rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .nn import TemperatureSchedule


def _f(section, default):
    return field(default=default, metadata={"section": section})


@dataclass(frozen=True)
class TrainConfig:
    env_id: str = _f("env", "circleworld")
    obs_mode: str = _f("env", "onehot")
    n_experts: int = _f("env", 100)
    seed: int = _f("env", 0)

    K: int = _f("vae", 2)
    vae_epochs: int = _f("vae", 1000)
    vae_batch_size: int = _f("vae", 16)
    vae_lr: float = _f("vae", 3e-4)
    lambda_s: float = _f("vae", 0.0)
    tau0: float = _f("vae", 5.0)
    tau_k: float = _f("vae", 3e-3)
    tau_floor: float = _f("vae", 0.1)
    straight_through: bool = _f("vae", False)
    kl_warmup: int = _f("vae", 0)

    epochs: int = _f("digail", 1000)
    batch_size: int = _f("digail", 512)
    lambda1: float = _f("digail", 0.01)
    lambda2: float = _f("digail", 1e-3)
    gamma: float = _f("digail", 0.99)
    gae_lambda: float = _f("digail", 0.95)
    ppo_clip: float = _f("digail", 0.2)
    ppo_epochs: int = _f("digail", 4)
    ppo_minibatches: int = _f("digail", 4)
    lr: float = _f("digail", 3e-4)
    disc_epochs: int = _f("digail", 1)
    l2_bc_weight: float = _f("digail", 0.0)
    latent_source: str = _f("digail", "expert-demo")
    eval_latent_source: str = _f("digail", "online-posterior")
    warm_start: bool = _f("digail", True)
    absorbing: bool = _f("digail", True)

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.vae_epochs <= 0 or self.vae_batch_size <= 0:
            raise ValueError("epochs and batch sizes must be positive")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if not 0.0 < self.ppo_clip < 1.0:
            raise ValueError("ppo_clip must lie in (0, 1)")
        for name in ("latent_source", "eval_latent_source"):
            if getattr(self, name) not in ("expert-demo", "online-posterior"):
                raise ValueError(f"{name} must be expert-demo or online-posterior")

    @property
    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.tau0, self.tau_k, self.tau_floor)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


ENV_DEFAULTS = {
    "fourrooms": dict(n_experts=500, K=4, vae_epochs=500, vae_batch_size=32, lambda_s=0.0,
                      epochs=1000, batch_size=256, lambda1=0.1),
    "circleworld": dict(n_experts=100, K=2, vae_epochs=1000, vae_batch_size=16, lambda_s=1.0,
                        epochs=1000, batch_size=512, lambda1=0.01),
    "pendulum": dict(n_experts=25, K=4, vae_epochs=1000, vae_batch_size=16, lambda_s=0.0,
                     epochs=2000, batch_size=1024, lambda1=0.01),
}


def default_config(env_id: str, **overrides) -> TrainConfig:
    if env_id not in ENV_DEFAULTS:
        raise ValueError(f"unknown environment {env_id!r}")
    return TrainConfig(env_id=env_id, **{**ENV_DEFAULTS[env_id], **overrides})


_SECTIONS = {f.name: f.metadata["section"] for f in fields(TrainConfig)}
_TYPES = {f.name: f.type for f in fields(TrainConfig)}


class ConfigError(ValueError):
    pass


def _convert(key, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse_config_text(text: str, source="<config>", overrides=None) -> TrainConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in ("env", "vae", "digail"):
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SECTIONS:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            if _SECTIONS[key] != section:
                raise ConfigError(f"{source}: key {key!r} belongs in [{_SECTIONS[key]}]")
            values[key] = _convert(key, raw)
    values.update(overrides or {})
    env_id = values.pop("env_id", None)
    if env_id is None:
        raise ConfigError(f"{source}: missing key 'env_id' in [env]")
    try:
        return default_config(env_id, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, overrides=None) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path), overrides)


def config_text(cfg: TrainConfig) -> str:
    lines = []
    for section in ("env", "vae", "digail"):
        lines.append(f"[{section}]")
        for key, value in asdict(cfg).items():
            if _SECTIONS[key] == section:
                if isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def save_config(path, cfg: TrainConfig):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_text(cfg))
