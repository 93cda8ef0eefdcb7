"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

ESTIMATORS = ("dmve", "mve", "lambda")


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class TrainConfig:
    env: str = "bouncing_dot"
    seed: int = 0
    estimator: str = "dmve"  # dmve | mve (fixed horizon) | lambda
    seed_episodes: int = 5  # S
    collect_interval: int = 100  # C
    batch_size: int = 16  # B
    seq_len: int = 30  # L
    horizon: int = 15  # H
    num_horizons: int = 3  # K
    gamma: float = 0.99
    lam: float = 0.95
    model_lr: float = 1e-3
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    grad_clip: float = 100.0
    expl_noise: float = 0.3  # sigma
    total_steps: int = 50_000
    episode_length: int = 200
    eval_interval: int = 10_000
    eval_episodes: int = 5
    deter: int = 64
    stoch: int = 16
    hidden: int = 64
    kl_scale: float = 1.0
    free_nats: float = 3.0
    dataset_capacity: int = 1000
    save_episodes: bool = True
    diag_interval: int = 0  # train steps between horizon diagnostics dumps; 0 disables

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, key: str, msg: str):
            if not ok:
                raise ConfigError(f"{key}: {msg}", key)

        need(self.estimator in ESTIMATORS, "estimator", f"must be one of {ESTIMATORS}")
        for key in ("seed_episodes", "collect_interval", "batch_size", "seq_len", "horizon",
                    "episode_length", "eval_interval", "eval_episodes", "deter", "stoch", "hidden",
                    "dataset_capacity"):
            need(getattr(self, key) >= 1, key, "must be positive")
        need(1 <= self.num_horizons <= self.horizon, "num_horizons", f"must lie in 1..horizon ({self.horizon})")
        need(0.0 <= self.gamma < 1.0, "gamma", "must lie in [0, 1)")
        need(0.0 <= self.lam <= 1.0, "lam", "must lie in [0, 1]")
        for key in ("model_lr", "actor_lr", "critic_lr", "expl_noise", "kl_scale", "free_nats"):
            need(getattr(self, key) >= 0.0, key, "must be non-negative")
        need(self.grad_clip > 0.0, "grad_clip", "must be positive")
        need(self.seq_len <= self.episode_length, "seq_len", "cannot exceed episode_length")
        need(self.total_steps >= 0, "total_steps", "must be non-negative")
        need(self.diag_interval >= 0, "diag_interval", "must be non-negative")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}", key) from None


_KINDS = {"int": int, "float": float, "str": str, "bool": bool}


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = {f.name: _KINDS[f.type] for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})", key)
        values[key] = _convert(key, raw, known[key])
    return (base or TrainConfig()).replace(**values)


def load_config(path: str | Path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())
