"""Value expansion with per-state adaptive rollout horizons, on a small pixel-control benchmark."""

from .config import TrainConfig, load_config, parse_config_text
from .horizons import dmve_value, estimate_state_value, horizon_errors, select_horizons
from .value_expansion import expansion_family, lambda_return, value_expansion, value_family

__all__ = [
    "TrainConfig",
    "dmve_value",
    "estimate_state_value",
    "expansion_family",
    "horizon_errors",
    "lambda_return",
    "load_config",
    "parse_config_text",
    "select_horizons",
    "value_expansion",
    "value_family",
]
