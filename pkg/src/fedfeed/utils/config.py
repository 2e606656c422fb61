"""Module for working with config dicts"""

import logging
import os

from fedfeed.common.const import (
    BEHAVIORS,
    DEFAULT_CONFIG,
    DEFAULT_LR,
    MODES,
    SEED_ENV_VAR,
)
from fedfeed.utils.data import derive_seed
from fedfeed.utils.dict import DictDefault

LOG = logging.getLogger("fedfeed.utils.config")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; `key` names the offending entry"""

    def __init__(self, message: str, key: str = None):
        super().__init__(message)
        self.key = key


_FLOAT_KEYS = {
    "class_sep",
    "test_fraction",
    "k",
    "v",
    "dirichlet_beta",
    "gamma",
    "delta",
    "beta_high",
    "beta_low",
    "empirical_gamma",
    "empirical_delta",
    "rce_A",
    "nce_weight",
    "rce_weight",
    "init_sigma",
    "lr",
    "min_delta",
    "seed_tol",
    "participation",
}
_INT_KEYS = {
    "n",
    "dim",
    "classes",
    "data_seed",
    "clients",
    "hidden",
    "batch_size",
    "local_epochs",
    "max_rounds",
    "patience",
    "seed_epochs",
    "seed_patience",
    "workers",
    "seed",
    "repeats",
}
_BOOL_KEYS = {"stratified", "robust", "refresh_pseudo_labels"}
_CHOICES = {
    "partition": ("uniform_class", "dirichlet"),
    "behavior": ("fixed",) + BEHAVIORS,
    "mode": MODES,
    "schedule_unit": ("round", "epoch"),
    "architecture": ("linear", "mlp"),
    "init": ("zeros", "gaussian"),
    "aggregation": ("mean", "weighted"),
}


def _coerce_bool(key, value):
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
        return value.lower() in ("true", "1")
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    raise ConfigError(f"`{key}` must be a boolean, got {value!r}", key)


def _coerce_number(key, value, kind):
    if isinstance(value, bool):
        raise ConfigError(f"`{key}` must be a number, got {value!r}", key)
    try:
        if kind is int:
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError
            return int(as_float)
        return float(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(
            f"`{key}` must be {'an integer' if kind is int else 'a number'}, got {value!r}",
            key,
        ) from err


def coerce_types(cfg: DictDefault):
    """Cast string/int values from files and CLI overrides to the schema types"""
    for key in list(cfg.keys()):
        value = cfg[key]
        if value is None:
            continue
        if key in _BOOL_KEYS:
            cfg[key] = _coerce_bool(key, value)
        elif key in _INT_KEYS:
            cfg[key] = _coerce_number(key, value, int)
        elif key in _FLOAT_KEYS:
            cfg[key] = _coerce_number(key, value, float)
        elif key == "scheduler_p" and value != "auto":
            cfg[key] = _coerce_number(key, value, float)
        elif key == "repeat_seeds":
            if not isinstance(value, (list, tuple)):
                raise ConfigError("`repeat_seeds` must be a list of integers", key)
            cfg[key] = [_coerce_number(key, seed, int) for seed in value]


def validate_config(cfg: DictDefault):
    unknown = sorted(set(cfg.keys()) - set(DEFAULT_CONFIG.keys()))
    if unknown:
        raise ConfigError(f"unknown config key `{unknown[0]}`", unknown[0])

    coerce_types(cfg)

    for key, choices in _CHOICES.items():
        if cfg[key] is not None and cfg[key] not in choices:
            raise ConfigError(
                f"`{key}` must be one of {', '.join(choices)}, got {cfg[key]!r}", key
            )

    for key in ("n", "dim", "classes", "clients", "batch_size", "hidden"):
        if cfg[key] is not None and cfg[key] < 1:
            raise ConfigError(f"`{key}` must be >= 1", key)
    if cfg.classes is not None and cfg.classes < 2:
        raise ConfigError("`classes` must be >= 2", "classes")
    for key in ("max_rounds", "repeats", "seed_epochs"):
        if cfg[key] is not None and cfg[key] < 1:
            raise ConfigError(f"`{key}` must be >= 1", key)
    for key in ("local_epochs", "patience", "seed_patience"):
        if cfg[key] is not None and cfg[key] < 0:
            raise ConfigError(f"`{key}` must be >= 0", key)

    for key in ("k", "v"):
        if cfg[key] is not None and not 0.0 < cfg[key] < 1.0:
            raise ConfigError(f"`{key}` must lie in (0, 1)", key)
    if cfg.k is not None and cfg.v is not None and cfg.k + cfg.v >= 1.0:
        raise ConfigError("`k` + `v` must be < 1", "v")
    if cfg.test_fraction is not None and not 0.0 <= cfg.test_fraction < 1.0:
        raise ConfigError("`test_fraction` must lie in [0, 1)", "test_fraction")

    for key in ("gamma", "delta", "empirical_gamma", "empirical_delta"):
        if cfg[key] is not None and not 0.0 <= cfg[key] <= 1.0:
            raise ConfigError(f"`{key}` must lie in [0, 1]", key)
    for key in ("beta_high", "beta_low", "dirichlet_beta", "nce_weight"):
        if cfg[key] is not None and cfg[key] <= 0:
            raise ConfigError(f"`{key}` must be > 0", key)
    if cfg.rce_weight is not None and cfg.rce_weight < 0:
        raise ConfigError("`rce_weight` must be >= 0", "rce_weight")
    if cfg.rce_A is not None and cfg.rce_A >= 0:
        raise ConfigError("`rce_A` must be negative", "rce_A")
    if cfg.scheduler_p is not None and cfg.scheduler_p != "auto":
        if not 0.0 < cfg.scheduler_p < 1.0:
            raise ConfigError("`scheduler_p` must lie in (0, 1) or be 'auto'", "scheduler_p")
    if cfg.lr is not None and cfg.lr < 0:
        raise ConfigError("`lr` must be >= 0", "lr")
    if cfg.init_sigma is not None and cfg.init_sigma < 0:
        raise ConfigError("`init_sigma` must be >= 0", "init_sigma")
    if cfg.participation is not None and not 0.0 < cfg.participation <= 1.0:
        raise ConfigError("`participation` must lie in (0, 1]", "participation")
    if cfg.min_delta is not None and cfg.min_delta < 0:
        raise ConfigError("`min_delta` must be >= 0", "min_delta")

    if cfg.behavior == "empirical" and not cfg.empirical_profiles:
        LOG.warning(
            "behavior `empirical` without `empirical_profiles`; falling back to "
            "fixed (empirical_gamma, empirical_delta)"
        )
    if cfg.robust and cfg.mode in ("initial_only", "full_supervision", "self_training"):
        LOG.warning(f"`robust` has no effect with mode `{cfg.mode}`")
    if cfg.mode in ("initial_only", "self_training", "full_supervision") and (
        cfg.behavior not in (None, "fixed")
    ):
        LOG.warning(f"`behavior` is ignored by mode `{cfg.mode}`")
    if cfg.repeat_seeds is not None and cfg.repeats is not None:
        if len(cfg.repeat_seeds) != cfg.repeats:
            raise ConfigError(
                "`repeat_seeds` must have exactly `repeats` entries", "repeat_seeds"
            )


def normalize_config(cfg: DictDefault):
    # fill every schema key so the resolved snapshot is complete
    for key, default in DEFAULT_CONFIG.items():
        if key not in cfg or cfg[key] is None:
            cfg[key] = default

    if cfg.seed is None:
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            cfg.seed = _coerce_number(SEED_ENV_VAR, env_seed, int)
        else:
            LOG.info("No seed provided, using default seed of 42")
            cfg.seed = 42
    if cfg.data_seed is None:
        cfg.data_seed = cfg.seed

    if cfg.lr is None:
        cfg.lr = DEFAULT_LR[cfg.architecture]
    if cfg.repeat_seeds is None:
        cfg.repeat_seeds = [
            cfg.seed if idx == 0 else derive_seed(cfg.seed, "repeat", idx) % (2**31)
            for idx in range(cfg.repeats)
        ]
    cfg.workers = max(1, cfg.workers)
