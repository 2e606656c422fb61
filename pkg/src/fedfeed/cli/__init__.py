"""Shared helpers for the fedfeed command line: config loading and flag parsing"""

import logging
import re
from pathlib import Path
from typing import List, Optional, Union

import yaml

from fedfeed.common.cli import RunCliArgs
from fedfeed.logging_config import configure_logging
from fedfeed.utils.config import ConfigError, normalize_config, validate_config
from fedfeed.utils.dict import DictDefault

configure_logging()
LOG = logging.getLogger("fedfeed.cli")

# split "a=1,b=[1,2]" on commas that start a new key=value pair
_OVERRIDE_SPLIT = re.compile(r",(?=\s*[A-Za-z_][\w-]*\s*=)")


def _as_list(value) -> List:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def parse_overrides(overrides) -> DictDefault:
    """`key=value` pairs, comma separated or repeated; values are parsed as YAML scalars"""
    parsed = DictDefault()
    for chunk in _as_list(overrides):
        for pair in _OVERRIDE_SPLIT.split(str(chunk)):
            if not pair.strip():
                continue
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not of the form key=value")
            key, raw = pair.split("=", 1)
            key = key.strip().replace("-", "_")
            try:
                parsed[key] = yaml.safe_load(raw.strip()) if raw.strip() else None
            except yaml.YAMLError as err:
                raise ConfigError(f"cannot parse override value {raw!r}", key) from err
    return parsed


def parse_grid(value, cast=float, name: str = "grid") -> list:
    """
    Accepts what fire hands over for `--flag 0.7,0.5,0.3`: a tuple, a list, a
    bare number or a comma separated string.
    """
    if value is None or value is True:
        raise ConfigError(f"`--{name}` needs a comma separated list", name)
    items = []
    for item in _as_list(value):
        if isinstance(item, str):
            items.extend(part.strip() for part in item.split(",") if part.strip())
        else:
            items.append(item)
    if not items:
        raise ConfigError(f"`--{name}` must not be empty", name)
    try:
        return [cast(item) for item in items]
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad value in `--{name}`: {err}", name) from err


def read_config_file(config: Union[str, Path]) -> DictDefault:
    path = Path(config)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", "config")
    with open(path, encoding="utf-8") as file:
        try:
            loaded = yaml.safe_load(file)
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse config {path}: {err}", "config") from err
    if loaded is None:
        loaded = {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"config {path} must contain an object", "config")
    return DictDefault(loaded)


def load_cfg(
    config: Optional[Union[str, Path]] = None,
    override=None,
    cli_args: Optional[RunCliArgs] = None,
    **kwargs,
) -> DictDefault:
    """
    defaults < config file < --override / --key=value < explicit --seed/--workers/--output_dir
    """
    cfg = read_config_file(config) if config else DictDefault()

    for key, value in kwargs.items():
        cfg[key.replace("-", "_")] = value
    for key, value in parse_overrides(override).items():
        cfg[key] = value
    if cli_args is not None:
        for key in ("seed", "workers", "output_dir"):
            value = getattr(cli_args, key)
            if value is not None:
                cfg[key] = value

    validate_config(cfg)

    normalize_config(cfg)
    return cfg
