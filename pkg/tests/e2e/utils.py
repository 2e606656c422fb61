"""
helper utils for tests
"""

import shutil
import tempfile
from functools import wraps

from fedfeed.utils.config import normalize_config, validate_config
from fedfeed.utils.dict import DictDefault


def with_temp_dir(test_func):
    @wraps(test_func)
    def wrapper(*args, **kwargs):
        temp_dir = tempfile.mkdtemp(prefix="fedfeed-")
        try:
            test_func(*args, temp_dir=temp_dir, **kwargs)
        finally:
            shutil.rmtree(temp_dir, ignore_errors=True)

    return wrapper


def trend_config(**overrides) -> DictDefault:
    """
    Desk-scale setup where the seed model is clearly weaker than full
    supervision, so the orderings between modes and noise levels show.
    """
    cfg = DictDefault(
        {
            "n": 4000,
            "dim": 16,
            "classes": 4,
            "class_sep": 1.6,
            "clients": 5,
            "max_rounds": 10,
            "local_epochs": 2,
            "patience": 3,
            "repeats": 3,
            "seed": 2024,
            **overrides,
        }
    )
    validate_config(cfg)
    normalize_config(cfg)
    return cfg


def desk_config(**overrides) -> DictDefault:
    """
    20k-example, four-class setup whose seed model lands near 0.6 accuracy;
    the acceptance orderings are read off 5-seed means here.
    """
    return trend_config(
        **{
            "n": 20000,
            "class_sep": 2.0,
            "clients": 15,
            "partition": "dirichlet",
            "local_epochs": 5,
            "max_rounds": 12,
            "repeats": 5,
            "seed": 42,
            **overrides,
        }
    )
