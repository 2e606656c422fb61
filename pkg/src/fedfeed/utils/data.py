"""Module containing data utilities: seed derivation and CSV helpers"""
import hashlib
import logging
from pathlib import Path
from typing import Union

import pandas as pd

LOG = logging.getLogger("fedfeed.utils.data")


def md5(to_hash: str, encoding: str = "utf-8") -> str:
    try:
        return hashlib.md5(to_hash.encode(encoding), usedforsecurity=False).hexdigest()
    except TypeError:
        return hashlib.md5(to_hash.encode(encoding)).hexdigest()  # nosec


def derive_seed(*keys) -> int:
    """
    Derive an independent 63-bit seed from an ordered tuple of keys, e.g.
    ``derive_seed(global_seed, "client", client_id, round_index)``.

    The result depends only on the keys, never on how many streams were drawn
    before, so client count and execution order cannot change any client's draws.
    """
    return int(md5("|".join(str(key) for key in keys))[:16], 16) >> 1


def read_csv_strings(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV keeping every cell as a raw string (no NaN or float coercion)"""
    return pd.read_csv(
        path,
        dtype=str,
        keep_default_na=False,
        na_filter=False,
        skip_blank_lines=True,
        encoding="utf-8",
    )


def ensure_parent(path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.parent and not path.parent.is_dir():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path
