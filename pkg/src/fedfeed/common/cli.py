"""
shared module for cli specific things
"""

from dataclasses import dataclass, field
from typing import Optional

from fedfeed.common.const import BEHAVIORS, MODES


@dataclass
class GenDataCliArgs:
    """
    dataclass representing the arguments of gen-data
    """

    out: str
    n: int = field(default=20000)
    dim: int = field(default=16)
    classes: int = field(default=4)
    sep: float = field(default=8.0)
    seed: int = field(default=0)


@dataclass
class RunCliArgs:
    """
    dataclass representing the non-config arguments shared by run and sweep
    """

    seed: Optional[int] = field(default=None)
    workers: Optional[int] = field(default=None)
    output_dir: Optional[str] = field(default=None)


@dataclass
class SweepCliArgs:
    """
    dataclass representing what a sweep iterates over; exactly one axis is set
    """

    gammas: Optional[tuple] = field(default=None)
    deltas: Optional[tuple] = field(default=None)
    behaviors: Optional[tuple] = field(default=None)
    modes: Optional[tuple] = field(default=None)
    out: Optional[str] = field(default=None)

    @property
    def axis(self) -> str:
        if self.modes is not None:
            return "mode"
        if self.behaviors is not None:
            return "behavior"
        return "noise"


ALL_BEHAVIORS = ",".join(BEHAVIORS)
ALL_MODES = ",".join(MODES)
