"""Callbacks for the federated training loop"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, List, Union

from fedfeed.utils.data import ensure_parent

if TYPE_CHECKING:
    from fedfeed.federation import RoundMetrics

LOG = logging.getLogger("fedfeed.callbacks")


class RoundCallback:
    """No-op base; subclasses override what they need"""

    def on_round_end(self, metrics: "RoundMetrics"):
        pass

    def on_train_end(self, history: List["RoundMetrics"]):
        pass


class LogMetricsCallback(RoundCallback):
    def __init__(self, prefix: str = ""):
        self.prefix = prefix

    @staticmethod
    def _fmt(value) -> str:
        return "n/a" if value is None else f"{value:.4f}"

    def on_round_end(self, metrics: "RoundMetrics"):
        LOG.info(
            f"{self.prefix}round {metrics.round}: val_acc={self._fmt(metrics.val_acc)} "
            f"test_acc={self._fmt(metrics.test_acc)} loss_total={self._fmt(metrics.loss_total)} "
            f"({metrics.wall_clock:.2f}s)"
        )
        if metrics.stopped_early:
            LOG.info(f"{self.prefix}early stopping after round {metrics.round}")


class RoundLogCallback(RoundCallback):
    """
    Appends one JSON object per round to a JSON-lines file. Only the
    deterministic fields are written; wall-clock time stays in the logs.
    """

    def __init__(self, path: Union[str, Path], repeat: int = None):
        self.path = ensure_parent(path)
        self.repeat = repeat

    def on_round_end(self, metrics: "RoundMetrics"):
        record = metrics.to_log_dict()
        if self.repeat is not None:
            record = {"repeat": self.repeat, **record}
        with open(self.path, "a", encoding="utf-8") as fout:
            fout.write(json.dumps(record) + "\n")
