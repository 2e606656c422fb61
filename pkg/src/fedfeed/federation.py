"""
Federated training engine: local client training, FedAvg aggregation and
early stopping on validation accuracy.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from fedfeed.datasets import ClientPartition, Dataset
from fedfeed.feedback import NoiseProfile
from fedfeed.losses import LossSpec, split_means
from fedfeed.models import Batch, ModelParams, accuracy, predict_proba, train_local
from fedfeed.utils.callbacks import RoundCallback
from fedfeed.utils.data import derive_seed
from fedfeed.utils.distributed import map_clients

LOG = logging.getLogger("fedfeed.federation")


class AggregationError(ValueError):
    """Client models cannot be averaged"""


class RoundError(RuntimeError):
    """No client could train in a round"""


@dataclass(frozen=True)
class ClientState:
    """
    One client's view of the federation. d_pos holds pseudo (or gold) labels,
    d_neg holds complementary labels; which of them trains depends on the loss.
    """

    client_id: int
    partition: ClientPartition
    d_pos: Dataset
    d_neg: Dataset
    profile: Optional[NoiseProfile] = None

    def batch(self, loss_spec: LossSpec) -> Batch:
        parts = []
        if loss_spec.uses_positive and len(self.d_pos):
            parts.append(Batch.positive(self.d_pos.features, self.d_pos.labels))
        if loss_spec.uses_negative and len(self.d_neg):
            parts.append(
                Batch(self.d_neg.features, self.d_neg.labels, np.ones(len(self.d_neg), dtype=bool))
            )
        if not parts:
            return Batch.empty(self.partition.examples.dim)
        return Batch.concat(*parts)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    val_acc: Optional[float]
    test_acc: Optional[float]
    loss_pos: Optional[float]
    loss_neg: Optional[float]
    loss_total: Optional[float]
    wall_clock: float = 0.0
    stopped_early: bool = False
    participants: Tuple[int, ...] = ()

    def to_log_dict(self) -> dict:
        return {
            "round": self.round,
            "val_acc": self.val_acc,
            "test_acc": self.test_acc,
            "loss_pos": self.loss_pos,
            "loss_neg": self.loss_neg,
            "loss_total": self.loss_total,
            "stopped_early": self.stopped_early,
        }


@dataclass
class FederationConfig:
    loss_spec: LossSpec
    validation: Optional[Dataset] = None
    test: Optional[Dataset] = None
    local_epochs: int = 5
    batch_size: int = 8
    lr: float = 0.1
    max_rounds: int = 50
    patience: int = 5
    min_delta: float = 0.001
    aggregation: str = "mean"
    participation: float = 1.0
    workers: int = 1
    seed: int = 42
    callbacks: List[RoundCallback] = field(default_factory=list)


def fedavg(params_list: Sequence[ModelParams], weights: Optional[Sequence[float]] = None) -> ModelParams:
    """
    Coordinate-wise (weighted) mean. Sums are exact-rounded with math.fsum so
    the result does not depend on client order.
    """
    if not params_list:
        raise AggregationError("nothing to aggregate")
    first = params_list[0]
    for other in params_list[1:]:
        if not first.same_shape(other):
            raise AggregationError(
                f"architecture mismatch: {first.architecture} (d={first.d}, C={first.C}) "
                f"vs {other.architecture} (d={other.d}, C={other.C})"
            )

    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(params_list),):
            raise AggregationError("one weight per client model is required")
        if np.any(weights < 0) or not np.any(weights > 0):
            raise AggregationError("weights must be nonnegative and not all zero")

    stacked = np.stack([params.theta for params in params_list])
    if np.all(stacked == stacked[0]):
        return first.with_theta(first.theta)
    if weights is None:
        count = len(params_list)
        theta = np.array([math.fsum(column) / count for column in stacked.T])
        return first.with_theta(theta)

    total = math.fsum(weights)
    theta = np.array([math.fsum(column * weights) / total for column in stacked.T])
    return first.with_theta(theta)


def select_participants(clients: Sequence[ClientState], config: FederationConfig, round_index: int):
    ordered = sorted(clients, key=lambda client: client.client_id)
    if config.participation >= 1.0:
        return ordered
    count = max(1, int(round(config.participation * len(ordered))))
    rng = np.random.default_rng(derive_seed(config.seed, "participation", round_index))
    chosen = np.sort(rng.choice(len(ordered), size=count, replace=False))
    return [ordered[idx] for idx in chosen]


def _mean_or_none(values: List[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return float(np.mean(present)) if present else None


def run_round(
    global_params: ModelParams,
    clients: Sequence[ClientState],
    config: FederationConfig,
    round_index: int = 1,
) -> Tuple[ModelParams, RoundMetrics]:
    """
    Train a copy of `global_params` on every participating client and average
    the results. The scheduler step is the round index (round 1 already mixes
    in the complementary loss), or the one-based global local-epoch count when
    the loss schedules by epoch.
    """
    if not clients:
        raise RoundError("no clients")
    start = time.perf_counter()
    by_epoch = config.loss_spec.schedule_unit == "epoch"
    step = (round_index - 1) * config.local_epochs + 1 if by_epoch else round_index
    loss_spec = config.loss_spec.at_step(step)
    participants = select_participants(clients, config, round_index)

    def train_client(client: ClientState):
        batch = client.batch(loss_spec)
        if len(batch) == 0:
            return None
        rng = np.random.default_rng(derive_seed(config.seed, "train", client.client_id, round_index))
        local = train_local(
            global_params,
            batch,
            epochs=config.local_epochs,
            batch_size=config.batch_size,
            lr=config.lr,
            loss_spec=loss_spec,
            rng=rng,
            schedule_by_epoch=by_epoch,
        )
        P = predict_proba(local, batch.X)
        client_losses = split_means(P, batch.labels, batch.negative, loss_spec)
        return local, len(batch), client_losses

    results = map_clients(train_client, participants, workers=config.workers)
    trained = []
    for client, result in zip(participants, results):
        if result is None:
            LOG.warning(f"client {client.client_id} has no usable data; skipped this round")
            continue
        trained.append((client.client_id, *result))
    if not trained:
        raise RoundError(f"round {round_index}: every client was skipped")

    weights = [size for _, _, size, _ in trained] if config.aggregation == "weighted" else None
    new_global = fedavg([local for _, local, _, _ in trained], weights)
    metrics = RoundMetrics(
        round=round_index,
        val_acc=accuracy(new_global, config.validation),
        test_acc=accuracy(new_global, config.test),
        loss_pos=_mean_or_none([losses[0] for _, _, _, losses in trained]),
        loss_neg=_mean_or_none([losses[1] for _, _, _, losses in trained]),
        loss_total=_mean_or_none([losses[2] for _, _, _, losses in trained]),
        wall_clock=time.perf_counter() - start,
        participants=tuple(client_id for client_id, _, _, _ in trained),
    )
    return new_global, metrics


def train_federated(
    global_params: ModelParams,
    clients: Sequence[ClientState],
    config: FederationConfig,
    before_round: Optional[
        Callable[[int, ModelParams, Sequence[ClientState]], Sequence[ClientState]]
    ] = None,
) -> Tuple[ModelParams, List[RoundMetrics]]:
    """
    Run up to `max_rounds` rounds and return the model with the best validation
    accuracy seen, plus every round's metrics. Training stops once `patience`
    consecutive rounds fail to beat the last improvement by `min_delta`;
    patience 0 disables early stopping.
    """
    if config.max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")

    current = global_params
    best_params, best_val = global_params, None
    reference, stale = None, 0
    history: List[RoundMetrics] = []

    rounds = tqdm(
        range(1, config.max_rounds + 1), desc="rounds", disable=None, leave=False
    )
    for round_index in rounds:
        if before_round is not None:
            clients = before_round(round_index, current, clients)
        current, metrics = run_round(current, clients, config, round_index)
        val_acc = metrics.val_acc if metrics.val_acc is not None else -math.inf

        if best_val is None or val_acc > best_val:
            best_params, best_val = current, val_acc
        if reference is None or val_acc >= reference + config.min_delta:
            reference, stale = val_acc, 0
        else:
            stale += 1

        stop = config.patience > 0 and stale >= config.patience and round_index < config.max_rounds
        if stop:
            metrics = replace(metrics, stopped_early=True)
        history.append(metrics)
        for callback in config.callbacks:
            callback.on_round_end(metrics)
        if stop:
            break

    for callback in config.callbacks:
        callback.on_train_end(history)
    return best_params, history
