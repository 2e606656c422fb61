"""
test module for fedfeed.federation
"""
import json
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pytest

from fedfeed import federation
from fedfeed.datasets import Dataset, generate_synthetic, partition_clients
from fedfeed.federation import (
    AggregationError,
    ClientState,
    FederationConfig,
    RoundError,
    RoundMetrics,
    fedavg,
    run_round,
    select_participants,
    train_federated,
)
from fedfeed.losses import LossSpec
from fedfeed.models import Architecture, ModelParams, accuracy, init_params, train_local
from fedfeed.utils.callbacks import RoundLogCallback
from fedfeed.utils.data import derive_seed

from .e2e.utils import with_temp_dir


def _const(value, d=1, C=2):
    arch = Architecture("linear")
    return ModelParams(arch, np.full(arch.num_params(d, C), float(value)), d, C)


def _clients(num_clients=4, n=240, seed=0):
    data = generate_synthetic(n, 3, 3, 4.0, seed)
    states = []
    for partition in partition_clients(data, num_clients, "uniform_class", seed=seed):
        empty = Dataset.empty(data.num_classes, data.dim)
        states.append(ClientState(partition.client_id, partition, partition.examples, empty))
    return data, states


class TestFedAvg(unittest.TestCase):
    """
    test class for FedAvg aggregation
    """

    def test_identical_inputs(self):
        params = init_params(3, 2, seed=4, sigma=1.0)

        out = fedavg([params, params.with_theta(params.theta), params])

        assert np.array_equal(out.theta, params.theta)

    def test_mean(self):
        out = fedavg([_const(1), _const(2), _const(6)])

        np.testing.assert_allclose(out.theta, 3.0)

    def test_opposite_models_cancel(self):
        params = init_params(3, 4, seed=2, sigma=1.0)

        out = fedavg([params, params.with_theta(-params.theta)])

        assert np.all(out.theta == 0.0)

    def test_weighted(self):
        models = [_const(1), _const(2), _const(6)]

        np.testing.assert_allclose(fedavg(models, (1, 1, 2)).theta, 3.75)
        np.testing.assert_allclose(fedavg(models, (1, 2, 1)).theta, 2.75)

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        models = [init_params(4, 3, seed=i, sigma=rng.uniform(0.1, 10.0)) for i in range(9)]

        forward_order = fedavg(models)
        reversed_order = fedavg(models[::-1])

        assert np.array_equal(forward_order.theta, reversed_order.theta)

    def test_errors(self):
        with pytest.raises(AggregationError):
            fedavg([])
        with pytest.raises(AggregationError):
            fedavg([_const(1), _const(1, d=2)])
        with pytest.raises(AggregationError):
            fedavg([_const(1), _const(2)], (0, 0))
        with pytest.raises(AggregationError):
            fedavg([_const(1), _const(2)], (1, 2, 3))


class TestRunRound(unittest.TestCase):
    """
    test class for a single federated round
    """

    def setUp(self):
        self.data, self.clients = _clients()
        self.params = init_params(3, 3, seed=0)

    def test_single_client_matches_local_training(self):
        config = FederationConfig(LossSpec("cce"), local_epochs=2, batch_size=8, lr=0.1, seed=5)
        (client,) = self.clients[:1]

        new_global, _ = run_round(self.params, [client], config, round_index=1)

        expected = train_local(
            self.params,
            client.batch(config.loss_spec),
            2,
            8,
            0.1,
            config.loss_spec,
            np.random.default_rng(derive_seed(5, "train", client.client_id, 1)),
        )
        assert np.array_equal(new_global.theta, expected.theta)

    def test_zero_epochs_keeps_model(self):
        config = FederationConfig(LossSpec("cce"), local_epochs=0)

        new_global, _ = run_round(self.params, self.clients, config)

        assert np.array_equal(new_global.theta, self.params.theta)

    def test_global_not_mutated(self):
        before = self.params.theta.copy()
        config = FederationConfig(LossSpec("cce"), validation=self.data, local_epochs=1)

        _, metrics = run_round(self.params, self.clients, config)

        assert np.array_equal(self.params.theta, before)
        assert metrics.round == 1
        assert metrics.participants == (0, 1, 2, 3)
        assert 0.0 <= metrics.val_acc <= 1.0
        assert metrics.test_acc is None
        assert metrics.loss_neg is None

    def test_client_without_data_skipped(self):
        empty = Dataset.empty(3, 3)
        idle = ClientState(9, self.clients[0].partition, empty, empty)
        config = FederationConfig(LossSpec("cce"), local_epochs=1)

        with self.assertLogs("fedfeed.federation", level="WARNING") as logs:
            _, metrics = run_round(self.params, self.clients + [idle], config)

        assert "client 9" in logs.output[0]
        assert 9 not in metrics.participants

        with pytest.raises(RoundError):
            run_round(self.params, [idle], config)

    def test_positive_data_ignored_by_complementary_loss(self):
        Q = np.full((3, 3), 0.5)
        np.fill_diagonal(Q, 0.0)
        config = FederationConfig(LossSpec("complementary", Q=Q), local_epochs=1)

        with pytest.raises(RoundError):
            run_round(self.params, self.clients, config)

    def test_first_round_trains_on_negative_feedback(self):
        Q = np.full((3, 3), 0.5)
        np.fill_diagonal(Q, 0.0)
        negatives = [ClientState(c.client_id, c.partition, c.d_neg, c.d_pos) for c in self.clients]
        config = FederationConfig(LossSpec("scheduled", Q=Q, p=0.8), local_epochs=1)

        new_global, metrics = run_round(self.params, negatives, config, round_index=1)

        # alpha = 1 - 0.8**1 already weighs the complementary term
        assert not np.array_equal(new_global.theta, self.params.theta)
        assert metrics.loss_pos is None
        assert metrics.loss_neg is not None

    def test_partial_participation(self):
        config = FederationConfig(LossSpec("cce"), participation=0.5, seed=3)

        first = select_participants(self.clients, config, 2)
        second = select_participants(self.clients, config, 2)

        assert len(first) == 2
        assert [c.client_id for c in first] == [c.client_id for c in second]
        assert [c.client_id for c in first] == sorted(c.client_id for c in first)

    def test_workers_do_not_change_results(self):
        results = []
        for workers in (1, 4):
            config = FederationConfig(
                LossSpec("cce"), validation=self.data, local_epochs=2, workers=workers, seed=1
            )
            results.append(run_round(self.params, self.clients, config, round_index=3))

        (single, single_metrics), (pooled, pooled_metrics) = results
        assert np.array_equal(single.theta, pooled.theta)
        assert single_metrics.to_log_dict() == pooled_metrics.to_log_dict()


def _scripted_rounds(val_accs):
    """run_round stand-in returning a marker model and the scripted accuracy"""

    def fake(global_params, clients, config, round_index=1):
        marker = global_params.with_theta(np.full(len(global_params.theta), float(round_index)))
        metrics = RoundMetrics(round_index, val_accs[round_index - 1], None, None, None, None)
        return marker, metrics

    return fake


class TestTrainFederated(unittest.TestCase):
    """
    test class for the multi-round loop and early stopping
    """

    def setUp(self):
        self.data, self.clients = _clients(num_clients=2, n=120)
        self.params = init_params(3, 3, seed=0)

    def test_single_round(self):
        config = FederationConfig(LossSpec("cce"), validation=self.data, max_rounds=1, local_epochs=1)

        best, history = train_federated(self.params, self.clients, config)

        assert len(history) == 1
        assert history[0].stopped_early is False
        assert not np.array_equal(best.theta, self.params.theta)

    def test_two_clients_improve_on_start(self):
        data, clients = _clients(num_clients=2, n=400, seed=3)
        start = init_params(3, 3, init="zeros")
        config = FederationConfig(
            LossSpec("cce"), validation=data, max_rounds=5, patience=0, local_epochs=1
        )

        best, history = train_federated(start, clients, config)

        assert len(history) == 5
        assert max(m.val_acc for m in history) > accuracy(start, data)
        assert accuracy(best, data) == max(m.val_acc for m in history)

    def test_plateau_stops_early(self):
        config = FederationConfig(LossSpec("cce"), max_rounds=10, patience=2, min_delta=0.01)
        script = [0.5, 0.6, 0.605, 0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7]

        with mock.patch.object(federation, "run_round", _scripted_rounds(script)):
            best, history = train_federated(self.params, self.clients, config)

        assert [m.round for m in history] == [1, 2, 3, 4]
        assert [m.stopped_early for m in history] == [False, False, False, True]
        # 0.605 misses reference + min_delta but is still the best accuracy seen
        assert best.theta[0] == 3.0

    def test_patience_zero_runs_every_round(self):
        config = FederationConfig(LossSpec("cce"), max_rounds=6, patience=0)

        with mock.patch.object(federation, "run_round", _scripted_rounds([0.5] * 6)):
            best, history = train_federated(self.params, self.clients, config)

        assert len(history) == 6
        assert not any(m.stopped_early for m in history)
        assert best.theta[0] == 1.0

    def test_no_stop_flag_on_last_round(self):
        config = FederationConfig(LossSpec("cce"), max_rounds=3, patience=2)

        with mock.patch.object(federation, "run_round", _scripted_rounds([0.5] * 3)):
            _, history = train_federated(self.params, self.clients, config)

        assert len(history) == 3
        assert history[-1].stopped_early is False

    def test_before_round_hook(self):
        config = FederationConfig(LossSpec("cce"), max_rounds=3, patience=0)
        seen = []

        def hook(round_index, current, clients):
            seen.append(round_index)
            return clients

        with mock.patch.object(federation, "run_round", _scripted_rounds([0.5] * 3)):
            train_federated(self.params, self.clients, config, before_round=hook)

        assert seen == [1, 2, 3]

    @with_temp_dir
    def test_round_log(self, temp_dir):
        path = Path(temp_dir) / "round-log.jsonl"
        config = FederationConfig(
            LossSpec("cce"),
            validation=self.data,
            max_rounds=2,
            local_epochs=1,
            callbacks=[RoundLogCallback(path, repeat=0)],
        )

        train_federated(self.params, self.clients, config)

        lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert [line["round"] for line in lines] == [1, 2]
        assert list(lines[0]) == [
            "repeat",
            "round",
            "val_acc",
            "test_acc",
            "loss_pos",
            "loss_neg",
            "loss_total",
            "stopped_early",
        ]
        assert lines[0]["loss_neg"] is None

    def test_max_rounds_validated(self):
        with pytest.raises(ValueError):
            train_federated(self.params, self.clients, FederationConfig(LossSpec("cce"), max_rounds=0))
