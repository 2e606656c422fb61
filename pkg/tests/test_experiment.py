"""
test module for fedfeed.experiment
"""
import json
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pytest

from fedfeed import experiment, feedback
from fedfeed.common.const import (
    DEFAULT_CONFIG,
    FEEDBACK_LOG_FILE,
    REPORT_FILE,
    RESOLVED_CONFIG_FILE,
    ROUND_LOG_FILE,
    SCHEDULER_P_GRID,
    SEED_MODEL_FILE,
)
from fedfeed.datasets import Dataset, DatasetParseError, generate_synthetic
from fedfeed.experiment import (
    Report,
    RepeatResult,
    behavior_spec,
    loss_spec_for,
    run_experiment,
    sweep_modes,
    sweep_noise,
    train_seed,
)
from fedfeed.feedback import BehaviorSpec
from fedfeed.models import load_params, predict
from fedfeed.utils.config import ConfigError, normalize_config, validate_config
from fedfeed.utils.dict import DictDefault

from .e2e.utils import with_temp_dir


def _cfg(**overrides) -> DictDefault:
    cfg = DictDefault(
        {
            "n": 600,
            "dim": 4,
            "classes": 3,
            "class_sep": 6.0,
            "clients": 3,
            "k": 0.05,
            "v": 0.2,
            "max_rounds": 3,
            "local_epochs": 1,
            "seed_epochs": 30,
            "repeats": 2,
            "seed": 7,
            **overrides,
        }
    )
    validate_config(cfg)
    normalize_config(cfg)
    return cfg


class TestSeedModel(unittest.TestCase):
    """
    test class for seed model training
    """

    def test_empty_seed_split(self):
        with pytest.raises(ConfigError):
            train_seed(Dataset.empty(3, 4), _cfg(), seed=0)

    def test_single_class(self):
        data = generate_synthetic(90, 4, 3, 8.0, 0)
        only_zero = data.subset(np.flatnonzero(data.labels == 0))

        params = train_seed(only_zero, _cfg(), seed=1)

        assert np.all(predict(params, only_zero.features) == 0)

    def test_deterministic(self):
        data = generate_synthetic(30, 4, 3, 6.0, 0)

        first = train_seed(data, _cfg(), seed=3)
        second = train_seed(data, _cfg(), seed=3)

        assert np.array_equal(first.theta, second.theta)


class TestDatasetSource(unittest.TestCase):
    """
    test class for CSV-backed experiments
    """

    @with_temp_dir
    def test_csv_labels_checked_against_classes(self, temp_dir):
        path = Path(temp_dir) / "data.csv"
        rows = ["id,f0,f1,f2,f3,label", "0,0.5,0.1,0.2,0.3,3"]
        rows += [f"{i},{i * 0.1},0.0,1.0,-1.0,{i % 3}" for i in range(1, 60)]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")

        with pytest.raises(DatasetParseError) as err:
            run_experiment(_cfg(dataset_path=str(path)))

        assert err.value.line == 2


class TestModes(unittest.TestCase):
    """
    test class for per-mode experiment runs
    """

    def test_initial_only_has_no_rounds(self):
        report = run_experiment(_cfg(mode="initial_only"))

        assert report.rounds == [[], []]
        assert report.accuracies == report.seed_accuracies
        assert report.scheduler_p == [None, None]

    def test_tiny_test_fraction_falls_back_to_validation(self):
        report = run_experiment(_cfg(mode="initial_only", test_fraction=1e-4, repeats=1))

        assert 0.0 <= report.accuracies[0] <= 1.0

    def test_modes_without_feedback_skip_simulation(self):
        for mode in ("self_training", "full_supervision"):
            with mock.patch.object(
                feedback, "simulate_feedback", side_effect=AssertionError("simulated")
            ) as simulate:
                report = run_experiment(_cfg(mode=mode, repeats=1))
            simulate.assert_not_called()
            assert len(report.rounds[0]) >= 1

    def test_feedback_modes_simulate(self):
        for mode in ("positive_only", "all_feedback"):
            with mock.patch.object(
                feedback, "simulate_feedback", wraps=feedback.simulate_feedback
            ) as simulate:
                run_experiment(_cfg(mode=mode, repeats=1))
            assert simulate.call_count == 3

    def test_auto_scheduler_p(self):
        report = run_experiment(_cfg(scheduler_p="auto", repeats=1, max_rounds=2))

        assert report.scheduler_p[0] in SCHEDULER_P_GRID
        assert len(report.rounds[0]) <= 2

    def test_refresh_pseudo_labels(self):
        report = run_experiment(
            _cfg(mode="self_training", refresh_pseudo_labels=True, repeats=1, patience=0)
        )

        assert len(report.rounds[0]) == 3

    def test_replay_is_identical(self):
        first = run_experiment(_cfg(mode="all_feedback", behavior="low_noise"))
        second = run_experiment(_cfg(mode="all_feedback", behavior="low_noise", workers=3))

        assert first.to_dict() == second.to_dict()


class TestReport(unittest.TestCase):
    """
    test class for repeat aggregation
    """

    def test_statistics(self):
        runs = [RepeatResult(0.5, 0.4, []), RepeatResult(0.7, 0.45, [])]

        report = Report.from_repeats("all_feedback", runs, {})

        assert report.mean == pytest.approx(0.6)
        assert report.std == pytest.approx(0.1414213562)
        assert report.summary_line() == "mode=all_feedback acc=0.6000 ± 0.1414"

    def test_single_repeat(self):
        report = Report.from_repeats("initial_only", [RepeatResult(0.25, 0.25, [])], {})

        assert report.std is None
        assert report.mean == 0.25
        assert report.summary_line() == "mode=initial_only acc=0.2500 ± 0.0000"

    def test_mean_within_range(self):
        runs = [RepeatResult(0.1 + 0.2, 0.0, []) for _ in range(7)]

        report = Report.from_repeats("self_training", runs, {})

        assert min(report.accuracies) <= report.mean <= max(report.accuracies)


class TestConfigMapping(unittest.TestCase):
    """
    test class for config to component mapping
    """

    def test_loss_kinds(self):
        Q = np.array([[0.0, 1.0], [1.0, 0.0]])

        assert loss_spec_for(_cfg(), "positive_only").kind == "cce"
        assert loss_spec_for(_cfg(robust=True), "positive_only").kind == "robust"
        assert loss_spec_for(_cfg(), "all_feedback", Q, 0.7).kind == "scheduled"
        assert loss_spec_for(_cfg(robust=True), "all_feedback", Q, 0.7).kind == "robust_scheduled"
        assert loss_spec_for(_cfg(), "all_feedback", Q, 0.7).p == 0.7

    def test_behaviors(self):
        assert behavior_spec(_cfg(gamma=0.3, delta=0.6)) == BehaviorSpec.fixed(0.3, 0.6)
        assert behavior_spec(_cfg(behavior="adversarial")).kind == "beta_sampled"

        with self.assertLogs("fedfeed.experiment", level="WARNING"):
            spec = behavior_spec(_cfg(behavior="empirical"))
        assert spec == BehaviorSpec.fixed(0.79, 0.55)


class TestArtifacts(unittest.TestCase):
    """
    test class for files written by a run
    """

    @with_temp_dir
    def test_output_files(self, temp_dir):
        out = Path(temp_dir) / "run"

        report = run_experiment(_cfg(mode="all_feedback"), out)

        resolved = json.loads((out / RESOLVED_CONFIG_FILE).read_text(encoding="utf-8"))
        assert set(DEFAULT_CONFIG) <= set(resolved)
        assert load_params(out / SEED_MODEL_FILE).C == 3
        assert (out / FEEDBACK_LOG_FILE).read_text(encoding="utf-8").startswith("client_id,")

        lines = (out / ROUND_LOG_FILE).read_text(encoding="utf-8").splitlines()
        assert len(lines) == sum(len(rounds) for rounds in report.rounds)
        assert {json.loads(line)["repeat"] for line in lines} == {0, 1}

        saved = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
        assert saved["mean"] == report.mean
        assert "workers" not in saved["config"]

    @with_temp_dir
    def test_no_feedback_log_without_feedback(self, temp_dir):
        out = Path(temp_dir)

        run_experiment(_cfg(mode="full_supervision", repeats=1), out)

        assert not (out / FEEDBACK_LOG_FILE).exists()
        assert (out / REPORT_FILE).exists()


class TestSweeps(unittest.TestCase):
    """
    test class for noise and mode sweeps
    """

    def test_noise_matrix_shape(self):
        matrix = sweep_noise(_cfg(repeats=1, max_rounds=1), [1.0, 0.5], [0.9])

        assert len(matrix) == 2
        assert all(len(row) == 1 for row in matrix)
        assert matrix[1][0].config["gamma"] == 0.5

    def test_noise_grid_errors(self):
        with pytest.raises(ConfigError):
            sweep_noise(_cfg(), [], [0.5])
        with pytest.raises(ConfigError):
            sweep_noise(_cfg(), [1.5], [0.5])

    def test_modes(self):
        reports = sweep_modes(_cfg(repeats=1, max_rounds=1), ["initial_only", "full_supervision"])

        assert list(reports) == ["initial_only", "full_supervision"]
        with pytest.raises(ConfigError):
            sweep_modes(_cfg(), ["supervised"])

    def test_sweep_leaves_config_untouched(self):
        cfg = _cfg(repeats=1, max_rounds=1)
        before = cfg.to_plain()

        experiment.sweep_behaviors(cfg, ["low_noise"])

        assert cfg.to_plain() == before
