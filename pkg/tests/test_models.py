"""
test module for fedfeed.models
"""
import math
import unittest
from pathlib import Path

import numpy as np
import pytest

from fedfeed.datasets import generate_synthetic
from fedfeed.losses import LossSpec
from fedfeed.models import (
    Architecture,
    Batch,
    ModelParams,
    ShapeError,
    accuracy,
    check_gradient,
    forward,
    gradient,
    init_params,
    load_params,
    params_from_json,
    params_to_json,
    predict_proba,
    pseudo_label,
    save_params,
    train_local,
)

from .e2e.utils import with_temp_dir


def _mixed_batch(rng, n, d, C, kind):
    X = rng.normal(size=(n, d))
    labels = rng.integers(0, C, n)
    if kind == "complementary":
        negative = np.ones(n, dtype=bool)
    elif kind in ("scheduled", "robust_scheduled"):
        negative = rng.random(n) < 0.4
        negative[0], negative[-1] = False, True
    else:
        negative = np.zeros(n, dtype=bool)
    return Batch(X, labels, negative)


def _swap_free_q(C):
    Q = np.full((C, C), 1.0 / (C - 1))
    np.fill_diagonal(Q, 0.0)
    return Q


class TestInit(unittest.TestCase):
    """
    test class for parameter initialisation
    """

    def test_zeros_gives_uniform_posterior(self):
        for arch in ("linear", "mlp"):
            params = init_params(4, 5, arch, "zeros", hidden=3)
            probs = predict_proba(params, np.random.default_rng(0).normal(size=(7, 4)))
            np.testing.assert_allclose(probs, np.full((7, 5), 0.2))

    def test_gaussian_deterministic(self):
        first = init_params(6, 3, "mlp", "gaussian", seed=5, sigma=0.1, hidden=4)
        second = init_params(6, 3, "mlp", "gaussian", seed=5, sigma=0.1, hidden=4)
        other = init_params(6, 3, "mlp", "gaussian", seed=6, sigma=0.1, hidden=4)

        assert np.array_equal(first.theta, second.theta)
        assert not np.array_equal(first.theta, other.theta)
        assert len(first.theta) == 6 * 4 + 4 + 4 * 3 + 3

    def test_biases_start_at_zero(self):
        params = init_params(3, 4, "linear", "gaussian", seed=1, sigma=1.0)
        _, b = params.unpack()

        assert np.all(b == 0.0)

    def test_bad_shapes(self):
        with pytest.raises(ShapeError):
            init_params(0, 3)
        with pytest.raises(ShapeError):
            ModelParams(Architecture("linear"), np.zeros(5), 2, 2)
        with pytest.raises(ValueError):
            Architecture("mlp", hidden=0)

    def test_theta_read_only(self):
        params = init_params(2, 2, seed=0)

        with pytest.raises(ValueError):
            params.theta[0] = 1.0


class TestForward(unittest.TestCase):
    """
    test class for the forward pass and pseudo labels
    """

    @staticmethod
    def _one_feature(w0, w1):
        return ModelParams(Architecture("linear"), np.array([w0, w1, 0.0, 0.0]), 1, 2)

    def test_known_logits(self):
        posterior = forward(self._one_feature(0.0, math.log(3.0)), np.array([1.0]))

        np.testing.assert_allclose(posterior.probs, [0.25, 0.75])

    def test_large_logits_stable(self):
        posterior = forward(self._one_feature(1000.0, 0.0), np.array([1.0]))

        assert np.all(np.isfinite(posterior.probs))
        np.testing.assert_allclose(posterior.probs, [1.0, 0.0], atol=1e-12)

    def test_simplex(self):
        params = init_params(5, 4, "mlp", "gaussian", seed=2, sigma=2.0, hidden=6)
        probs = predict_proba(params, np.random.default_rng(1).normal(scale=5.0, size=(50, 5)))

        assert np.all(probs >= 0.0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_dimension_mismatch(self):
        params = init_params(3, 2)

        with pytest.raises(ShapeError):
            forward(params, np.zeros(4))
        with pytest.raises(ShapeError):
            predict_proba(params, np.zeros((2, 2)))

    def test_pseudo_label_tie_goes_low(self):
        params = init_params(3, 4, init="zeros")

        assert pseudo_label(params, np.array([1.0, -2.0, 0.5])) == 0
        assert pseudo_label(self._one_feature(0.0, 2.0), np.array([1.0])) == 1

    def test_accuracy_empty(self):
        params = init_params(3, 2)

        assert accuracy(params, generate_synthetic(0, 3, 2, 1.0, 0)) is None


class TestGradients(unittest.TestCase):
    """
    test class for analytic gradients against central differences
    """

    def test_every_loss_kind(self):
        rng = np.random.default_rng(0)
        for C in (2, 5):
            Q = _swap_free_q(C)
            for kind in ("cce", "complementary", "scheduled", "robust", "robust_scheduled"):
                spec = LossSpec(kind, Q=Q, p=0.8, t=3)
                for arch in ("linear", "mlp"):
                    params = init_params(4, C, arch, "gaussian", seed=C, sigma=0.5, hidden=3)
                    for point in range(10):
                        theta = rng.normal(scale=0.5, size=params.theta.shape)
                        batch = _mixed_batch(rng, 9, 4, C, kind)

                        error = check_gradient(params.with_theta(theta), batch, spec)

                        assert error < 1e-4, f"{kind} / {arch} / C={C} / point {point}: {error}"

    def test_cce_gradient_by_hand(self):
        params = init_params(1, 2, init="zeros")
        spec = LossSpec("cce")

        from_pairs = gradient(params, [(np.array([2.0]), 0)], spec)
        from_batch = gradient(params, Batch.positive(np.array([[2.0]]), [0]), spec)

        # P = (0.5, 0.5), dz = P - onehot(0); weights scale by x = 2
        np.testing.assert_allclose(from_pairs, [-1.0, 1.0, -0.5, 0.5])
        assert np.array_equal(from_pairs, from_batch)


class TestTrainLocal(unittest.TestCase):
    """
    test class for local SGD
    """

    def setUp(self):
        self.params = init_params(4, 3, seed=0)
        self.spec = LossSpec("cce")

    def test_empty_batch_unchanged(self):
        out = train_local(self.params, Batch.empty(4), 5, 8, 0.1, self.spec, np.random.default_rng(0))

        assert out is self.params

    def test_zero_lr_or_epochs_unchanged(self):
        data = generate_synthetic(30, 4, 3, 3.0, 0)
        batch = Batch.positive(data.features, data.labels)

        for epochs, lr in ((5, 0.0), (0, 0.1)):
            out = train_local(self.params, batch, epochs, 8, lr, self.spec, np.random.default_rng(0))
            assert np.array_equal(out.theta, self.params.theta)

    def test_separable_data_fits(self):
        data = generate_synthetic(400, 4, 3, 8.0, 7)
        batch = Batch.positive(data.features, data.labels)

        out = train_local(self.params, batch, 20, 32, 0.1, self.spec, np.random.default_rng(1))

        assert accuracy(out, data) >= 0.99
        assert not np.array_equal(out.theta, self.params.theta)

    def test_deterministic_given_rng(self):
        data = generate_synthetic(100, 4, 3, 2.0, 3)
        batch = Batch.positive(data.features, data.labels)

        first = train_local(self.params, batch, 3, 10, 0.1, self.spec, np.random.default_rng(9))
        second = train_local(self.params, batch, 3, 10, 0.1, self.spec, np.random.default_rng(9))

        assert np.array_equal(first.theta, second.theta)

    def test_complementary_only_moves_away(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(60, 4))
        batch = Batch(X, np.zeros(60, dtype=np.int64), np.ones(60, dtype=bool))
        spec = LossSpec("complementary", Q=_swap_free_q(3))

        out = train_local(self.params, batch, 10, 10, 0.5, spec, np.random.default_rng(0))

        before = predict_proba(self.params, X)[:, 0].mean()
        after = predict_proba(out, X)[:, 0].mean()
        assert after < before


class TestSerialization(unittest.TestCase):
    """
    test class for model persistence
    """

    def test_json_exact(self):
        params = init_params(5, 3, "mlp", "gaussian", seed=3, sigma=0.3, hidden=4)

        restored = params_from_json(params_to_json(params))

        assert restored.architecture == params.architecture
        assert np.array_equal(restored.theta, params.theta)

    @with_temp_dir
    def test_save_load(self, temp_dir):
        params = init_params(2, 2, seed=1, sigma=1.0)
        path = Path(temp_dir) / "seed-model.json"

        save_params(params, path)

        assert np.array_equal(load_params(path).theta, params.theta)
