#!/usr/bin/env python3
"""
Unit tests for the forward pass, backpropagation and gradient checks

Run tests:
    python -m pytest tests/test_network.py -v
"""

import os
import sys
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
from src import layers as L
from src.errors import NonFiniteInputError, ShapeMismatchError
from src.losses import categorical_cross_entropy, softmax
from src.model_zoo import build_vgg16_transfer, count_parameters, full_mask, init_parameters
from src.network import (EVAL_MODE, TRAIN_MODE, batch_loss, check_gradients,
                         compute_gradients, forward)
from src.rng import SplitMix64
from tests.fixtures import tiny_vanilla


def random_batch(seed, batch, shape, classes):
    rng = SplitMix64(seed)
    x = rng.uniform((batch,) + shape)
    labels = np.eye(classes)[[int(v) % classes for v in rng.next_block(batch)]]
    return x, labels


class TestSoftmaxAndLoss(unittest.TestCase):
    """Probabilities and cross-entropy"""

    def test_uniform_logits(self):
        np.testing.assert_allclose(softmax(np.zeros(5)), np.full(5, 0.2), atol=1e-15)

    def test_large_logit_stable(self):
        p = softmax(np.array([1000.0, 0, 0, 0, 0]))
        np.testing.assert_allclose(p, [1, 0, 0, 0, 0], atol=1e-12)

    @given(st.lists(st.integers(min_value=-1000, max_value=1000), min_size=1, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_rows_sum_to_one_and_argmax_kept(self, row):
        logits = np.array(row, dtype=np.float64)
        p = softmax(logits)
        self.assertAlmostEqual(float(p.sum()), 1.0, delta=1e-6)
        self.assertEqual(int(np.argmax(p)), int(np.argmax(logits)))

    def test_non_finite_logits(self):
        with self.assertRaises(NonFiniteInputError):
            softmax(np.array([0.0, np.nan]))

    def test_uniform_loss_is_ln5(self):
        p = np.full((3, 5), 0.2)
        onehot = np.eye(5)[[0, 2, 4]]
        self.assertAlmostEqual(categorical_cross_entropy(p, onehot), np.log(5.0), delta=1e-9)

    def test_perfect_prediction(self):
        onehot = np.eye(5)[[1, 3]]
        self.assertLessEqual(categorical_cross_entropy(onehot.copy(), onehot), 1.2e-7)

    def test_two_row_loss(self):
        p = np.array([[0.5, 0.5], [0.75, 0.25]])
        onehot = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertAlmostEqual(categorical_cross_entropy(p, onehot), (np.log(2) + np.log(4)) / 2, delta=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            categorical_cross_entropy(np.full((2, 3), 1 / 3), np.eye(2))


class TestLayers(unittest.TestCase):
    """Kernel-level checks"""

    def test_conv_matches_direct_loop(self):
        rng = SplitMix64(1)
        x = rng.uniform((2, 5, 4, 3))
        weight = rng.uniform((3, 3, 3, 2)) - 0.5
        bias = np.array([0.1, -0.2])
        out, _ = L.conv2d_forward(x, weight, bias)
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        expected = np.zeros((2, 5, 4, 2))
        for b in range(2):
            for i in range(5):
                for j in range(4):
                    window = padded[b, i:i + 3, j:j + 3, :]
                    expected[b, i, j] = np.tensordot(window, weight, axes=3) + bias
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_maxpool_floors_and_picks_first_tie(self):
        x = np.ones((1, 5, 5, 1))
        out, (index, _) = L.maxpool_forward(x)
        self.assertEqual(out.shape, (1, 2, 2, 1))
        np.testing.assert_array_equal(index, 0)

    def test_dropout_scales_survivors(self):
        x = np.ones((4, 100))
        out, scale = L.dropout_forward(x, 0.5, SplitMix64(0))
        survivors = out[out != 0]
        np.testing.assert_allclose(survivors, 2.0)
        self.assertGreater(len(survivors), 100)
        self.assertLess(len(survivors), 300)

    def test_dropout_expectation(self):
        x = np.linspace(0.5, 2.0, 8)
        out, _ = L.dropout_forward(np.tile(x, (40000, 1)), 0.3, SplitMix64(9))
        np.testing.assert_allclose(out.mean(axis=0), x, rtol=0.02)

    def test_batchnorm_train_stats(self):
        x = SplitMix64(2).uniform((6, 3, 3, 2)) * 4 + 1
        out, cache = L.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), 1e-5, True)
        np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(cache[5], x.var(axis=(0, 1, 2)))


class TestForward(unittest.TestCase):
    """Forward pass contract"""

    def setUp(self):
        self.arch = tiny_vanilla(dropout=0.5)
        self.params = init_parameters(self.arch, seed=1, dtype=np.float64)
        self.x, self.y = random_batch(5, 4, (8, 8, 3), 3)

    def test_probabilities_sum_to_one(self):
        result = forward(self.arch, self.params, self.x)
        self.assertEqual(result.probabilities.shape, (4, 3))
        np.testing.assert_allclose(result.probabilities.sum(axis=1), 1.0, atol=1e-6)

    def test_eval_is_deterministic(self):
        a = forward(self.arch, self.params, self.x, EVAL_MODE).probabilities
        b = forward(self.arch, self.params, self.x, EVAL_MODE).probabilities
        np.testing.assert_array_equal(a, b)

    def test_train_mode_seeded_dropout(self):
        a = forward(self.arch, self.params, self.x, TRAIN_MODE, dropout_seed=3).probabilities
        b = forward(self.arch, self.params, self.x, TRAIN_MODE, dropout_seed=3).probabilities
        c = forward(self.arch, self.params, self.x, TRAIN_MODE, dropout_seed=4).probabilities
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))

    def test_train_mode_reports_running_updates(self):
        result = forward(self.arch, self.params, self.x, TRAIN_MODE, dropout_seed=0)
        mean, var = result.batch_stats['block1_bn']
        expected = 0.9 * self.params['block1_bn.running_mean'] + 0.1 * mean
        np.testing.assert_allclose(result.running_updates['block1_bn.running_mean'], expected)
        self.assertIn('block1_bn.running_var', result.running_updates)
        # params are not mutated
        np.testing.assert_array_equal(self.params['block1_bn.running_mean'], 0.0)

    def test_wrong_input_shape(self):
        with self.assertRaises(ShapeMismatchError):
            forward(self.arch, self.params, np.zeros((2, 9, 8, 3)))

    def test_missing_parameter(self):
        params = dict(self.params)
        del params['fc1.bias']
        with self.assertRaises(ShapeMismatchError):
            forward(self.arch, params, self.x)

    def test_non_finite_input(self):
        x = self.x.copy()
        x[0, 0, 0, 0] = np.inf
        with self.assertRaises(NonFiniteInputError):
            forward(self.arch, self.params, x)


class TestGradients(unittest.TestCase):
    """Analytic gradients against central finite differences"""

    def setUp(self):
        self.arch = tiny_vanilla()
        self.params = init_parameters(self.arch, seed=7, dtype=np.float64)
        self.mask = full_mask(self.arch)
        self.x, self.y = random_batch(11, 4, (8, 8, 3), 3)

    def test_tiny_network_is_small(self):
        self.assertLessEqual(count_parameters(self.arch).total, 5000)

    def test_gradient_check_train_mode(self):
        report = check_gradients(self.arch, self.params, self.mask, self.x, self.y, epsilon=1e-3)
        self.assertGreater(report.compared, 0.75 * count_parameters(self.arch).total)
        self.assertTrue(report.passed(1e-3), f"worst entry: {report.worst}")

    def test_gradient_check_eval_mode(self):
        report = check_gradients(self.arch, self.params, self.mask, self.x, self.y, mode=EVAL_MODE)
        self.assertTrue(report.passed(1e-3), f"worst entry: {report.worst}")

    def test_gradient_check_with_dropout(self):
        arch = tiny_vanilla(dropout=0.3)
        params = init_parameters(arch, seed=7, dtype=np.float64)
        report = check_gradients(arch, params, full_mask(arch), self.x, self.y, dropout_seed=5)
        self.assertTrue(report.passed(1e-3), f"worst entry: {report.worst}")

    def test_mask_filters_gradients(self):
        mask = {name: name.startswith('predictions') for name in self.mask}
        grads = compute_gradients(self.arch, self.params, mask, self.x, self.y).grads
        self.assertEqual(sorted(grads), ['predictions.bias', 'predictions.weight'])

    def test_no_trainable_parameters(self):
        mask = {name: False for name in self.mask}
        store = compute_gradients(self.arch, self.params, mask, self.x, self.y)
        self.assertEqual(store.grads, {})
        self.assertGreater(store.loss, 0.0)

    def test_loss_matches_batch_loss(self):
        store = compute_gradients(self.arch, self.params, self.mask, self.x, self.y, mode=EVAL_MODE)
        self.assertAlmostEqual(store.loss, batch_loss(self.arch, self.params, self.x, self.y, EVAL_MODE),
                               delta=1e-12)

    def test_frozen_backbone_has_no_gradients(self):
        arch, mask = build_vgg16_transfer((32, 32, 3), 3)
        params = init_parameters(arch, seed=0)
        x, y = random_batch(1, 2, (32, 32, 3), 3)
        grads = compute_gradients(arch, params, mask, x.astype(np.float32), y.astype(np.float32)).grads
        self.assertTrue(grads)
        self.assertFalse(any(name.startswith('block') for name in grads))


def run_tests():
    """Run all tests"""
    suite = unittest.TestLoader().loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == '__main__':
    sys.exit(0 if run_tests() else 1)
