import itertools
import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from . import ops
from .gradients import GradientCheckError, evaluate_with_gradients, grad_check
from .optim import AdamState, NonFiniteGradientError, adam_step
from .tensor import BACKWARD_RULES, NonFiniteError, ShapeError, Tensor, precision


def _weighted_sum(tensor, weights):
    return ops.reduce_sum(ops.mul(tensor, weights))


class EvaluateWithGradientsTests(SimpleTestCase):
    def test_quadratic_value_and_gradient(self):
        value, (grad,) = evaluate_with_gradients(
            lambda w: ops.reduce_sum(ops.mul(w, w)), [np.array([1.0, 2.0])]
        )

        self.assertEqual(value.item(), 5.0)
        np.testing.assert_array_equal(grad, [2.0, 4.0])

    def test_symmetric_softmax_cross_entropy(self):
        value, (grad,) = evaluate_with_gradients(
            lambda logits: ops.cross_entropy(logits, 0), [np.array([0.0, 0.0])]
        )

        self.assertAlmostEqual(value.item(), math.log(2), places=6)
        np.testing.assert_allclose(grad, [-0.5, 0.5], atol=1e-7)

    def test_gradients_keep_input_shapes(self):
        x = np.ones((2, 3), dtype=np.float32)
        w = np.ones((3, 4), dtype=np.float32)

        _, grads = evaluate_with_gradients(lambda a, b: ops.reduce_sum(ops.matmul(a, b)), [x, w])

        self.assertEqual([g.shape for g in grads], [(2, 3), (3, 4)])
        self.assertEqual(grads[0].dtype, np.float32)

    def test_traced_value_matches_plain_forward_bit_for_bit(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5)).astype(np.float32)
        w = rng.normal(size=(5, 3)).astype(np.float32)

        def network(a, b):
            return ops.softmax(ops.gelu(ops.matmul(a, b)))

        traced, _ = evaluate_with_gradients(network, [x, w])
        plain = network(Tensor(x), Tensor(w))

        np.testing.assert_array_equal(traced.data, plain.data)
        np.testing.assert_array_equal(network(Tensor(x), Tensor(w)).data, plain.data)

    def test_matmul_shape_mismatch_names_the_operation(self):
        with self.assertRaisesMessage(ShapeError, "matmul"):
            ops.matmul(np.ones((2, 3)), np.ones((4, 2)))

    def test_add_shape_mismatch_names_the_operation(self):
        with self.assertRaisesMessage(ShapeError, "add"):
            ops.add(np.ones((2, 3)), np.ones((3, 2)))

    def test_overflow_is_rejected(self):
        with np.errstate(over="ignore"):
            with self.assertRaises(NonFiniteError):
                ops.scale(np.array([3e38], dtype=np.float32), 10.0)

    def test_unused_input_gets_zero_gradient(self):
        _, (gx, gy) = evaluate_with_gradients(
            lambda x, y: ops.reduce_sum(x), [np.ones(3), np.ones(2)]
        )

        np.testing.assert_array_equal(gx, np.ones(3))
        np.testing.assert_array_equal(gy, np.zeros(2))

    def test_tensors_are_read_only(self):
        tensor = Tensor(np.zeros(3))

        with self.assertRaises(ValueError):
            tensor.data[0] = 1.0


class PrimitiveGradientTests(SimpleTestCase):
    """Every primitive's backward rule against central differences, 64-bit, h=1e-3."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def normal(self, *shape):
        return self.rng.normal(size=shape)

    def assertGradientsAgree(self, fn, inputs, samples=60):
        error = grad_check(fn, inputs, samples=samples, h=1e-3)
        self.assertLess(error, 1e-5)

    def test_broadcasting_add_sub_mul(self):
        weights = self.normal(3, 4)

        def fn(a, b, c):
            return _weighted_sum(ops.mul(ops.sub(ops.add(a, b), c), a), weights)

        self.assertGradientsAgree(fn, [self.normal(3, 4), self.normal(4), self.normal(3, 1)])

    def test_scale(self):
        self.assertGradientsAgree(lambda a: ops.reduce_sum(ops.scale(ops.mul(a, a), -2.5)), [self.normal(5)])

    def test_batched_matmul_and_layout(self):
        weights = self.normal(2, 5, 3)

        def fn(a, b):
            product = ops.matmul(a, b)
            moved = ops.transpose(product, (0, 2, 1))
            return _weighted_sum(ops.reshape(moved, (2, 5, 3)), weights)

        self.assertGradientsAgree(fn, [self.normal(2, 3, 4), self.normal(4, 5)])

    def test_gather_with_repeated_ids(self):
        ids = np.array([[0, 2], [2, 5]])
        weights = self.normal(2, 2, 3)

        self.assertGradientsAgree(lambda table: _weighted_sum(ops.gather(table, ids), weights), [self.normal(6, 3)])

    def test_sum_along_axis_and_mean(self):
        weights = self.normal(4)

        def fn(a):
            return ops.add(_weighted_sum(ops.reduce_sum(a, axis=0), weights), ops.reduce_mean(ops.mul(a, a)))

        self.assertGradientsAgree(fn, [self.normal(3, 4)])

    def test_l2_norm(self):
        weights = self.normal(4)

        self.assertGradientsAgree(lambda a: _weighted_sum(ops.l2_norm(a), weights), [self.normal(4, 3)])

    def test_softmax(self):
        weights = self.normal(3, 5)

        self.assertGradientsAgree(lambda a: _weighted_sum(ops.softmax(a), weights), [self.normal(3, 5)])

    def test_gelu(self):
        weights = self.normal(10)

        self.assertGradientsAgree(lambda a: _weighted_sum(ops.gelu(a), weights), [self.normal(10) * 2])

    def test_relu_away_from_the_kink(self):
        x = self.normal(12)
        x = np.where(np.abs(x) < 0.1, 0.5, x)
        weights = self.normal(12)

        self.assertGradientsAgree(lambda a: _weighted_sum(ops.relu(a), weights), [x])

    def test_layer_norm(self):
        weights = self.normal(3, 6)

        def fn(a, gain, bias):
            return _weighted_sum(ops.layer_norm(a, gain, bias), weights)

        self.assertGradientsAgree(fn, [self.normal(3, 6), self.normal(6), self.normal(6)])

    def test_cross_entropy_over_a_batch(self):
        labels = np.array([0, 2, 1, 2])

        self.assertGradientsAgree(lambda logits: ops.cross_entropy(logits, labels), [self.normal(4, 3)])

    def test_two_layer_network(self):
        labels = np.array([1, 0, 2, 2, 1])

        def network(x, w1, b1, w2, b2):
            hidden = ops.gelu(ops.add(ops.matmul(x, w1), b1))
            return ops.cross_entropy(ops.add(ops.matmul(hidden, w2), b2), labels)

        inputs = [self.normal(5, 4), self.normal(4, 6), self.normal(6), self.normal(6, 3), self.normal(3)]
        self.assertGradientsAgree(network, inputs, samples=100)

    def test_gradient_of_sum_is_sum_of_gradients(self):
        x = self.normal(4, 3)
        weights = self.normal(4)

        def first(a):
            return ops.reduce_sum(ops.gelu(a))

        def second(a):
            return _weighted_sum(ops.l2_norm(a), weights)

        with precision(np.float64):
            _, (g_first,) = evaluate_with_gradients(first, [x])
            _, (g_second,) = evaluate_with_gradients(second, [x])
            _, (g_total,) = evaluate_with_gradients(lambda a: ops.add(first(a), second(a)), [x])

        np.testing.assert_allclose(g_total, g_first + g_second, rtol=0, atol=1e-10)

    def test_l2_norm_subgradient_at_zero_row_is_zero(self):
        _, (grad,) = evaluate_with_gradients(
            lambda a: ops.reduce_sum(ops.l2_norm(a)), [np.array([[3.0, 4.0], [0.0, 0.0]])]
        )

        np.testing.assert_allclose(grad, [[0.6, 0.8], [0.0, 0.0]])


class GradCheckTests(SimpleTestCase):
    def test_linear_function_is_exact(self):
        weights = np.arange(1.0, 7.0).reshape(2, 3)

        error = grad_check(lambda a: _weighted_sum(a, weights), [np.ones((2, 3))], samples=6)

        self.assertLess(error, 1e-9)

    def test_corrupted_backward_rule_is_detected(self):
        original = BACKWARD_RULES["gelu"]

        def corrupted(record, g):
            return tuple(grad * 1.01 for grad in original(record, g))

        x = np.linspace(0.5, 2.0, 8)
        with mock.patch.dict(BACKWARD_RULES, {"gelu": corrupted}):
            error = grad_check(lambda a: ops.scale(ops.reduce_sum(ops.gelu(a)), 100.0), [x], samples=8)

        self.assertGreater(error, 1e-3)

    def test_step_outside_range_is_rejected(self):
        with self.assertRaises(ValueError):
            grad_check(lambda a: ops.reduce_sum(a), [np.ones(2)], h=0.1)

    def test_requires_64_bit_inputs(self):
        with self.assertRaisesMessage(ValueError, "64-bit"):
            grad_check(lambda a: ops.reduce_sum(a), [np.ones(2, dtype=np.float32)])

    def test_non_deterministic_function_invalidates_the_check(self):
        counter = itertools.count(1)

        def drifting(a):
            return ops.scale(ops.reduce_sum(a), float(next(counter)))

        with self.assertRaises(GradientCheckError):
            grad_check(drifting, [np.ones(3)])


class AdamTests(SimpleTestCase):
    def test_first_step_moves_by_learning_rate_against_gradient(self):
        state = AdamState.zeros_like(np.zeros(1))

        params, state = adam_step(np.zeros(1), np.array([2.0]), state, lr=0.1)

        self.assertAlmostEqual(params[0], -0.1, places=7)
        self.assertEqual(state.step, 1)

    def test_zero_gradient_is_a_fixed_point(self):
        params = np.array([0.5, -1.5, 3.0])
        state = AdamState.zeros_like(params)

        updated, state = adam_step(params, np.zeros(3), state, lr=0.3)

        np.testing.assert_array_equal(updated, params)
        self.assertEqual(state.step, 1)

    def test_matches_scalar_recurrence_on_quadratic(self):
        lr, beta1, beta2, eps = 0.05, 0.9, 0.999, 1e-8
        w_ref, m, v = 0.0, 0.0, 0.0
        params = np.zeros(1)
        state = AdamState.zeros_like(params)
        for t in range(1, 4):
            g = 2.0 * (w_ref - 1.0)
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            w_ref -= lr * (m / (1 - beta1**t)) / (math.sqrt(v / (1 - beta2**t)) + eps)

            params, state = adam_step(params, 2.0 * (params - 1.0), state, lr=lr)

        self.assertAlmostEqual(params[0], w_ref, places=12)
        self.assertEqual(state.step, 3)

    def test_non_finite_gradient_is_rejected(self):
        state = AdamState.zeros_like(np.zeros(2))

        with self.assertRaises(NonFiniteGradientError):
            adam_step(np.zeros(2), np.array([1.0, np.nan]), state, lr=0.1)

    def test_shape_mismatch_is_rejected(self):
        state = AdamState.zeros_like(np.zeros(2))

        with self.assertRaises(ShapeError):
            adam_step(np.zeros(3), np.zeros(3), state, lr=0.1)

    def test_learning_rate_must_be_positive(self):
        state = AdamState.zeros_like(np.zeros(2))

        with self.assertRaises(ValueError):
            adam_step(np.zeros(2), np.zeros(2), state, lr=0.0)

    def test_inputs_are_not_mutated(self):
        params = np.ones(2)
        state = AdamState.zeros_like(params)

        adam_step(params, np.ones(2), state, lr=0.1)

        np.testing.assert_array_equal(params, np.ones(2))
        np.testing.assert_array_equal(state.first_moment, np.zeros(2))
