import itertools
import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from classifier.transformer import ClassifierModel, ModelConfig, input_gradient, loss, predict
from harness.metrics import similarity_proxy
from numerics.gradients import grad_check
from vocab.embedding import embed_sequence
from vocab.tokenizer import TokenSequence

from .algorithm import AttackError, AttackResult, AttackState, AttackStatus, attack_step, run_attack
from .config import AttackConfig, AttackConfigError
from .losses import (
    adv_gradient,
    adv_loss,
    block_sparse_loss,
    descent_direction,
    objective,
    objective_gradient,
    objective_tensor,
    rescale_rows,
    step_direction,
)

# ids 0/1 are the special tokens; 2..6 are A..E
SUBSTITUTION_TABLE = np.array(
    [[0.0, 0.0], [0.0, 0.0], [1.0, 0.02], [1.0, -0.2], [1.0, -0.6], [-1.0, 0.0], [0.0, 1.0]]
)
# class 0 while the mean embedding's second coordinate is positive
SUBSTITUTION_HEAD = 50.0 * np.array([[0.0, 0.0], [1.0, -1.0]])


def _substitution_model():
    return ClassifierModel.linear(SUBSTITUTION_TABLE, SUBSTITUTION_HEAD)


def _direction_model():
    table = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.1]])
    return ClassifierModel.linear(table, np.array([[1.0, -1.0], [0.0, 0.0]]))


class AttackConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = AttackConfig()

        self.assertEqual(cfg.alpha_schedule, (10.0, 8.0, 5.0, 2.0))
        self.assertEqual(cfg.lr_schedule, (0.15, 0.3))
        self.assertEqual(cfg.max_iterations, 500)
        self.assertEqual(cfg.similarity_threshold, 0.8)
        self.assertEqual(cfg.gradient_scale, 2.0)

    def test_settings_supply_the_defaults(self):
        with self.settings(ATTACK_MAX_ITERS=42, ATTACK_ALPHA_SET=(3.0, 1.0)):
            cfg = AttackConfig.from_settings()

        self.assertEqual(cfg.max_iterations, 42)
        self.assertEqual(cfg.alpha_schedule, (3.0, 1.0))

    def test_invalid_values_are_rejected(self):
        for bad in (
            {"alpha_schedule": (2.0, 5.0)},
            {"alpha_schedule": (5.0, 5.0)},
            {"alpha_schedule": (1.0, -1.0)},
            {"alpha_schedule": ()},
            {"lr_schedule": (0.0,)},
            {"max_iterations": -1},
            {"similarity_threshold": 1.5},
            {"gradient_scale": 0.0},
        ):
            with self.subTest(**{key: str(value) for key, value in bad.items()}):
                with self.assertRaises(AttackConfigError):
                    AttackConfig(**bad)

    def test_env_style_file_overrides_the_base(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "attack.env"
            path.write_text("ATTACK_MAX_ITERS=7\nATTACK_ALPHA_SET=4,1\n", encoding="utf-8")

            cfg = AttackConfig.from_file(path, base=AttackConfig(lr_schedule=(0.5,)))

        self.assertEqual(cfg.max_iterations, 7)
        self.assertEqual(cfg.alpha_schedule, (4.0, 1.0))
        self.assertEqual(cfg.lr_schedule, (0.5,))

    def test_ini_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "attack.ini"
            path.write_text("[settings]\nATTACK_SIM_THRESHOLD=0.9\n", encoding="utf-8")

            cfg = AttackConfig.from_file(path, base=AttackConfig())

        self.assertEqual(cfg.similarity_threshold, 0.9)
        self.assertEqual(cfg.alpha_schedule, AttackConfig().alpha_schedule)

    def test_missing_file_is_rejected(self):
        with self.assertRaises(AttackConfigError):
            AttackConfig.from_file("/nonexistent/attack.env")

    def test_overrides_skip_unset_values(self):
        cfg = AttackConfig().with_overrides(max_iterations=3, seed=None)

        self.assertEqual(cfg.max_iterations, 3)
        self.assertEqual(cfg.seed, 0)
        self.assertEqual(AttackConfig.from_dict(cfg.to_dict()), cfg)


class LossTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.model = ClassifierModel.linear(rng.normal(size=(8, 3)), rng.normal(size=(3, 2)), rng.normal(size=2))
        self.e_x = self.model.params["token_embedding"][[2, 5, 7]]

    def test_uniform_logits_give_minus_ln_two(self):
        model = ClassifierModel.linear(np.ones((4, 2)), np.zeros((2, 2)))

        self.assertAlmostEqual(adv_loss(model, np.ones((2, 2)), 0), -math.log(2), places=12)

    def test_adversarial_loss_is_the_negated_classifier_loss(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            e_adv = rng.normal(size=(3, 3))
            self.assertEqual(adv_loss(self.model, e_adv, 1), -loss(self.model, e_adv, 1))

    def test_adversarial_loss_falls_as_logits_move_away_from_the_label(self):
        model = ClassifierModel.linear(np.ones((3, 2)), np.array([[1.0, -1.0], [0.0, 0.0]]))

        values = [adv_loss(model, np.array([[c, 0.0]]), 0) for c in (2.0, 1.0, 0.0, -1.0, -2.0)]

        self.assertTrue(all(later < earlier for earlier, later in zip(values, values[1:])))

    def test_block_sparse_loss(self):
        self.assertEqual(block_sparse_loss(np.zeros((3, 4))), 0.0)
        self.assertEqual(block_sparse_loss(np.array([[3.0, 4.0], [0.0, 0.0]])), 5.0)

        r = np.random.default_rng(2).normal(size=(5, 3))
        self.assertAlmostEqual(block_sparse_loss(r[[4, 2, 0, 3, 1]]), block_sparse_loss(r), places=12)
        self.assertGreater(block_sparse_loss(r), 0.0)

    def test_objective_terms(self):
        e_adv = self.e_x + np.random.default_rng(3).normal(size=self.e_x.shape)

        self.assertEqual(objective(self.model, self.e_x, e_adv, 0, 0.0), adv_loss(self.model, e_adv, 0))
        self.assertEqual(objective(self.model, self.e_x, self.e_x, 0, 2.5), -loss(self.model, self.e_x, 0))
        expected = adv_loss(self.model, e_adv, 0) + 0.7 * block_sparse_loss(e_adv - self.e_x)
        self.assertAlmostEqual(objective(self.model, self.e_x, e_adv, 0, 0.7), expected, places=12)

    def test_negative_alpha_and_shape_mismatch_are_rejected(self):
        with self.assertRaises(ValueError):
            objective(self.model, self.e_x, self.e_x, 0, -1.0)
        with self.assertRaises(ValueError):
            objective(self.model, self.e_x, self.e_x[:2], 0, 1.0)

    def test_gradient_is_adversarial_gradient_plus_group_subgradient(self):
        e_adv = self.e_x + np.random.default_rng(4).normal(size=self.e_x.shape)
        r = e_adv - self.e_x

        _, grad = objective_gradient(self.model, self.e_x, e_adv, 1, 0.6)

        expected = -input_gradient(self.model, e_adv, 1) + 0.6 * r / np.linalg.norm(r, axis=1, keepdims=True)
        np.testing.assert_allclose(grad, expected, atol=1e-12)

    def test_gradient_matches_central_differences_on_a_transformer(self):
        config = ModelConfig(vocab_size=10, dim=8, layers=1, heads=2, max_len=8, mlp_dim=16)
        model = ClassifierModel.initialize(config, seed=5).astype(np.float64)
        e_x = model.params["token_embedding"][[2, 3, 4]]
        e_adv = e_x + np.random.default_rng(6).normal(scale=0.5, size=e_x.shape)

        error = grad_check(lambda e: objective_tensor(model, e_x, e, 0, 1.3), [np.array(e_adv)], samples=24)

        self.assertLess(error, 1e-5)

    def test_rescaled_rows_average_the_scale(self):
        grad = np.array([[3.0, 0.0], [0.0, 1.0], [0.3, 0.4]])

        rescaled = rescale_rows(grad, 2.0)

        np.testing.assert_allclose(np.linalg.norm(rescaled, axis=1), [4.0, 4.0 / 3.0, 2.0 / 3.0])
        np.testing.assert_array_equal(rescale_rows(np.zeros((2, 3)), 2.0), np.zeros((2, 3)))

    def test_zero_rows_leave_only_when_their_gradient_beats_alpha(self):
        grad = np.array([[3.0, 0.0], [0.0, 1.0], [0.5, 0.0]])
        r = np.zeros_like(grad)

        np.testing.assert_allclose(descent_direction(r, grad, 0.5), [[2.5, 0.0], [0.0, 0.5], [0.0, 0.0]])
        np.testing.assert_allclose(descent_direction(r, grad, 2.0), [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(descent_direction(r, grad, 3.0), np.zeros_like(grad))
        np.testing.assert_array_equal(descent_direction(r, grad, 0.0), grad)

    def test_moved_rows_are_pulled_back_towards_the_original(self):
        grad = np.array([[1.0, 0.0], [0.0, 0.0]])
        r = np.array([[0.0, -2.0], [3.0, 4.0]])

        direction = descent_direction(r, grad, 0.5)

        np.testing.assert_allclose(direction, [[1.0, -0.5], [0.3, 0.4]])

    def test_direction_shape_mismatch_and_negative_alpha_are_rejected(self):
        with self.assertRaises(ValueError):
            descent_direction(np.zeros((2, 2)), np.zeros((3, 2)), 1.0)
        with self.assertRaises(ValueError):
            descent_direction(np.zeros((2, 2)), np.zeros((2, 2)), -1.0)

    def test_step_direction_is_the_objective_gradient_at_the_natural_scale(self):
        e_adv = self.e_x + np.random.default_rng(4).normal(size=self.e_x.shape)
        natural = float(np.mean(np.linalg.norm(adv_gradient(self.model, e_adv, 1), axis=1)))

        direction = step_direction(self.model, self.e_x, e_adv, 1, 0.6, natural)

        np.testing.assert_allclose(direction, objective_gradient(self.model, self.e_x, e_adv, 1, 0.6)[1], atol=1e-10)

    def test_larger_alpha_frees_fewer_rows_of_a_transformer(self):
        config = ModelConfig(vocab_size=12, dim=8, layers=1, heads=2, max_len=8, mlp_dim=16)
        model = ClassifierModel.initialize(config, seed=11).astype(np.float64)
        e_x = model.params["token_embedding"][[2, 3, 4, 5, 6, 7]]
        norms = np.linalg.norm(rescale_rows(adv_gradient(model, e_x, 0), 2.0), axis=1)

        free = []
        for alpha in (0.0, 0.5, 1.0, 2.0, 4.0, 1e6):
            moving = np.any(step_direction(model, e_x, e_x, 0, alpha, 2.0) != 0.0, axis=1)
            np.testing.assert_array_equal(moving, norms > alpha)
            free.append(int(moving.sum()))

        self.assertEqual(free[0], 6)
        self.assertEqual(free[-1], 0)
        self.assertEqual(free, sorted(free, reverse=True))


class AttackStepTests(SimpleTestCase):
    def setUp(self):
        self.model = _direction_model()
        self.original = (2, 2)
        self.e_x = embed_sequence(TokenSequence(self.original), self.model.embedding_table)

    def start(self, budget=10):
        return AttackState.start(self.e_x, self.original, prediction=0, budget=budget)

    def test_large_step_moves_rows_to_a_new_token(self):
        state, accepted = attack_step(self.start(), self.model, self.e_x, 0, alpha=0.5, lr=3.0)

        self.assertTrue(accepted)
        self.assertEqual(state.projected, (4, 4))
        self.assertEqual(state.buffer, {(2, 2), (4, 4)})
        self.assertEqual(state.prediction, 1)
        self.assertEqual(state.k, 1)
        np.testing.assert_array_equal(state.e_g, self.model.params["token_embedding"][[4, 4]])

    def test_buffer_hit_keeps_the_continuous_iterate(self):
        state, accepted = attack_step(self.start(), self.model, self.e_x, 0, alpha=0.5, lr=0.2)

        self.assertFalse(accepted)
        self.assertEqual(state.buffer, {(2, 2)})
        self.assertEqual(state.k, 1)
        np.testing.assert_allclose(state.e_g, [[0.8, 0.0], [0.8, 0.0]], atol=1e-7)

    def test_dominant_regulariser_never_leaves_the_original_sentence(self):
        for lr in (0.01, 0.15, 0.3, 3.0):
            with self.subTest(lr=lr):
                state = self.start(budget=5)
                for _ in range(5):
                    state, accepted = attack_step(state, self.model, self.e_x, 0, alpha=1e6, lr=lr)
                    self.assertFalse(accepted)

                self.assertTrue(state.stalled)
                np.testing.assert_array_equal(state.e_g, self.e_x)
                self.assertEqual(state.buffer, {(2, 2)})
                self.assertEqual(state.projected, self.original)
                self.assertEqual(state.k, 5)

    def test_moving_step_is_not_stalled(self):
        state, accepted = attack_step(self.start(), self.model, self.e_x, 0, alpha=0.5, lr=0.2)

        self.assertFalse(accepted)
        self.assertFalse(state.stalled)

    def test_only_freed_rows_change_token(self):
        config = ModelConfig(vocab_size=12, dim=8, layers=1, heads=2, max_len=8, mlp_dim=16)
        model = ClassifierModel.initialize(config, seed=11).astype(np.float64)
        original = (2, 3, 4, 5, 6, 7)
        e_x = embed_sequence(TokenSequence(original), model.embedding_table)
        norms = np.linalg.norm(rescale_rows(adv_gradient(model, e_x, 0), 2.0), axis=1)
        alpha = float(np.median(norms))

        state = AttackState.start(e_x, original, prediction=0, budget=1)
        attack_step(state, model, e_x, 0, alpha=alpha, lr=5.0)

        changed = np.array(state.projected) != np.array(original)
        self.assertFalse(np.any(changed & (norms <= alpha)))

    def test_step_past_the_budget_is_refused(self):
        with self.assertRaises(AttackError):
            attack_step(self.start(budget=0), self.model, self.e_x, 0, alpha=1.0, lr=0.1)

    def test_non_finite_gradient_aborts_with_context(self):
        nan_gradient = np.full((2, 2), np.nan)
        with mock.patch("attack.algorithm.step_direction", return_value=nan_gradient):
            with self.assertRaisesMessage(AttackError, "iteration 1"):
                attack_step(self.start(), self.model, self.e_x, 0, alpha=1.0, lr=0.1)


class RunAttackTests(SimpleTestCase):
    def setUp(self):
        self.model = _substitution_model()
        self.sentence = TokenSequence((2, 2))

    def test_exhaustive_search_confirms_a_fooling_sentence_exists(self):
        table = self.model.embedding_table
        fooling = [
            pair
            for pair in itertools.product(range(2, 7), repeat=2)
            if predict(self.model, embed_sequence(TokenSequence(pair), table)) != 0
        ]

        self.assertIn((3, 3), fooling)

    def test_finds_a_fooling_substitution(self):
        result = run_attack(self.model, self.sentence, 0, AttackConfig())

        self.assertEqual(result.status, AttackStatus.SUCCEEDED)
        self.assertTrue(result.success)
        self.assertEqual(result.adversarial_ids, (3, 3))
        # alphas 5, 4 and 2.5 pin both rows; 1.0 frees them
        self.assertEqual(result.iterations, 4)
        self.assertEqual(result.alpha, 1.0)
        self.assertEqual(result.lr, 0.15)
        self.assertEqual(result.token_error_rate, 1.0)
        self.assertNotEqual(predict(self.model, embed_sequence(TokenSequence(result.adversarial_ids), self.model.embedding_table)), 0)
        self.assertGreaterEqual(result.similarity, 0.8)

    def test_already_misclassified_input_is_skipped(self):
        result = run_attack(self.model, self.sentence, 1, AttackConfig())

        self.assertEqual(result.status, AttackStatus.SKIPPED)
        self.assertEqual(result.adversarial_ids, self.sentence.ids)
        self.assertEqual(result.token_error_rate, 0.0)
        self.assertEqual(result.iterations, 0)

    def test_zero_budget_returns_the_original(self):
        result = run_attack(self.model, self.sentence, 0, AttackConfig(max_iterations=0))

        self.assertEqual(result.status, AttackStatus.EXHAUSTED_BUDGET)
        self.assertEqual(result.adversarial_ids, self.sentence.ids)
        self.assertEqual(result.iterations, 0)

    def test_pinned_schedule_ends_with_budget_left(self):
        cfg = AttackConfig(alpha_schedule=(10.0, 8.0))

        result = run_attack(self.model, self.sentence, 0, cfg)

        self.assertEqual(result.status, AttackStatus.SCHEDULE_EXHAUSTED)
        self.assertFalse(result.success)
        self.assertEqual(result.iterations, 4)
        self.assertEqual(result.adversarial_ids, self.sentence.ids)
        self.assertEqual(result.accepted, 0)

    def test_per_point_caps_end_the_schedule_early(self):
        cfg = AttackConfig(alpha_schedule=(2.0,), lr_schedule=(0.01,), iterations_per_point=3)

        result = run_attack(self.model, self.sentence, 0, cfg)

        self.assertEqual(result.status, AttackStatus.SCHEDULE_EXHAUSTED)
        self.assertEqual(result.iterations, 3)
        self.assertEqual(result.to_dict()["status"], "schedule-exhausted")

    def test_spent_budget_is_reported_as_exhausted(self):
        cfg = AttackConfig(alpha_schedule=(2.0,), lr_schedule=(0.01,), max_iterations=3)

        result = run_attack(self.model, self.sentence, 0, cfg)

        self.assertEqual(result.status, AttackStatus.EXHAUSTED_BUDGET)
        self.assertEqual(result.iterations, 3)

    def test_empty_sequence_is_rejected(self):
        with self.assertRaises(AttackError):
            run_attack(self.model, TokenSequence(()), 0, AttackConfig())

    def test_dissimilar_fooling_sentence_counts_as_failure(self):
        cfg = AttackConfig(similarity_threshold=0.99, max_iterations=40)

        result = run_attack(self.model, self.sentence, 0, cfg)

        self.assertEqual(result.status, AttackStatus.BELOW_SIMILARITY_THRESHOLD)
        self.assertFalse(result.success)
        self.assertEqual(result.adversarial_ids, (3, 3))
        self.assertLess(result.similarity, 0.99)
        self.assertLessEqual(result.iterations, 40)

    def test_identical_inputs_give_identical_results(self):
        cfg = AttackConfig(max_iterations=30)
        rng = np.random.default_rng(7)
        model = ClassifierModel.linear(rng.normal(size=(9, 3)), rng.normal(size=(3, 2)) * 4)
        sentence = TokenSequence((2, 5, 8))
        label = predict(model, embed_sequence(sentence, model.embedding_table))

        self.assertEqual(run_attack(model, sentence, label, cfg), run_attack(model, sentence, label, cfg))

    def test_result_serialisation(self):
        result = run_attack(self.model, self.sentence, 0, AttackConfig())

        self.assertEqual(AttackResult.from_dict(result.to_dict()), result)
        self.assertEqual(result.to_dict()["status"], "succeeded")


class AttackPropertyTests(SimpleTestCase):
    """Contracts that must hold on every run, checked over random linear instances."""

    def instances(self, count, seed):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            table = rng.normal(size=(10, 3))
            model = ClassifierModel.linear(table, rng.normal(scale=3.0, size=(3, 2)))
            sentence = TokenSequence(tuple(int(t) for t in rng.integers(2, 10, size=int(rng.integers(2, 5)))))
            label = predict(model, embed_sequence(sentence, model.embedding_table))
            yield model, sentence, label

    def test_result_contracts(self):
        cfg = AttackConfig(max_iterations=25, iterations_per_point=5, similarity_threshold=0.5)
        for model, sentence, label in self.instances(20, seed=8):
            result = run_attack(model, sentence, label, cfg)

            self.assertEqual(len(result.adversarial_ids), len(sentence))
            self.assertLessEqual(result.iterations, cfg.max_iterations)
            self.assertLessEqual(result.accepted, result.iterations)
            if result.success:
                e_adv = embed_sequence(TokenSequence(result.adversarial_ids), model.embedding_table)
                self.assertNotEqual(predict(model, e_adv), label)
                self.assertGreaterEqual(
                    similarity_proxy(sentence.ids, result.adversarial_ids, model.embedding_table),
                    cfg.similarity_threshold,
                )
                self.assertGreater(result.token_error_rate, 0.0)

    def test_buffer_only_grows_by_accepted_sentences(self):
        for model, sentence, label in self.instances(10, seed=9):
            e_x = embed_sequence(sentence, model.embedding_table)
            state = AttackState.start(e_x, sentence.ids, prediction=label, budget=15)
            seen = [sentence.ids]
            while state.k < state.budget:
                state, accepted = attack_step(state, model, e_x, label, alpha=0.2, lr=0.3)
                if accepted:
                    self.assertNotIn(state.projected, seen)
                    seen.append(state.projected)
                self.assertEqual(len(state.buffer), len(seen))
            self.assertEqual(state.k, 15)
            self.assertEqual(state.accepted, len(seen) - 1)
