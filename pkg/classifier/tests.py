import math

import numpy as np
from django.test import SimpleTestCase

from numerics import ops
from numerics.gradients import grad_check

from .training import TrainConfig, TrainingError, accuracy, pad_batch, train
from .transformer import (
    ClassifierModel,
    ModelConfig,
    ModelInputError,
    encode,
    forward_logits,
    input_gradient,
    loss,
    loss_tensor,
    predict,
    probabilities,
)


def _small_config(**overrides):
    values = dict(vocab_size=12, num_classes=2, dim=8, layers=1, heads=2, max_len=10, mlp_dim=16)
    values.update(overrides)
    return ModelConfig(**values)


def _keyword_dataset(size, seed):
    """Sentences of 3-6 filler tokens (ids 6..25) with exactly one class keyword (2,3 positive; 4,5 negative)."""
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(size):
        label = int(rng.integers(2))
        keyword = int(rng.choice([2, 3] if label else [4, 5]))
        words = list(rng.integers(6, 26, size=int(rng.integers(2, 6))))
        words.insert(int(rng.integers(len(words) + 1)), keyword)
        data.append(([int(w) for w in words], label))
    return data


class ForwardTests(SimpleTestCase):
    def setUp(self):
        self.model = ClassifierModel.initialize(_small_config(), seed=1)
        self.embeddings = self.model.params["token_embedding"][[2, 5, 7, 3]]

    def test_zero_head_gives_equal_logits_and_predicts_class_zero(self):
        model = self.model.with_params({"head.weight": np.zeros((8, 2)), "head.bias": np.zeros(2)})

        logits = forward_logits(model, self.embeddings)

        self.assertEqual(logits[0], logits[1])
        self.assertEqual(predict(model, self.embeddings), 0)
        self.assertAlmostEqual(loss(model, self.embeddings, 1), math.log(2), places=6)

    def test_logits_are_finite_for_every_length(self):
        for length in range(1, self.model.config.max_len + 1):
            embeddings = self.model.params["token_embedding"][np.arange(length) % 10 + 2]
            self.assertTrue(np.all(np.isfinite(forward_logits(self.model, embeddings))))

    def test_pooling_ignores_order_without_positional_embeddings(self):
        model = ClassifierModel.initialize(_small_config(positional=False), seed=2)
        embeddings = model.params["token_embedding"][[2, 5, 7, 3]]

        shuffled = embeddings[[3, 0, 2, 1]]

        np.testing.assert_allclose(forward_logits(model, shuffled), forward_logits(model, embeddings), atol=1e-6)

    def test_empty_and_overlong_sequences_are_rejected(self):
        with self.assertRaises(ModelInputError):
            forward_logits(self.model, np.zeros((0, 8), dtype=np.float32))
        with self.assertRaises(ModelInputError):
            forward_logits(self.model, np.ones((11, 8), dtype=np.float32))

    def test_invalid_label_is_rejected(self):
        with self.assertRaises(ModelInputError):
            loss(self.model, self.embeddings, 2)

    def test_loss_matches_direct_softmax_computation(self):
        logits = forward_logits(self.model, self.embeddings).astype(np.float64)
        expected = -math.log(math.exp(logits[1]) / sum(math.exp(v) for v in logits))

        self.assertAlmostEqual(loss(self.model, self.embeddings, 1), expected, places=5)
        np.testing.assert_allclose(probabilities(self.model, self.embeddings).sum(), 1.0, atol=1e-6)

    def test_confident_logits_give_near_zero_loss(self):
        table = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        model = ClassifierModel.linear(table, np.array([[40.0, -40.0], [0.0, 0.0]]))

        self.assertLess(loss(model, table[[2, 2]], 0), 1e-6)

    def test_prediction_survives_positive_rescaling_of_the_head(self):
        rng = np.random.default_rng(3)
        table = rng.normal(size=(6, 3))
        weight, bias = rng.normal(size=(3, 4)), rng.normal(size=4)
        embeddings = table[[2, 4, 5]]
        base = predict(ClassifierModel.linear(table, weight, bias), embeddings)

        for factor in (0.01, 3.0, 250.0):
            scaled = ClassifierModel.linear(table, weight * factor, bias * factor)
            self.assertEqual(predict(scaled, embeddings), base)

    def test_model_and_projection_table_share_embedding_rows(self):
        self.assertIs(self.model.embedding_table.matrix, self.model.params["token_embedding"])
        with self.assertRaises(ValueError):
            self.model.params["token_embedding"][2, 0] = 1.0


class InputGradientTests(SimpleTestCase):
    def setUp(self):
        self.model = ClassifierModel.initialize(_small_config(layers=2), seed=4).astype(np.float64)
        self.embeddings = self.model.params["token_embedding"][[3, 8, 2, 9, 4]]

    def test_gradient_has_the_input_shape_only(self):
        grad = input_gradient(self.model, self.embeddings, 0)

        self.assertEqual(grad.shape, self.embeddings.shape)

    def test_matches_central_differences(self):
        error = grad_check(lambda e: loss_tensor(self.model, e, 1), [np.array(self.embeddings)], samples=40)

        self.assertLess(error, 1e-5)

    def test_full_loss_against_every_weight(self):
        names = self.model.param_names
        ids = np.array([[3, 8, 2, 9, 4], [5, 7, 1, 1, 1]])
        mask = ids != 1
        labels = np.array([0, 1])

        def fn(*tensors):
            params = dict(zip(names, tensors))
            return ops.cross_entropy(
                encode(self.model.config, params, ops.gather(params["token_embedding"], ids), mask), labels
            )

        error = grad_check(fn, [np.array(self.model.params[n]) for n in names], samples=200)

        self.assertLess(error, 1e-5)

    def test_masked_position_gets_exactly_zero_gradient(self):
        mask = np.array([True, True, True, False, False])

        grad = input_gradient(self.model, self.embeddings, 1, mask=mask)

        np.testing.assert_array_equal(grad[3:], 0.0)
        self.assertTrue(np.any(grad[:3] != 0.0))


class TrainingTests(SimpleTestCase):
    def setUp(self):
        self.dataset = _keyword_dataset(256, seed=5)

    def test_pad_batch_masks_the_padding(self):
        ids, mask = pad_batch([[4, 5, 6], [7]], max_len=10)

        np.testing.assert_array_equal(ids, [[4, 5, 6], [7, 1, 1]])
        np.testing.assert_array_equal(mask, [[True, True, True], [True, False, False]])

    def test_attention_free_model_separates_keyword_sentences(self):
        config = ModelConfig(vocab_size=26, dim=8, layers=0, heads=1, max_len=10, positional=False, final_norm=False)
        model = ClassifierModel.initialize(config, seed=6)

        trained, history = train(model, self.dataset, TrainConfig(epochs=10, batch_size=32, lr=0.05, seed=0))

        self.assertEqual(len(history.epochs), 10)
        self.assertGreaterEqual(accuracy(trained, self.dataset), 0.99)
        self.assertLess(history.epochs[-1].loss, history.epochs[0].loss)

    def test_same_seed_gives_identical_parameters(self):
        model = ClassifierModel.initialize(_small_config(vocab_size=26), seed=7)
        cfg = TrainConfig(epochs=2, batch_size=16, lr=0.01, seed=3)

        first, _ = train(model, self.dataset[:64], cfg)
        second, _ = train(model, self.dataset[:64], cfg)

        for name in first.param_names:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_zero_epochs_leave_the_model_unchanged(self):
        model = ClassifierModel.initialize(_small_config(vocab_size=26), seed=8)

        trained, history = train(model, self.dataset, TrainConfig(epochs=0))

        self.assertIs(trained, model)
        self.assertEqual(history.epochs, [])

    def test_empty_dataset_is_rejected(self):
        model = ClassifierModel.initialize(_small_config(), seed=9)

        with self.assertRaises(TrainingError):
            train(model, [], TrainConfig(epochs=1))

    def test_out_of_range_label_is_rejected(self):
        model = ClassifierModel.initialize(_small_config(), seed=9)

        with self.assertRaises(TrainingError):
            train(model, [([2, 3], 2)], TrainConfig(epochs=1))
