"""
End-to-end runs on the full-size synthetic corpus. Slow; enabled with
RUN_ACCEPTANCE_TESTS=True and selectable with ``--tag acceptance``.
"""

import itertools
import logging
import unittest

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, override_settings, tag

from attack.algorithm import run_attack
from attack.config import AttackConfig
from classifier.training import TrainConfig, accuracy, train
from classifier.transformer import ClassifierModel, ModelConfig, predict
from vocab.embedding import embed_sequence
from vocab.tokenizer import TokenSequence, build_vocab

from .corpus import generate_keyword_corpus
from .evaluation import evaluate_attack
from .metrics import similarity_proxy
from .reports import report_json
from .sweep import sweep_alpha

logger = logging.getLogger(__name__)

SEED = 0
acceptance = unittest.skipUnless(settings.RUN_ACCEPTANCE_TESTS, "set RUN_ACCEPTANCE_TESTS=True to run")


def _pipeline():
    train_set = generate_keyword_corpus(1000, SEED, split="train")
    test_set = generate_keyword_corpus(200, SEED + 1, split="test")
    vocab = build_vocab(train_set.texts)
    config = ModelConfig(vocab_size=len(vocab), num_classes=2)
    model, _ = train(ClassifierModel.initialize(config, seed=SEED), train_set.encode(vocab), TrainConfig(seed=SEED))
    return model, vocab, test_set


@tag("acceptance")
@acceptance
@override_settings(PROGRESS_BARS=False)
class PipelineAcceptanceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model, cls.vocab, cls.test_set = _pipeline()
        cls.report = evaluate_attack(cls.model, cls.vocab, cls.test_set, AttackConfig())

    def test_attack_drives_accuracy_down(self):
        aggregates = self.report.aggregates
        logger.info("Pipeline aggregates: %s", aggregates)

        self.assertGreaterEqual(accuracy(self.model, self.test_set.encode(self.vocab)), 0.9)
        self.assertLessEqual(aggregates["adv_accuracy"], 0.1)
        self.assertGreaterEqual(aggregates["mean_similarity"], 0.8)
        self.assertGreaterEqual(aggregates["mean_similarity_all"], 0.8)

    def test_identical_seeds_give_identical_reports(self):
        model, vocab, test_set = _pipeline()

        again = evaluate_attack(model, vocab, test_set, AttackConfig())

        self.assertEqual(report_json(again), report_json(self.report))

    def test_larger_alpha_changes_fewer_tokens(self):
        alphas = [2.0, 5.0, 8.0, 10.0]
        rows = sweep_alpha(self.model, self.vocab, self.test_set.head(100), alphas, lr=0.15)
        logger.info("Alpha sweep: %s", rows)

        for row in rows:
            self.assertIsNotNone(row.mean_token_error_rate, f"no success at alpha={row.alpha}")
        for smaller, larger in zip(rows, rows[1:]):
            with self.subTest(alphas=(smaller.alpha, larger.alpha)):
                self.assertLessEqual(larger.mean_token_error_rate, smaller.mean_token_error_rate)
                self.assertGreaterEqual(larger.mean_similarity, smaller.mean_similarity)
        self.assertGreaterEqual(rows[-1].adv_accuracy, rows[0].adv_accuracy)


@tag("acceptance")
@acceptance
class SmallInstanceOracleTests(SimpleTestCase):
    """
    Two-token sentences over eight candidate tokens in four near-synonym
    pairs, with a linear head. An instance counts only when brute force finds
    a fooling sentence that also clears the similarity threshold.
    """

    CANDIDATES = range(2, 10)
    CONFIG = AttackConfig()

    def _table(self, rng):
        centers = rng.normal(size=(4, 4))
        rows = np.repeat(centers / np.linalg.norm(centers, axis=1, keepdims=True), 2, axis=0)
        rows += rng.normal(scale=0.25, size=rows.shape)
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return np.vstack([np.zeros((2, 4)), rows])

    def _provably_foolable(self, model, sentence, label):
        table = model.embedding_table
        return any(
            predict(model, embed_sequence(TokenSequence(pair), table)) != label
            and similarity_proxy(sentence, pair, table) >= self.CONFIG.similarity_threshold
            for pair in itertools.product(self.CANDIDATES, repeat=2)
        )

    def _instances(self, count):
        rng = np.random.default_rng(SEED)
        found = []
        while len(found) < count:
            model = ClassifierModel.linear(self._table(rng), rng.normal(size=(4, 2)) * 3.0, rng.normal(size=2))
            sentence = tuple(int(i) for i in rng.choice(self.CANDIDATES, size=2))
            label = predict(model, embed_sequence(TokenSequence(sentence), model.embedding_table))
            if self._provably_foolable(model, sentence, label):
                found.append((model, sentence, label))
        return found

    def test_attack_succeeds_on_most_provable_instances(self):
        instances = self._instances(50)

        succeeded = sum(
            run_attack(model, TokenSequence(sentence), label, self.CONFIG).success
            for model, sentence, label in instances
        )
        rate = succeeded / len(instances)
        logger.info("Small-instance oracle: %d/%d succeeded (%.0f%%)", succeeded, len(instances), 100 * rate)

        self.assertGreaterEqual(rate, 0.8)
