import csv
import io
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from celery.result import EagerResult
from django.test import SimpleTestCase, override_settings

from attack.algorithm import AttackStatus
from attack.config import AttackConfig
from classifier.checkpoint import save_checkpoint
from classifier.transformer import ClassifierModel
from vocab.embedding import EmbeddingTable
from vocab.tokenizer import build_vocab, save_vocab, split_words

from .artifacts import default_vocab_path, load_artifacts
from .corpus import CLASS_NAMES, NEGATIVE_KEYWORDS, POSITIVE_KEYWORDS, filler_lexicon, generate_keyword_corpus
from .datasets import DatasetError, LabeledDataset, dataset_statistics, load_dataset, save_dataset
from .evaluation import EvaluationError, compute_aggregates, evaluate_attack, evaluate_attack_distributed
from .metrics import SimilarityError, get_similarity_function, similarity_proxy, token_error_rate
from .reports import ReportError, read_report, render_report, report_csv, write_report
from .sweep import SWEEP_COLUMNS, SweepRow, spearman_correlation, sweep_alpha, write_sweep_csv
from .tasks import _cached_artifacts, attack_example, select_attack_queue

# "a".."e" get ids 2..6; class 0 while the mean embedding's second coordinate is positive
TABLE = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.02], [1.0, -0.2], [1.0, -0.6], [-1.0, 0.0], [0.0, 1.0]])
HEAD = 50.0 * np.array([[0.0, 0.0], [1.0, -1.0]])
# fooled "a a" -> "b b"
FOOLED_SIMILARITY = (1.0 - 0.004) / math.sqrt(1.0004 * 1.04)


def _letters():
    vocab = build_vocab(["a b c d e"])
    return ClassifierModel.linear(TABLE, HEAD), vocab


def _mixed_dataset():
    # fooled, already misclassified, no tokens
    return LabeledDataset((("a a", 0), ("c c", 0), ("", 1)), CLASS_NAMES, "test")


class DatasetTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_save_then_load_preserves_order(self):
        dataset = LabeledDataset((("good film", 1), ("dull plot", 0), ("fine", 1)), CLASS_NAMES)
        path = save_dataset(dataset, self.dir / "dev.jsonl")

        loaded = load_dataset(path, class_names=CLASS_NAMES)

        self.assertEqual(loaded.records, dataset.records)
        self.assertEqual(loaded.split, "dev")

    def test_blank_lines_are_skipped(self):
        path = self._write("d.jsonl", '{"text": "a", "label": 0}\n\n{"text": "b", "label": 1}\n')

        self.assertEqual(len(load_dataset(path)), 2)

    def test_errors_name_the_line(self):
        cases = {
            '{"text": "a", "label": 0}\n{"text": "b"}\n': "line 2: missing label",
            '{"text": "a", "label": 0}\nnot json\n': "line 2: invalid JSON",
            '{"text": 3, "label": 0}\n': "line 1: text must be a string",
            '{"text": "a", "label": -1}\n': "line 1: label must be",
        }
        for content, message in cases.items():
            with self.subTest(message=message):
                path = self._write("bad.jsonl", content)
                with self.assertRaisesMessage(DatasetError, message):
                    load_dataset(path)

    def test_label_outside_the_class_names_is_rejected(self):
        path = self._write("d.jsonl", '{"text": "a", "label": 2}\n')

        with self.assertRaises(DatasetError):
            load_dataset(path, class_names=CLASS_NAMES)

    def test_class_count_is_inferred(self):
        path = self._write("d.jsonl", '{"text": "a", "label": 0}\n{"text": "b", "label": 2}\n')

        self.assertEqual(load_dataset(path).num_classes, 3)

    def test_head(self):
        dataset = _mixed_dataset()

        self.assertEqual(len(dataset.head(2)), 2)
        self.assertIs(dataset.head(None), dataset)

    def test_statistics(self):
        model, vocab = _letters()

        stats = dataset_statistics(_mixed_dataset(), vocab, model)

        self.assertEqual(stats.size, 3)
        self.assertEqual(stats.class_counts, (2, 1))
        self.assertAlmostEqual(stats.average_length, 4 / 3)
        self.assertEqual(stats.clean_accuracy, 0.5)


class CorpusTests(SimpleTestCase):
    def test_same_seed_same_corpus(self):
        self.assertEqual(generate_keyword_corpus(50, seed=3).records, generate_keyword_corpus(50, seed=3).records)
        self.assertNotEqual(generate_keyword_corpus(50, seed=3).records, generate_keyword_corpus(50, seed=4).records)

    def test_label_is_decided_by_the_keywords(self):
        keywords = (set(NEGATIVE_KEYWORDS), set(POSITIVE_KEYWORDS))
        for text, label in generate_keyword_corpus(300, seed=0):
            words = split_words(text)
            self.assertTrue(5 <= len(words) <= 20)
            self.assertTrue(keywords[label] & set(words))
            self.assertFalse(keywords[1 - label] & set(words))

    def test_lexicon_is_disjoint_from_keywords(self):
        lexicon = filler_lexicon()

        self.assertEqual(len(set(lexicon)), len(lexicon))
        self.assertFalse(set(lexicon) & (set(NEGATIVE_KEYWORDS) | set(POSITIVE_KEYWORDS)))

    def test_vocabulary_is_about_five_hundred_words(self):
        vocab = build_vocab(generate_keyword_corpus(1000, seed=0).texts)

        self.assertGreater(len(vocab), 450)
        self.assertLessEqual(len(vocab), 502)


class MetricTests(SimpleTestCase):
    def setUp(self):
        matrix = np.array(
            [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]
        )
        self.table = EmbeddingTable(matrix)

    def test_hand_computed_cosine(self):
        # means (2/3, 2/3, 0) and (1, 1/3, 0)
        self.assertAlmostEqual(similarity_proxy([2, 3, 4], [2, 2, 4], self.table), 4 / math.sqrt(20))

    def test_identical_sequences(self):
        self.assertEqual(similarity_proxy([2, 3, 4], [2, 3, 4], self.table), 1.0)

    def test_zero_mean_embedding_is_rejected(self):
        with self.assertRaises(SimilarityError):
            similarity_proxy([2, 5], [3, 4], self.table)

    def test_length_mismatch_is_rejected(self):
        with self.assertRaises(SimilarityError):
            similarity_proxy([2, 3], [2], self.table)
        with self.assertRaises(SimilarityError):
            token_error_rate([], [])

    def test_token_error_rate(self):
        self.assertEqual(token_error_rate([2, 3, 4, 5], [2, 3, 4, 2]), 0.25)
        self.assertEqual(token_error_rate([2, 3], [2, 3]), 0.0)

    def test_similarity_registry(self):
        self.assertIs(get_similarity_function("mean-embedding-cosine/v1"), similarity_proxy)
        with self.assertRaises(SimilarityError):
            get_similarity_function("sentence-encoder")


@override_settings(PROGRESS_BARS=False)
class EvaluationTests(SimpleTestCase):
    def setUp(self):
        self.model, self.vocab = _letters()
        self.report = evaluate_attack(self.model, self.vocab, _mixed_dataset(), AttackConfig())

    def test_rows_follow_dataset_order(self):
        records = self.report.records

        self.assertEqual([r.index for r in records], [0, 1, 2])
        self.assertEqual(records[0].result.status, AttackStatus.SUCCEEDED)
        self.assertEqual(records[0].adversarial_tokens, ["b", "b"])
        self.assertEqual(records[1].result.status, AttackStatus.SKIPPED)
        self.assertTrue(records[2].unattackable)

    def test_aggregates(self):
        aggregates = self.report.aggregates

        self.assertEqual(aggregates["examples"], 3)
        self.assertEqual(aggregates["unattackable"], 1)
        self.assertEqual(aggregates["skipped"], 1)
        self.assertEqual(aggregates["evaluated"], 1)
        self.assertEqual(aggregates["clean_accuracy"], 0.5)
        self.assertEqual(aggregates["adv_accuracy"], 0.0)
        self.assertEqual(aggregates["mean_token_error_rate"], 1.0)
        self.assertAlmostEqual(aggregates["mean_similarity"], FOOLED_SIMILARITY)
        self.assertFalse(aggregates["degenerate"])

    def test_all_attacked_means_include_failures(self):
        # a single token cannot move under any default alpha
        dataset = LabeledDataset((("a a", 0), ("e", 0)), CLASS_NAMES)

        report = evaluate_attack(self.model, self.vocab, dataset, AttackConfig())
        aggregates = report.aggregates

        self.assertEqual(report.records[1].result.status, AttackStatus.SCHEDULE_EXHAUSTED)
        self.assertEqual(aggregates["adv_accuracy"], 0.5)
        self.assertAlmostEqual(aggregates["mean_similarity"], FOOLED_SIMILARITY)
        self.assertAlmostEqual(aggregates["mean_similarity_all"], (FOOLED_SIMILARITY + 1.0) / 2)
        self.assertEqual(aggregates["mean_token_error_rate"], 1.0)
        self.assertEqual(aggregates["mean_token_error_rate_all"], 0.5)

    def test_aggregates_match_recomputation(self):
        aggregates = compute_aggregates(self.report.records)

        self.assertEqual(aggregates, self.report.aggregates)
        self.assertEqual(aggregates["adv_accuracy"] + aggregates["success_rate"], 1.0)

    def test_successful_rows_changed_tokens_above_threshold(self):
        for record in self.report.records:
            if record.result is not None and record.result.success:
                self.assertGreater(record.result.token_error_rate, 0.0)
                self.assertGreaterEqual(record.result.similarity, AttackConfig().similarity_threshold)

    def test_everything_misclassified_is_degenerate(self):
        dataset = LabeledDataset((("c c", 0), ("c", 0)), CLASS_NAMES)

        aggregates = evaluate_attack(self.model, self.vocab, dataset, AttackConfig()).aggregates

        self.assertTrue(aggregates["degenerate"])
        self.assertIsNone(aggregates["adv_accuracy"])
        self.assertIsNone(aggregates["mean_similarity"])

    def test_zero_budget_exhausts_every_row(self):
        dataset = LabeledDataset((("a a", 0), ("e", 0)), CLASS_NAMES)

        report = evaluate_attack(self.model, self.vocab, dataset, AttackConfig(max_iterations=0))

        self.assertEqual({r.result.status for r in report.records}, {AttackStatus.EXHAUSTED_BUDGET})
        self.assertEqual(report.aggregates["adv_accuracy"], 1.0)

    def test_empty_dataset_is_rejected(self):
        with self.assertRaises(EvaluationError):
            evaluate_attack(self.model, self.vocab, LabeledDataset((), CLASS_NAMES), AttackConfig())

    def test_more_classes_than_the_model_is_rejected(self):
        dataset = LabeledDataset((("a", 2),), ("x", "y", "z"))

        with self.assertRaises(EvaluationError):
            evaluate_attack(self.model, self.vocab, dataset, AttackConfig())


@override_settings(PROGRESS_BARS=False)
class ReportTests(SimpleTestCase):
    def setUp(self):
        model, vocab = _letters()
        self.report = evaluate_attack(model, vocab, _mixed_dataset(), AttackConfig())
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "report.json"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        write_report(self.report, self.path)

        loaded = read_report(self.path)

        self.assertEqual(loaded.aggregates, self.report.aggregates)
        self.assertEqual(loaded.to_dict(), self.report.to_dict())

    def test_report_names_its_similarity_function_and_version(self):
        data = json.loads(render_report(self.report, "json"))

        self.assertEqual(data["version"], 2)
        self.assertEqual(data["similarity_function"], "mean-embedding-cosine/v1")
        self.assertEqual(data["config"]["alpha_schedule"], [10.0, 8.0, 5.0, 2.0])

    def test_tampered_aggregates_are_rejected(self):
        data = self.report.to_dict()
        data["aggregates"]["succeeded"] = 3
        self.path.write_text(json.dumps(data), encoding="utf-8")

        with self.assertRaisesMessage(ReportError, "aggregates"):
            read_report(self.path)

    def test_unknown_version_is_rejected(self):
        data = self.report.to_dict()
        data["version"] = 99
        self.path.write_text(json.dumps(data), encoding="utf-8")

        with self.assertRaisesMessage(ReportError, "version"):
            read_report(self.path)

    def test_csv_rows(self):
        rows = list(csv.DictReader(io.StringIO(report_csv(self.report))))

        self.assertEqual([row["status"] for row in rows], ["succeeded", "skipped-already-misclassified", "unattackable"])
        self.assertEqual(rows[0]["adversarial_text"], "b b")
        self.assertEqual(rows[0]["alpha"], "5.0")
        self.assertEqual(rows[2]["similarity"], "")

    def test_text_highlights_substitutions_with_class_confidences(self):
        text = render_report(self.report, "text")

        self.assertIn("adv_accuracy", text)
        self.assertIn("[b] [b]", text)
        self.assertIn("(negative ", text)
        self.assertIn("(positive ", text)

    def test_unknown_format(self):
        with self.assertRaises(ReportError):
            render_report(self.report, "xml")


@override_settings(PROGRESS_BARS=False)
class SweepTests(SimpleTestCase):
    def test_single_alpha_matches_single_point_evaluation(self):
        model, vocab = _letters()
        dataset = LabeledDataset((("a a", 0), ("a e", 0), ("e", 0)), CLASS_NAMES)

        rows = sweep_alpha(model, vocab, dataset, [10.0, 2.0], lr=0.15)
        single = evaluate_attack(
            model, vocab, dataset, AttackConfig(alpha_schedule=(2.0,), lr_schedule=(0.15,))
        ).aggregates

        self.assertEqual([row.alpha for row in rows], [10.0, 2.0])
        self.assertEqual(rows[1].adv_accuracy, single["adv_accuracy"])
        self.assertEqual(rows[1].mean_similarity, single["mean_similarity"])
        self.assertEqual(rows[1].mean_token_error_rate, single["mean_token_error_rate"])
        self.assertEqual(rows[1].mean_similarity_all, single["mean_similarity_all"])

    def test_empty_alpha_list_is_rejected(self):
        model, vocab = _letters()

        with self.assertRaises(ValueError):
            sweep_alpha(model, vocab, _mixed_dataset(), [], lr=0.15)

    def test_csv_layout(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_sweep_csv([SweepRow(2.0, 0.5, 0.75, 0.25), SweepRow(10.0, 1.0, None, None)], Path(tmp) / "s.csv")
            lines = path.read_text(encoding="utf-8").splitlines()

        self.assertEqual(lines[0], ",".join(SWEEP_COLUMNS))
        self.assertEqual(lines[0], "alpha,adv_accuracy,mean_similarity,mean_token_error_rate")
        self.assertEqual(lines[1:], ["2.0,0.5,0.75,0.25", "10.0,1.0,,"])

    def test_spearman(self):
        self.assertAlmostEqual(spearman_correlation([1, 2, 3, 4], [10, 20, 30, 45]), 1.0)
        self.assertAlmostEqual(spearman_correlation([1, 2, 3, 4], [4, 3, 2, 1]), -1.0)
        self.assertAlmostEqual(spearman_correlation([1, 2, 3], [1, 1, 2]), math.sqrt(3) / 2)
        self.assertTrue(math.isnan(spearman_correlation([1, 2, 3], [5, 5, 5])))
        with self.assertRaises(ValueError):
            spearman_correlation([1], [1])


@override_settings(PROGRESS_BARS=False)
class DistributedTests(SimpleTestCase):
    def setUp(self):
        model, vocab = _letters()
        self.tmp = tempfile.TemporaryDirectory()
        self.checkpoint = Path(self.tmp.name) / "letters.bsat"
        save_checkpoint(model, vocab, self.checkpoint)
        save_vocab(vocab, default_vocab_path(self.checkpoint))

        conf = attack_example.app.conf
        for key in ("task_always_eager", "task_store_eager_result"):
            self.addCleanup(setattr, conf, key, getattr(conf, key))
            setattr(conf, key, True)
        self.addCleanup(_cached_artifacts.cache_clear)
        self.addCleanup(self.tmp.cleanup)

    def test_matches_in_process_evaluation(self):
        model, vocab = load_artifacts(self.checkpoint)
        cfg = AttackConfig()

        local = evaluate_attack(model, vocab, _mixed_dataset(), cfg)
        distributed = evaluate_attack_distributed(
            self.checkpoint, default_vocab_path(self.checkpoint), _mixed_dataset(), cfg
        )

        self.assertEqual(distributed.to_dict(), local.to_dict())

    def test_task_runs_in_process_without_a_broker(self):
        async_result = attack_example.delay(
            str(self.checkpoint), str(default_vocab_path(self.checkpoint)), 4, "a a", 0, AttackConfig().to_dict()
        )

        self.assertIsInstance(async_result, EagerResult)
        payload = async_result.get()
        self.assertEqual(payload["index"], 4)
        self.assertEqual(payload["result"]["status"], "succeeded")
        self.assertEqual(payload["adversarial_tokens"], ["b", "b"])

    def test_missing_vocabulary(self):
        with self.assertRaises(FileNotFoundError):
            load_artifacts(self.checkpoint, Path(self.tmp.name) / "missing.vocab")

    def test_queue_name_is_sanitized(self):
        with self.settings(ATTACK_QUEUE="attack-gpu"):
            self.assertEqual(select_attack_queue(), "attack-gpu")
        with self.settings(ATTACK_QUEUE="bad queue!"):
            self.assertEqual(select_attack_queue(), "attack")
