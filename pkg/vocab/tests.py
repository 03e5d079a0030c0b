import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .embedding import (
    EmbeddingTable,
    EmbeddingTableError,
    ProjectionError,
    embed_sequence,
    project_nearest,
    project_rows,
)
from .tokenizer import (
    PAD_ID,
    PAD_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    TokenSequence,
    VocabularyError,
    build_vocab,
    detokenize,
    load_vocab,
    save_vocab,
    tokenize,
)


def _scan(matrix, query, candidates):
    """Reference linear scan: first index with the maximal cosine among candidates."""
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    scores = np.einsum("ij,j->i", matrix, query) / (norms * np.sqrt(query @ query))
    ids = np.asarray(candidates)
    best = scores[ids].max()
    return int(ids[np.flatnonzero(scores[ids] == best)[0]])


def _random_table(rows, dim, seed):
    matrix = np.random.default_rng(seed).normal(size=(rows, dim))
    return EmbeddingTable(matrix)


class BuildVocabTests(SimpleTestCase):
    def test_frequency_then_lexicographic_order(self):
        vocab = build_vocab(["a b", "a c"], min_count=1)

        self.assertEqual(vocab.tokens, (UNK_TOKEN, PAD_TOKEN, "a", "b", "c"))
        self.assertEqual(vocab.id_of("a"), 2)

    def test_min_count_maps_rare_words_to_unk(self):
        vocab = build_vocab(["a b", "a c"], min_count=2)

        self.assertEqual(vocab.tokens, (UNK_TOKEN, PAD_TOKEN, "a"))
        self.assertEqual(tokenize("b c a", vocab).ids, (UNK_ID, UNK_ID, 2))

    def test_rebuilding_is_deterministic(self):
        corpus = ["the cat sat", "the dog sat down", "a cat, a dog!"]

        self.assertEqual(build_vocab(corpus), build_vocab(list(corpus)))

    def test_empty_corpus_is_rejected(self):
        with self.assertRaises(VocabularyError):
            build_vocab([])

    def test_special_ids_are_distinct(self):
        vocab = build_vocab(["x"])

        self.assertEqual(vocab.special_ids, frozenset({UNK_ID, PAD_ID}))
        self.assertNotEqual(vocab.unk_id, vocab.pad_id)


class TokenizeTests(SimpleTestCase):
    def setUp(self):
        self.vocab = build_vocab(["the cat sat", "the dog ran ."])

    def test_empty_text(self):
        self.assertEqual(len(tokenize("", self.vocab)), 0)

    def test_lowercases_known_words(self):
        seq = tokenize("The cat sat", self.vocab)

        self.assertEqual(seq.ids, tuple(self.vocab.id_of(w) for w in ("the", "cat", "sat")))

    def test_out_of_vocabulary_word_becomes_unk(self):
        seq = tokenize("the zyxqw sat", self.vocab)

        self.assertEqual(seq.ids, (self.vocab.id_of("the"), UNK_ID, self.vocab.id_of("sat")))

    def test_detokenize_round_trips_modulo_case(self):
        vocab = build_vocab(["The cat, sat."])

        self.assertEqual(detokenize(tokenize("The  cat, sat.", vocab), vocab), "the cat, sat.")

    def test_vocabulary_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_vocab(self.vocab, Path(tmp) / "vocab.txt")
            loaded = load_vocab(path)

        self.assertEqual(loaded.tokens, self.vocab.tokens)
        self.assertEqual(loaded.fingerprint(), self.vocab.fingerprint())

    def test_vocabulary_file_must_start_with_special_tokens(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "vocab.txt"
            path.write_text("cat\ndog\n", encoding="utf-8")

            with self.assertRaises(VocabularyError):
                load_vocab(path)


class EmbeddingTableTests(SimpleTestCase):
    def test_read_only_matrix_is_shared(self):
        matrix = np.random.default_rng(0).normal(size=(6, 3))
        matrix.setflags(write=False)

        table = EmbeddingTable(matrix)

        self.assertIs(table.matrix, matrix)

    def test_cached_norms_match_fresh_norms(self):
        table = _random_table(50, 8, seed=1)

        np.testing.assert_allclose(table.norms, np.linalg.norm(table.matrix, axis=1), atol=1e-6)

    def test_zero_norm_candidate_is_rejected(self):
        matrix = np.ones((4, 2))
        matrix[3] = 0.0

        with self.assertRaises(EmbeddingTableError):
            EmbeddingTable(matrix)

    def test_zero_norm_special_rows_are_allowed(self):
        matrix = np.ones((4, 2))
        matrix[PAD_ID] = 0.0

        EmbeddingTable(matrix)

    def test_self_projection_check_catches_duplicate_rows(self):
        matrix = np.random.default_rng(2).normal(size=(6, 3))
        matrix[4] = matrix[3]

        with self.assertRaises(EmbeddingTableError):
            EmbeddingTable(matrix).check_self_projection()

    def test_self_projection_holds_for_random_rows(self):
        _random_table(200, 16, seed=3).check_self_projection()


class EmbedSequenceTests(SimpleTestCase):
    def setUp(self):
        self.table = _random_table(10, 4, seed=4)

    def test_single_token(self):
        rows = embed_sequence(TokenSequence((5,)), self.table)

        np.testing.assert_array_equal(rows, self.table.matrix[5][None, :])

    def test_repeated_token(self):
        rows = embed_sequence(TokenSequence((7, 7)), self.table)

        np.testing.assert_array_equal(rows[0], rows[1])

    def test_projection_recovers_the_sequence(self):
        seq = TokenSequence((2, 9, 4, 4, 3))

        self.assertEqual(project_rows(embed_sequence(seq, self.table), self.table), seq.ids)

    def test_invalid_id_is_rejected(self):
        with self.assertRaises(ProjectionError):
            embed_sequence(TokenSequence((10,)), self.table)


class ProjectNearestTests(SimpleTestCase):
    def setUp(self):
        self.table = _random_table(100, 12, seed=5)

    def test_exact_row_projects_to_itself(self):
        self.assertEqual(project_nearest(self.table.row(17), self.table), 17)

    def test_positive_rescaling_is_ignored(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            query = rng.normal(size=12)
            expected = project_nearest(query, self.table)
            for factor in (2.0, 0.37, 15.5):
                self.assertEqual(project_nearest(factor * query, self.table), expected)

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(7)
        candidates = range(2, 100)
        for _ in range(50):
            query = rng.normal(size=12)
            self.assertEqual(project_nearest(query, self.table), _scan(self.table.matrix, query, candidates))

    def test_special_tokens_are_never_returned(self):
        self.assertNotIn(project_nearest(self.table.row(UNK_ID), self.table), (UNK_ID, PAD_ID))
        self.assertNotIn(project_nearest(self.table.row(PAD_ID), self.table), (UNK_ID, PAD_ID))

    def test_ties_go_to_the_lowest_id(self):
        matrix = np.array([[1.0, 1.0], [1.0, -1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        table = EmbeddingTable(matrix)

        self.assertEqual(project_nearest(np.array([1.0, 1.0]), table), 2)
        self.assertEqual(project_nearest(np.array([0.0, 3.0]), table), 2)

    def test_excluded_tokens_are_skipped(self):
        token = project_nearest(self.table.row(17), self.table, exclude={17})

        self.assertNotEqual(token, 17)

    def test_zero_query_is_rejected(self):
        with self.assertRaises(ProjectionError):
            project_nearest(np.zeros(12), self.table)

    def test_empty_candidate_set_is_rejected(self):
        with self.assertRaises(ProjectionError):
            project_nearest(np.ones(12), self.table, exclude=set(range(100)))


class ProjectionExactnessTests(SimpleTestCase):
    def test_thousand_queries_against_five_thousand_rows(self):
        rng = np.random.default_rng(8)
        matrix = rng.normal(size=(5000, 32))
        # explicit ties: duplicated rows and queries equidistant from two rows
        matrix[4001] = matrix[3000]
        matrix[10] = [1.0, 0.1] + [0.0] * 30
        matrix[11] = [1.0, -0.1] + [0.0] * 30
        table = EmbeddingTable(matrix)
        queries = list(rng.normal(size=(996, 32)))
        queries.append(matrix[3000].copy())
        queries.append(matrix[4001] * 3.0)
        queries.append(np.array([1.0] + [0.0] * 31))
        queries.append(np.array([2.5] + [0.0] * 31))

        candidates = range(2, 5000)
        for query in queries:
            self.assertEqual(project_nearest(query, table), _scan(matrix, query, candidates))
        self.assertEqual(project_nearest(matrix[4001], table), 3000)
        self.assertEqual(project_nearest(queries[-1], table), 10)
