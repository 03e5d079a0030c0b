import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from vocab.tokenizer import build_vocab

from .checkpoint import FORMAT_VERSION, MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from .transformer import ClassifierModel, ModelConfig


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.vocab = build_vocab(["good film", "bad film", "dull plot twist"])
        config = ModelConfig(vocab_size=len(self.vocab), dim=8, layers=1, heads=2, max_len=12, mlp_dim=16)
        self.model = ClassifierModel.initialize(config, seed=0)
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.bsat"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_preserves_config_and_parameters(self):
        save_checkpoint(self.model, self.vocab, self.path)

        loaded = load_checkpoint(self.path, self.vocab)

        self.assertEqual(loaded.config, self.model.config)
        self.assertEqual(loaded.param_names, self.model.param_names)
        for name in loaded.param_names:
            np.testing.assert_array_equal(loaded.params[name], self.model.params[name])

    def test_header_layout(self):
        save_checkpoint(self.model, self.vocab, self.path)

        header = self.path.read_bytes()[:8]

        self.assertEqual(header[:4], MAGIC)
        self.assertEqual(struct.unpack("<I", header[4:])[0], FORMAT_VERSION)

    def test_wrong_magic_is_rejected(self):
        save_checkpoint(self.model, self.vocab, self.path)
        self.path.write_bytes(b"NOPE" + self.path.read_bytes()[4:])

        with self.assertRaisesMessage(CheckpointError, "magic"):
            load_checkpoint(self.path, self.vocab)

    def test_unknown_version_is_rejected(self):
        save_checkpoint(self.model, self.vocab, self.path)
        data = self.path.read_bytes()
        self.path.write_bytes(data[:4] + struct.pack("<I", FORMAT_VERSION + 1) + data[8:])

        with self.assertRaisesMessage(CheckpointError, "version"):
            load_checkpoint(self.path, self.vocab)

    def test_different_vocabulary_is_rejected(self):
        save_checkpoint(self.model, self.vocab, self.path)
        other = build_vocab(["good movie", "bad film", "dull plot twist"])

        with self.assertRaisesMessage(CheckpointError, "different vocabulary"):
            load_checkpoint(self.path, other)

    def test_truncated_file_is_rejected(self):
        save_checkpoint(self.model, self.vocab, self.path)
        self.path.write_bytes(self.path.read_bytes()[:-5])

        with self.assertRaisesMessage(CheckpointError, "truncated"):
            load_checkpoint(self.path, self.vocab)

    def test_vocabulary_size_must_match_the_model(self):
        with self.assertRaises(CheckpointError):
            save_checkpoint(self.model, build_vocab(["one"]), self.path)
