import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from classifier.checkpoint import save_checkpoint
from classifier.training import TrainConfig, TrainingError, accuracy, train
from classifier.transformer import ClassifierModel, ModelConfig, ModelError
from harness.artifacts import default_vocab_path
from harness.datasets import DatasetError, dataset_statistics, load_dataset
from vocab.embedding import EmbeddingTableError
from vocab.tokenizer import VocabularyError, build_vocab, save_vocab

from ._common import existing_file

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Train the transformer classifier on a JSONL dataset and write a checkpoint plus its vocabulary."

    def add_arguments(self, parser):
        parser.add_argument("--data", required=True, help="Training set (JSONL).")
        parser.add_argument("--out", required=True, help="Checkpoint path.")
        parser.add_argument("--epochs", type=int, help="Default: settings.TRAIN_EPOCHS.")
        parser.add_argument("--seed", type=int, help="Seeds initialisation and batch order (default: settings.TRAIN_SEED).")
        parser.add_argument("--batch-size", type=int)
        parser.add_argument("--lr", type=float)
        parser.add_argument("--test-data", help="Held-out set whose clean accuracy is reported after training.")
        parser.add_argument("--vocab-out", help="Vocabulary path (default: <out>.vocab).")

    def handle(self, *args, **options):
        data_path = existing_file(options["data"], "training data")
        test_path = existing_file(options["test_data"], "test data") if options["test_data"] else None
        out = Path(options["out"])
        vocab_out = Path(options["vocab_out"]) if options["vocab_out"] else default_vocab_path(out)

        try:
            cfg = TrainConfig.from_settings(
                epochs=options["epochs"], batch_size=options["batch_size"], lr=options["lr"], seed=options["seed"]
            )
            dataset = load_dataset(data_path, split="train")
            vocab = build_vocab(dataset.texts, min_count=settings.VOCAB_MIN_COUNT)
            model_config = ModelConfig(
                vocab_size=len(vocab),
                num_classes=dataset.num_classes,
                dim=settings.MODEL_DIM,
                layers=settings.MODEL_LAYERS,
                heads=settings.MODEL_HEADS,
                max_len=settings.MODEL_MAX_LEN,
            )
            model = ClassifierModel.initialize(model_config, seed=cfg.seed)
            logger.info("Training on %d examples: %s, %s", len(dataset), model_config, cfg)
            model, history = train(model, dataset.encode(vocab), cfg)
            model.embedding_table.check_self_projection()
        except (DatasetError, VocabularyError, ModelError, TrainingError, EmbeddingTableError, ValueError) as exc:
            raise CommandError(str(exc))

        save_checkpoint(model, vocab, out)
        save_vocab(vocab, vocab_out)
        self.stdout.write(
            self.style.SUCCESS(
                f"Saved checkpoint {out} and vocabulary {vocab_out} "
                f"(train accuracy {history.final_accuracy:.4f} after {len(history.epochs)} epochs)"
            )
        )

        if test_path is not None:
            try:
                test = load_dataset(test_path, num_classes=dataset.num_classes, split="test")
            except DatasetError as exc:
                raise CommandError(str(exc))
            stats = dataset_statistics(test, vocab, model)
            self.stdout.write(
                f"Test set: {stats.size} examples, average length {stats.average_length:.1f}, "
                f"clean accuracy {stats.clean_accuracy:.4f}"
                if stats.clean_accuracy is not None
                else f"Test set: {stats.size} examples, no attackable text"
            )
