from decouple import Csv
from django.core.management.base import BaseCommand, CommandError

from attack.config import AttackConfigError
from classifier.checkpoint import CheckpointError
from harness.artifacts import load_artifacts, resolve_vocab_path
from harness.datasets import DatasetError, load_dataset
from harness.evaluation import EvaluationError
from harness.sweep import sweep_alpha, write_sweep_csv
from vocab.tokenizer import VocabularyError

from ._common import existing_file
from .attack import attack_config


class Command(BaseCommand):
    help = "Run one single-point attack evaluation per alpha and write the results as CSV."

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True)
        parser.add_argument("--data", required=True)
        parser.add_argument("--alphas", type=Csv(float), required=True, help="Comma-separated alpha bases.")
        parser.add_argument("--lr", type=float, default=0.15)
        parser.add_argument("--out-csv", required=True)
        parser.add_argument("--vocab", help="Vocabulary path (default: <model>.vocab).")
        parser.add_argument("--config", help="KEY=VALUE or .ini file with ATTACK_* overrides.")
        parser.add_argument("--limit", type=int)

    def handle(self, *args, **options):
        checkpoint = existing_file(options["model"], "model checkpoint")
        data_path = existing_file(options["data"], "dataset")
        vocab_path = existing_file(resolve_vocab_path(checkpoint, options["vocab"]), "vocabulary")
        if not options["alphas"]:
            raise CommandError("--alphas needs at least one value")

        try:
            base = attack_config(options)
            model, vocab = load_artifacts(checkpoint, vocab_path)
            dataset = load_dataset(data_path, num_classes=model.config.num_classes).head(options["limit"])
            rows = sweep_alpha(model, vocab, dataset, options["alphas"], options["lr"], base)
        except (AttackConfigError, CheckpointError, DatasetError, EvaluationError, VocabularyError) as exc:
            raise CommandError(str(exc))

        write_sweep_csv(rows, options["out_csv"])
        self.stdout.write(self.style.SUCCESS(f"Swept {len(rows)} alpha values; CSV written to {options['out_csv']}"))
