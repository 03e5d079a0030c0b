import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from harness.corpus import generate_keyword_corpus
from harness.datasets import save_dataset

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Generate the synthetic keyword-sentiment corpus as train.jsonl and test.jsonl."

    def add_arguments(self, parser):
        parser.add_argument("--out-dir", required=True, help="Directory receiving train.jsonl and test.jsonl.")
        parser.add_argument("--train-size", type=int, default=1000)
        parser.add_argument("--test-size", type=int, default=200)
        parser.add_argument("--seed", type=int, default=0, help="Seeds the train split; the test split uses seed+1.")

    def handle(self, *args, **options):
        out_dir = Path(options["out_dir"])
        seed = options["seed"]
        try:
            train = generate_keyword_corpus(options["train_size"], seed, split="train")
            test = generate_keyword_corpus(options["test_size"], seed + 1, split="test")
        except ValueError as exc:
            raise CommandError(str(exc))

        for dataset in (train, test):
            save_dataset(dataset, out_dir / f"{dataset.split}.jsonl")
        logger.info("Corpus written to %s (seed=%d)", out_dir, seed)
        self.stdout.write(
            self.style.SUCCESS(f"Wrote {len(train)} train and {len(test)} test sentences to {out_dir}")
        )
