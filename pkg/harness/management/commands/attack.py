import logging

from decouple import Csv
from django.core.management.base import BaseCommand, CommandError

from attack.config import AttackConfig, AttackConfigError
from classifier.checkpoint import CheckpointError
from harness.artifacts import load_artifacts, resolve_vocab_path
from harness.datasets import DatasetError, load_dataset
from harness.evaluation import EvaluationError, evaluate_attack, evaluate_attack_distributed
from harness.reports import write_report
from vocab.tokenizer import VocabularyError

from ._common import existing_file

logger = logging.getLogger(__name__)


def attack_config(options) -> AttackConfig:
    """Settings, then the optional config file, then explicit flags."""
    cfg = AttackConfig.from_settings()
    if options.get("config"):
        cfg = AttackConfig.from_file(existing_file(options["config"], "attack config"), base=cfg)
    return cfg


class Command(BaseCommand):
    help = "Attack every example of a dataset and write the JSON report."

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Checkpoint written by `train`.")
        parser.add_argument("--data", required=True, help="Dataset to attack (JSONL).")
        parser.add_argument("--out-report", required=True, help="Destination of the JSON report.")
        parser.add_argument("--alpha-set", type=Csv(float), help="Comma-separated, strictly decreasing alpha bases.")
        parser.add_argument("--lr-set", type=Csv(float), help="Comma-separated learning rates.")
        parser.add_argument("--max-iters", type=int, help="Global iteration budget per example.")
        parser.add_argument("--sim-threshold", type=float)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--vocab", help="Vocabulary path (default: <model>.vocab).")
        parser.add_argument("--config", help="KEY=VALUE or .ini file with ATTACK_* overrides.")
        parser.add_argument("--limit", type=int, help="Attack only the first N examples.")
        parser.add_argument(
            "--distributed",
            action="store_true",
            help="Fan the examples out to Celery workers on the attack queue.",
        )

    def handle(self, *args, **options):
        checkpoint = existing_file(options["model"], "model checkpoint")
        data_path = existing_file(options["data"], "dataset")
        vocab_path = existing_file(resolve_vocab_path(checkpoint, options["vocab"]), "vocabulary")

        try:
            cfg = attack_config(options).with_overrides(
                alpha_schedule=options["alpha_set"],
                lr_schedule=options["lr_set"],
                max_iterations=options["max_iters"],
                similarity_threshold=options["sim_threshold"],
                seed=options["seed"],
            )
            model, vocab = load_artifacts(checkpoint, vocab_path)
            dataset = load_dataset(data_path, num_classes=model.config.num_classes).head(options["limit"])
            if options["distributed"]:
                report = evaluate_attack_distributed(checkpoint, vocab_path, dataset, cfg)
            else:
                report = evaluate_attack(model, vocab, dataset, cfg)
        except (AttackConfigError, CheckpointError, DatasetError, EvaluationError, VocabularyError) as exc:
            raise CommandError(str(exc))

        write_report(report, options["out_report"])
        aggregates = report.aggregates
        if aggregates["degenerate"]:
            self.stdout.write(self.style.WARNING("No example was classified correctly; nothing was attacked"))
        self.stdout.write(
            self.style.SUCCESS(
                f"Attacked {aggregates['evaluated']} of {aggregates['examples']} examples, "
                f"{aggregates['succeeded']} fooled; report written to {options['out_report']}"
            )
        )
