import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from .reports import read_report


@override_settings(
    PROGRESS_BARS=False,
    MODEL_DIM=8,
    MODEL_LAYERS=1,
    MODEL_HEADS=1,
    MODEL_MAX_LEN=24,
    TRAIN_EPOCHS=1,
)
class PipelineCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.model = self.dir / "model.bsat"

    def _run(self, *args):
        out = StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()

    def _corpus_and_model(self):
        self._run("make_corpus", "--out-dir", str(self.dir), "--train-size", "40", "--test-size", "8", "--seed", "5")
        self._run(
            "train",
            "--data", str(self.dir / "train.jsonl"),
            "--out", str(self.model),
            "--seed", "5",
            "--test-data", str(self.dir / "test.jsonl"),
        )

    def test_make_corpus_writes_both_splits(self):
        output = self._run("make_corpus", "--out-dir", str(self.dir), "--train-size", "12", "--test-size", "4")

        self.assertIn("Wrote 12 train and 4 test", output)
        self.assertEqual(len((self.dir / "train.jsonl").read_text(encoding="utf-8").splitlines()), 12)
        self.assertEqual(len((self.dir / "test.jsonl").read_text(encoding="utf-8").splitlines()), 4)

    def test_train_writes_checkpoint_and_vocabulary(self):
        self._corpus_and_model()

        self.assertTrue(self.model.is_file())
        self.assertTrue(Path(f"{self.model}.vocab").is_file())

    def test_zero_budget_attack_then_report(self):
        self._corpus_and_model()
        report_path = self.dir / "report.json"

        self._run(
            "attack",
            "--model", str(self.model),
            "--data", str(self.dir / "test.jsonl"),
            "--out-report", str(report_path),
            "--max-iters", "0",
            "--seed", "5",
        )
        report = read_report(report_path)
        printed = json.loads(self._run("report", "--in", str(report_path), "--format", "json"))

        statuses = {r.result.status.value for r in report.records}
        self.assertLessEqual(statuses, {"exhausted-budget", "skipped-already-misclassified"})
        self.assertEqual(report.aggregates["succeeded"], 0)
        self.assertEqual(report.config["max_iterations"], 0)
        self.assertEqual(report.config["seed"], 5)
        self.assertEqual(printed["aggregates"], report.aggregates)

    def test_attack_reads_a_config_file_and_flags_win(self):
        self._corpus_and_model()
        config = self.dir / "attack.env"
        config.write_text("ATTACK_MAX_ITERS=0\nATTACK_ALPHA_SET=3,1\n", encoding="utf-8")
        report_path = self.dir / "report.json"

        self._run(
            "attack",
            "--model", str(self.model),
            "--data", str(self.dir / "test.jsonl"),
            "--out-report", str(report_path),
            "--config", str(config),
            "--alpha-set", "4,2",
            "--limit", "3",
        )
        report = read_report(report_path)

        self.assertEqual(len(report.records), 3)
        self.assertEqual(report.config["max_iterations"], 0)
        self.assertEqual(report.config["alpha_schedule"], [4.0, 2.0])

    def test_sweep_writes_one_row_per_alpha(self):
        self._corpus_and_model()
        out_csv = self.dir / "sweep.csv"

        self._run(
            "sweep",
            "--model", str(self.model),
            "--data", str(self.dir / "test.jsonl"),
            "--alphas", "10,2",
            "--out-csv", str(out_csv),
            "--limit", "2",
        )
        lines = out_csv.read_text(encoding="utf-8").splitlines()

        self.assertEqual(lines[0], "alpha,adv_accuracy,mean_similarity,mean_token_error_rate")
        self.assertEqual([line.split(",")[0] for line in lines[1:]], ["10.0", "2.0"])


class CommandErrorTests(SimpleTestCase):
    def test_missing_files_are_usage_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            missing = str(Path(tmp) / "missing")
            cases = (
                ("train", "--data", missing, "--out", str(Path(tmp) / "m.bsat")),
                ("attack", "--model", missing, "--data", missing, "--out-report", str(Path(tmp) / "r.json")),
                ("sweep", "--model", missing, "--data", missing, "--alphas", "2", "--out-csv", str(Path(tmp) / "s.csv")),
                ("report", "--in", missing),
            )
            for args in cases:
                with self.subTest(command=args[0]):
                    with self.assertRaises(CommandError) as ctx:
                        call_command(*args, stdout=StringIO())
                    self.assertEqual(ctx.exception.returncode, 2)
                    self.assertIn("not found", str(ctx.exception))

    def test_invalid_report_is_an_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "report.json"
            path.write_text("[]", encoding="utf-8")

            with self.assertRaisesMessage(CommandError, "not a JSON report"):
                call_command("report", "--in", str(path), stdout=StringIO())
