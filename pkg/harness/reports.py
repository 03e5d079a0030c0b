import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Union

from .evaluation import REPORT_VERSION, AttackRecord, AttackReport

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("json", "csv", "text")
CSV_COLUMNS = (
    "index",
    "label",
    "status",
    "original_prediction",
    "adversarial_prediction",
    "similarity",
    "token_error_rate",
    "iterations",
    "alpha",
    "lr",
    "text",
    "adversarial_text",
)
SAMPLE_LIMIT = 5


class ReportError(ValueError):
    pass


def report_json(report: AttackReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def write_report(report: AttackReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_json(report), encoding="utf-8")
    logger.info("Wrote attack report (%d records) to %s", len(report.records), path)
    return path


def read_report(path: Union[str, Path]) -> AttackReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: not a JSON report ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise ReportError(f"{path}: not a JSON report")
    if data.get("version") != REPORT_VERSION:
        raise ReportError(f"{path}: unsupported report version {data.get('version')!r}")
    try:
        report = AttackReport(
            records=[AttackRecord.from_dict(item) for item in data["records"]],
            config=data["config"],
            class_names=data["class_names"],
            similarity_function=data["similarity_function"],
            version=data["version"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"{path}: malformed report ({exc})") from exc
    if report.aggregates != data.get("aggregates"):
        raise ReportError(f"{path}: stored aggregates do not match the records")
    return report


def _row(record: AttackRecord) -> Dict[str, object]:
    result = record.result
    row = {
        "index": record.index,
        "label": record.label,
        "text": record.text,
        "adversarial_text": " ".join(record.adversarial_tokens),
    }
    if result is None:
        row["status"] = "unattackable"
        return row
    row.update(
        status=result.status.value,
        original_prediction=result.original_prediction,
        adversarial_prediction=result.adversarial_prediction,
        similarity=repr(result.similarity),
        token_error_rate=repr(result.token_error_rate),
        iterations=result.iterations,
        alpha="" if result.alpha is None else repr(result.alpha),
        lr="" if result.lr is None else repr(result.lr),
    )
    return row


def report_csv(report: AttackReport) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for record in report.records:
        writer.writerow(_row(record))
    return buffer.getvalue()


def highlight_substitutions(original: List[str], adversarial: List[str]) -> str:
    """Render the adversarial tokens with every substituted position in brackets."""
    return " ".join(
        f"[{new}]" if new != old else new for old, new in zip(original, adversarial)
    )


def _format(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report_text(report: AttackReport, samples: int = SAMPLE_LIMIT) -> str:
    lines = [
        f"Attack report (version {report.version}, similarity: {report.similarity_function})",
        "",
    ]
    width = max(len(key) for key in report.aggregates)
    lines.extend(f"  {key.ljust(width)}  {_format(value)}" for key, value in report.aggregates.items())

    successes = [r for r in report.records if r.result is not None and r.result.success]
    if successes:
        lines += ["", f"Sample adversarial examples ({min(samples, len(successes))} of {len(successes)}):"]
    names = report.class_names
    for record in successes[:samples]:
        result = record.result
        lines += [
            "",
            f"  #{record.index}  similarity {result.similarity:.3f}, token error rate {result.token_error_rate:.3f}",
            f"    original    ({names[result.original_prediction]} {result.original_confidence:.1%}): "
            + " ".join(record.original_tokens),
            f"    adversarial ({names[result.adversarial_prediction]} {result.adversarial_confidence:.1%}): "
            + highlight_substitutions(record.original_tokens, record.adversarial_tokens),
        ]
    return "\n".join(lines) + "\n"


def render_report(report: AttackReport, fmt: str = "json") -> str:
    if fmt == "json":
        return report_json(report)
    if fmt == "csv":
        return report_csv(report)
    if fmt == "text":
        return report_text(report)
    raise ReportError(f"unknown report format {fmt!r}; choose from {', '.join(REPORT_FORMATS)}")
