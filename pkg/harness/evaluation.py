"""
Dataset-level attack evaluation and its report.

Examples the model already misclassifies are reported as skipped and left
out of the after-attack accuracy denominator; examples with no tokens are
reported as unattackable.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from celery import group
from django.conf import settings
from tqdm import tqdm

from attack.algorithm import AttackResult, AttackStatus, run_attack
from attack.config import AttackConfig
from classifier.transformer import ClassifierModel
from vocab.tokenizer import TokenSequence, Vocabulary, tokenize

from .datasets import LabeledDataset

logger = logging.getLogger(__name__)

REPORT_VERSION = 2


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackRecord:
    index: int
    text: str
    label: int
    original_tokens: List[str]
    adversarial_tokens: List[str]
    result: Optional[AttackResult] = None

    @property
    def unattackable(self) -> bool:
        return self.result is None

    def to_dict(self) -> Dict[str, object]:
        return {
            "index": self.index,
            "text": self.text,
            "label": self.label,
            "original_tokens": list(self.original_tokens),
            "adversarial_tokens": list(self.adversarial_tokens),
            "result": self.result.to_dict() if self.result else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "AttackRecord":
        result = data.get("result")
        return cls(
            index=int(data["index"]),
            text=str(data["text"]),
            label=int(data["label"]),
            original_tokens=list(data["original_tokens"]),
            adversarial_tokens=list(data["adversarial_tokens"]),
            result=AttackResult.from_dict(result) if result else None,
        )


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


@dataclass
class AttackReport:
    records: List[AttackRecord]
    config: Dict[str, object]
    class_names: List[str]
    similarity_function: str
    version: int = REPORT_VERSION
    aggregates: Dict[str, object] = field(init=False)

    def __post_init__(self):
        self.aggregates = compute_aggregates(self.records)

    def to_dict(self) -> Dict[str, object]:
        return {
            "version": self.version,
            "similarity_function": self.similarity_function,
            "class_names": list(self.class_names),
            "config": self.config,
            "aggregates": dict(self.aggregates),
            "records": [record.to_dict() for record in self.records],
        }


def compute_aggregates(records: Sequence[AttackRecord]) -> Dict[str, object]:
    """
    After-attack accuracy counts every evaluated example the attack did not
    flip with enough similarity, so it and the success rate always sum to one.
    The plain similarity and token error rate means cover successes only; the
    ``_all`` variants cover every evaluated example, failures included.
    """
    attackable = [r.result for r in records if r.result is not None]
    evaluated = [r for r in attackable if r.status is not AttackStatus.SKIPPED]
    succeeded = [r for r in evaluated if r.success]
    return {
        "examples": len(records),
        "unattackable": len(records) - len(attackable),
        "skipped": len(attackable) - len(evaluated),
        "evaluated": len(evaluated),
        "succeeded": len(succeeded),
        "degenerate": not evaluated,
        "clean_accuracy": len(evaluated) / len(attackable) if attackable else None,
        "adv_accuracy": (len(evaluated) - len(succeeded)) / len(evaluated) if evaluated else None,
        "success_rate": len(succeeded) / len(evaluated) if evaluated else None,
        "mean_similarity": _mean([r.similarity for r in succeeded]),
        "mean_token_error_rate": _mean([r.token_error_rate for r in succeeded]),
        "mean_similarity_all": _mean([r.similarity for r in evaluated]),
        "mean_token_error_rate_all": _mean([r.token_error_rate for r in evaluated]),
        "mean_iterations": _mean([r.iterations for r in evaluated]),
    }


def attack_record(
    model: ClassifierModel, vocab: Vocabulary, index: int, text: str, label: int, cfg: AttackConfig
) -> AttackRecord:
    ids = tokenize(text, vocab).ids
    if len(ids) > model.config.max_len:
        logger.warning("Example %d has %d tokens; truncated to %d", index, len(ids), model.config.max_len)
        ids = ids[: model.config.max_len]
    original_tokens = [vocab.token_of(i) for i in ids]
    if not ids:
        logger.warning("Example %d has no tokens and cannot be attacked", index)
        return AttackRecord(index, text, label, [], [])
    result = run_attack(model, TokenSequence(ids), label, cfg)
    adversarial_tokens = [vocab.token_of(i) for i in result.adversarial_ids]
    return AttackRecord(index, text, label, original_tokens, adversarial_tokens, result)


def _report(records: List[AttackRecord], dataset: LabeledDataset, cfg: AttackConfig) -> AttackReport:
    report = AttackReport(
        records=records,
        config=cfg.to_dict(),
        class_names=list(dataset.class_names),
        similarity_function=cfg.similarity_function,
    )
    aggregates = report.aggregates
    if aggregates["degenerate"]:
        logger.warning("No example was classified correctly; the attack evaluated nothing")
    else:
        logger.info(
            "Attacked %d examples: clean accuracy %.3f, after-attack accuracy %.3f",
            aggregates["evaluated"],
            aggregates["clean_accuracy"],
            aggregates["adv_accuracy"],
        )
    return report


def _check(model: ClassifierModel, dataset: LabeledDataset) -> None:
    if not len(dataset):
        raise EvaluationError("cannot evaluate an attack on an empty dataset")
    if dataset.num_classes > model.config.num_classes:
        raise EvaluationError(
            f"dataset has {dataset.num_classes} classes but the model predicts {model.config.num_classes}"
        )


def evaluate_attack(
    model: ClassifierModel, vocab: Vocabulary, dataset: LabeledDataset, cfg: AttackConfig
) -> AttackReport:
    _check(model, dataset)
    records = [
        attack_record(model, vocab, index, text, label, cfg)
        for index, (text, label) in enumerate(
            tqdm(dataset, desc="attack", total=len(dataset), disable=not settings.PROGRESS_BARS)
        )
    ]
    return _report(records, dataset, cfg)


def evaluate_attack_distributed(
    checkpoint: Union[str, Path],
    vocab_path: Union[str, Path],
    dataset: LabeledDataset,
    cfg: AttackConfig,
) -> AttackReport:
    """Fan one Celery task out per example; records come back in example order whatever the completion order."""
    from .tasks import attack_example, select_attack_queue

    if not len(dataset):
        raise EvaluationError("cannot evaluate an attack on an empty dataset")
    queue = select_attack_queue()
    job = group(
        [
            attack_example.s(str(checkpoint), str(vocab_path), index, text, label, cfg.to_dict()).set(queue=queue)
            for index, (text, label) in enumerate(dataset)
        ]
    )
    logger.info("Dispatching %d attack tasks to queue '%s'", len(dataset), queue)
    payloads = job.apply_async().join()
    records = sorted((AttackRecord.from_dict(payload) for payload in payloads), key=lambda record: record.index)
    return _report(records, dataset, cfg)
