import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from attack.config import AttackConfig
from classifier.transformer import ClassifierModel
from vocab.tokenizer import Vocabulary

from .datasets import LabeledDataset
from .evaluation import evaluate_attack

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("alpha", "adv_accuracy", "mean_similarity", "mean_token_error_rate")


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    adv_accuracy: Optional[float]
    mean_similarity: Optional[float]
    mean_token_error_rate: Optional[float]
    mean_similarity_all: Optional[float] = None
    mean_token_error_rate_all: Optional[float] = None


def sweep_alpha(
    model: ClassifierModel,
    vocab: Vocabulary,
    dataset: LabeledDataset,
    alphas: Sequence[float],
    lr: float,
    base: Optional[AttackConfig] = None,
) -> List[SweepRow]:
    """One full evaluation per alpha, each with that single alpha and learning rate and no schedule fallback."""
    if not alphas:
        raise ValueError("alpha sweep needs at least one value")
    base = base or AttackConfig()
    rows = []
    for alpha in alphas:
        cfg = base.with_overrides(alpha_schedule=(alpha,), lr_schedule=(lr,))
        logger.info("Sweeping alpha=%g (lr=%g)", alpha, lr)
        aggregates = evaluate_attack(model, vocab, dataset, cfg).aggregates
        rows.append(
            SweepRow(
                alpha=float(alpha),
                adv_accuracy=aggregates["adv_accuracy"],
                mean_similarity=aggregates["mean_similarity"],
                mean_token_error_rate=aggregates["mean_token_error_rate"],
                mean_similarity_all=aggregates["mean_similarity_all"],
                mean_token_error_rate_all=aggregates["mean_token_error_rate_all"],
            )
        )
    _log_trends(rows)
    return rows


def spearman_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; nan when either side is constant."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("spearman correlation needs two equally long sequences of at least two values")

    def ranks(values):
        values = np.asarray(values, dtype=np.float64)
        order = np.argsort(values, kind="mergesort")
        ranked = np.empty(len(values))
        ranked[order] = np.arange(len(values), dtype=np.float64)
        for value in np.unique(values):
            tied = values == value
            ranked[tied] = ranked[tied].mean()
        return ranked

    rx, ry = ranks(x), ranks(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denominator = np.sqrt((rx @ rx) * (ry @ ry))
    return float(rx @ ry / denominator) if denominator > 0 else float("nan")


def _log_trends(rows: Sequence[SweepRow]) -> None:
    complete = sorted(
        (r for r in rows if r.mean_similarity is not None and r.adv_accuracy is not None), key=lambda r: r.alpha
    )
    if len(complete) < 2:
        return
    alphas = [r.alpha for r in complete]
    logger.info(
        "Trend over alpha: adv_accuracy rho=%.3f, similarity rho=%.3f (all attacked %.3f), token error rate rho=%.3f",
        spearman_correlation(alphas, [r.adv_accuracy for r in complete]),
        spearman_correlation(alphas, [r.mean_similarity for r in complete]),
        spearman_correlation(alphas, [r.mean_similarity_all for r in complete]),
        spearman_correlation(alphas, [r.mean_token_error_rate for r in complete]),
    )


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_sweep_csv(rows: Sequence[SweepRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_cell(getattr(row, column)) for column in SWEEP_COLUMNS])
    logger.info("Wrote %d sweep rows to %s", len(rows), path)
    return path
