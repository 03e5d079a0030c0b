import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from django.conf import settings
from tqdm import tqdm

from numerics import ops
from numerics.gradients import evaluate_with_gradients
from numerics.optim import AdamState, NonFiniteGradientError, adam_step
from vocab.tokenizer import PAD_ID

from .transformer import ClassifierModel, encode

logger = logging.getLogger(__name__)

# (token ids, label)
Example = Tuple[Sequence[int], int]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError("epochs cannot be negative")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be positive")
        if not self.lr > 0:
            raise TrainingError("learning rate must be positive")

    @classmethod
    def from_settings(cls, **overrides) -> "TrainConfig":
        values = {
            "epochs": settings.TRAIN_EPOCHS,
            "batch_size": settings.TRAIN_BATCH_SIZE,
            "lr": settings.TRAIN_LR,
            "seed": settings.TRAIN_SEED,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainingHistory:
    epochs: List[EpochStats] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].accuracy if self.epochs else 0.0


def pad_batch(sequences: Sequence[Sequence[int]], max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad with PAD ids to the longest sequence in the batch; returns (ids, mask)."""
    width = min(max(len(seq) for seq in sequences), max_len)
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        kept = list(seq)[:width]
        ids[row, : len(kept)] = kept
        mask[row, : len(kept)] = True
    return ids, mask


def batch_logits(model: ClassifierModel, ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    params = model.constants
    return encode(model.config, params, ops.gather(params["token_embedding"], ids), mask).data


def _validate(model: ClassifierModel, dataset: Sequence[Example]) -> None:
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    classes = model.config.num_classes
    for index, (ids, label) in enumerate(dataset):
        if not len(ids):
            raise TrainingError(f"example {index} has no tokens")
        if not 0 <= int(label) < classes:
            raise TrainingError(f"example {index}: label {label} outside 0..{classes - 1}")
        if max(ids) >= model.config.vocab_size or min(ids) < 0:
            raise TrainingError(f"example {index}: token id outside the model vocabulary")


def train(model: ClassifierModel, dataset: Sequence[Example], cfg: TrainConfig) -> Tuple[ClassifierModel, TrainingHistory]:
    """
    Mini-batch Adam on the mean cross-entropy. The seed fixes the batch order,
    so a run is bit-reproducible given the same starting model.
    """
    _validate(model, dataset)
    history = TrainingHistory()
    if cfg.epochs == 0:
        return model, history

    config = model.config
    names = model.param_names
    values = [model.params[name] for name in names]
    states = [AdamState.zeros_like(value) for value in values]
    labels = np.array([int(label) for _, label in dataset], dtype=np.int64)
    truncated = sum(1 for ids, _ in dataset if len(ids) > config.max_len)
    if truncated:
        logger.warning("%d training examples exceed max_len %d and were truncated", truncated, config.max_len)

    rng = np.random.default_rng(cfg.seed)
    batches = range(0, len(dataset), cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        total_loss, correct = 0.0, 0
        for start in tqdm(batches, desc=f"epoch {epoch}/{cfg.epochs}", disable=not settings.PROGRESS_BARS, leave=False):
            chosen = order[start : start + cfg.batch_size]
            ids, mask = pad_batch([dataset[i][0] for i in chosen], config.max_len)
            batch_labels = labels[chosen]

            with_logits = []

            def fn(*tensors):
                params = dict(zip(names, tensors))
                logits = encode(config, params, ops.gather(params["token_embedding"], ids), mask)
                with_logits.append(logits.data)
                return ops.cross_entropy(logits, batch_labels)

            value, grads = evaluate_with_gradients(fn, values)
            try:
                stepped = [adam_step(v, g, s, cfg.lr) for v, g, s in zip(values, grads, states)]
            except NonFiniteGradientError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from exc
            values = [v for v, _ in stepped]
            states = [s for _, s in stepped]

            total_loss += value.item() * len(chosen)
            correct += int(np.sum(np.argmax(with_logits[0], axis=1) == batch_labels))

        stats = EpochStats(epoch, total_loss / len(dataset), correct / len(dataset))
        history.epochs.append(stats)
        logger.info("Epoch %d/%d: loss %.4f, accuracy %.4f", epoch, cfg.epochs, stats.loss, stats.accuracy)

    return model.with_params(dict(zip(names, values))), history


def accuracy(model: ClassifierModel, dataset: Sequence[Example], batch_size: int = 64) -> float:
    if not dataset:
        raise TrainingError("cannot measure accuracy on an empty dataset")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        ids, mask = pad_batch([ids for ids, _ in chunk], model.config.max_len)
        predictions = np.argmax(batch_logits(model, ids, mask), axis=1)
        correct += int(np.sum(predictions == np.array([label for _, label in chunk])))
    return correct / len(dataset)
