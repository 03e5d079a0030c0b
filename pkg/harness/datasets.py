"""
JSON-lines datasets: one ``{"text": ..., "label": ...}`` object per line.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from classifier.training import accuracy
from vocab.tokenizer import Vocabulary, tokenize

logger = logging.getLogger(__name__)

Record = Tuple[str, int]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    records: Tuple[Record, ...]
    class_names: Tuple[str, ...]
    split: str = ""

    def __post_init__(self):
        object.__setattr__(self, "records", tuple((str(text), int(label)) for text, label in self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.class_names) < 2:
            raise DatasetError("a labelled dataset needs at least two classes")
        for index, (_, label) in enumerate(self.records):
            if not 0 <= label < len(self.class_names):
                raise DatasetError(f"record {index}: label {label} outside 0..{len(self.class_names) - 1}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def texts(self) -> List[str]:
        return [text for text, _ in self.records]

    @property
    def labels(self) -> List[int]:
        return [label for _, label in self.records]

    def head(self, limit: Optional[int]) -> "LabeledDataset":
        if limit is None:
            return self
        return LabeledDataset(self.records[:limit], self.class_names, self.split)

    def encode(self, vocab: Vocabulary) -> List[Tuple[Tuple[int, ...], int]]:
        return [(tokenize(text, vocab).ids, label) for text, label in self.records]


def default_class_names(count: int) -> Tuple[str, ...]:
    return tuple(f"class_{i}" for i in range(count))


def _parse_line(path: Path, number: int, line: str) -> Record:
    try:
        item = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}, line {number}: invalid JSON ({exc.msg})") from exc
    if not isinstance(item, dict):
        raise DatasetError(f"{path}, line {number}: expected an object")
    missing = [key for key in ("text", "label") if key not in item]
    if missing:
        raise DatasetError(f"{path}, line {number}: missing {', '.join(missing)}")
    text, label = item["text"], item["label"]
    if not isinstance(text, str):
        raise DatasetError(f"{path}, line {number}: text must be a string")
    if isinstance(label, bool) or not isinstance(label, int) or label < 0:
        raise DatasetError(f"{path}, line {number}: label must be a non-negative integer")
    return text, label


def load_dataset(
    path: Union[str, Path],
    class_names: Optional[Sequence[str]] = None,
    num_classes: Optional[int] = None,
    split: str = "",
) -> LabeledDataset:
    """
    Read a JSONL dataset preserving line order. Blank lines are ignored.
    Labels are validated against ``class_names`` or ``num_classes`` when
    given; otherwise the class count is inferred (at least two).
    """
    path = Path(path)
    records: List[Record] = []
    with path.open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            records.append(_parse_line(path, number, line))

    if class_names is None:
        count = num_classes or max([label + 1 for _, label in records] + [2])
        class_names = default_class_names(count)
    for text, label in records:
        if label >= len(class_names):
            raise DatasetError(f"{path}: label {label} outside 0..{len(class_names) - 1}")
    logger.debug("Loaded %d records from %s", len(records), path)
    return LabeledDataset(tuple(records), tuple(class_names), split or path.stem)


def save_dataset(dataset: LabeledDataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for text, label in dataset:
            handle.write(json.dumps({"text": text, "label": label}, ensure_ascii=False) + "\n")
    logger.info("Wrote %d records to %s", len(dataset), path)
    return path


@dataclass(frozen=True)
class DatasetStatistics:
    size: int
    num_classes: int
    class_counts: Tuple[int, ...]
    average_length: float
    clean_accuracy: Optional[float] = None


def dataset_statistics(dataset: LabeledDataset, vocab: Vocabulary, model=None) -> DatasetStatistics:
    """Size, class balance and mean token count; clean accuracy too when a model is given."""
    encoded = dataset.encode(vocab)
    counts = Counter(label for _, label in encoded)
    lengths = [len(ids) for ids, _ in encoded]
    clean_accuracy = None
    if model is not None:
        usable = [(ids[: model.config.max_len], label) for ids, label in encoded if ids]
        clean_accuracy = accuracy(model, usable) if usable else None
    return DatasetStatistics(
        size=len(dataset),
        num_classes=dataset.num_classes,
        class_counts=tuple(counts.get(i, 0) for i in range(dataset.num_classes)),
        average_length=sum(lengths) / len(lengths) if lengths else 0.0,
        clean_accuracy=clean_accuracy,
    )
