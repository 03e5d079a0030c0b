import logging
from typing import Callable, Dict, Sequence

import numpy as np

from vocab.embedding import MIN_NORM, EmbeddingTable, embed_sequence
from vocab.tokenizer import TokenSequence

logger = logging.getLogger(__name__)

SimilarityFunction = Callable[[Sequence[int], Sequence[int], EmbeddingTable], float]


class SimilarityError(ValueError):
    pass


def _check_lengths(original: Sequence[int], adversarial: Sequence[int]) -> None:
    if len(original) != len(adversarial):
        raise SimilarityError(f"sequence lengths differ: {len(original)} != {len(adversarial)}")
    if not len(original):
        raise SimilarityError("cannot compare empty sequences")


def similarity_proxy(original: Sequence[int], adversarial: Sequence[int], table: EmbeddingTable) -> float:
    """Cosine similarity of the mean-pooled input embeddings of both sequences."""
    _check_lengths(original, adversarial)
    left = embed_sequence(TokenSequence(tuple(original)), table).astype(np.float64).mean(axis=0)
    right = embed_sequence(TokenSequence(tuple(adversarial)), table).astype(np.float64).mean(axis=0)
    left_norm, right_norm = np.linalg.norm(left), np.linalg.norm(right)
    if left_norm <= MIN_NORM or right_norm <= MIN_NORM:
        raise SimilarityError("mean embedding has zero norm")
    if tuple(original) == tuple(adversarial):
        return 1.0
    return float(np.clip(left @ right / (left_norm * right_norm), -1.0, 1.0))


def token_error_rate(original: Sequence[int], adversarial: Sequence[int]) -> float:
    _check_lengths(original, adversarial)
    changed = sum(1 for a, b in zip(original, adversarial) if a != b)
    return changed / len(original)


SIMILARITY_FUNCTIONS: Dict[str, SimilarityFunction] = {
    "mean-embedding-cosine/v1": similarity_proxy,
}


def get_similarity_function(name: str) -> SimilarityFunction:
    try:
        return SIMILARITY_FUNCTIONS[name]
    except KeyError:
        raise SimilarityError(
            f"unknown similarity function {name!r}; available: {', '.join(sorted(SIMILARITY_FUNCTIONS))}"
        ) from None
