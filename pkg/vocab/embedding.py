"""
The embedding table and cosine projection onto vocabulary tokens.

Projection is an exact linear scan: ``project_nearest`` scores every
candidate row by cosine similarity and returns the highest-scoring token,
lowest id first on ties. Special tokens are never candidates.
"""

import logging
from typing import AbstractSet, Iterable, Optional, Tuple

import numpy as np

from .tokenizer import PAD_ID, UNK_ID, TokenSequence

logger = logging.getLogger(__name__)

# n x d matrix, one row per token position
EmbeddingSequence = np.ndarray

MIN_NORM = 1e-8


class ProjectionError(ValueError):
    pass


class EmbeddingTableError(ValueError):
    pass


class EmbeddingTable:
    """
    Read-only |V| x d matrix with cached row norms.

    The matrix is not copied: a model hands over its own (read-only) token
    embedding array, so the table and the model share the same object.
    """

    def __init__(self, matrix: np.ndarray, special_ids: Iterable[int] = (UNK_ID, PAD_ID)):
        if not isinstance(matrix, np.ndarray) or matrix.ndim != 2:
            raise EmbeddingTableError("embedding table must be a 2-D numpy array")
        if matrix.flags.writeable:
            matrix = matrix.copy()
            matrix.setflags(write=False)
        self.matrix = matrix
        self.special_ids = frozenset(int(i) for i in special_ids)
        norms = np.linalg.norm(matrix, axis=1)
        norms.setflags(write=False)
        self.norms = norms

        candidates = np.ones(len(matrix), dtype=bool)
        candidates[[i for i in self.special_ids if 0 <= i < len(matrix)]] = False
        if not candidates.any():
            raise EmbeddingTableError("embedding table has no projection candidates")
        weak = np.flatnonzero(candidates & (norms <= MIN_NORM))
        if weak.size:
            raise EmbeddingTableError(f"candidate rows with zero norm: {weak[:10].tolist()}")
        candidates.setflags(write=False)
        self.candidates = candidates

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, token_id: int) -> np.ndarray:
        return self.matrix[token_id]

    def cosine_scores(self, query: np.ndarray) -> np.ndarray:
        query = np.asarray(query, dtype=self.matrix.dtype)
        if query.shape != (self.dim,):
            raise ProjectionError(f"query must have shape ({self.dim},), got {query.shape}")
        query_norm = np.linalg.norm(query)
        if not query_norm > MIN_NORM:
            raise ProjectionError("cannot project a zero-norm query")
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.matrix @ query) / (self.norms * query_norm)

    def candidate_mask(self, exclude: Optional[AbstractSet[int]] = None) -> np.ndarray:
        if not exclude:
            return self.candidates
        mask = self.candidates.copy()
        excluded = [i for i in exclude if 0 <= i < self.size]
        mask[excluded] = False
        return mask

    def check_self_projection(self) -> None:
        """Exhaustively verify that every candidate row is its own cosine-nearest candidate."""
        candidate_ids = np.flatnonzero(self.candidates)
        for token_id in candidate_ids:
            nearest = project_nearest(self.matrix[token_id], self)
            if nearest != token_id:
                raise EmbeddingTableError(
                    f"token {token_id} projects onto token {nearest}; rows are not their own nearest neighbours"
                )
        logger.debug("Self-projection verified for %d candidate rows", len(candidate_ids))


def embed_sequence(seq: TokenSequence, table: EmbeddingTable) -> EmbeddingSequence:
    ids = np.asarray(tuple(seq), dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.size):
        raise ProjectionError(f"token ids outside table of {table.size} rows")
    return table.matrix[ids].reshape(len(ids), table.dim)


def project_nearest(
    query: np.ndarray, table: EmbeddingTable, exclude: Optional[AbstractSet[int]] = None
) -> int:
    mask = table.candidate_mask(exclude)
    if not mask.any():
        raise ProjectionError("every candidate token is excluded")
    scores = np.where(mask, table.cosine_scores(query), -np.inf)
    return int(np.argmax(scores))


def project_rows(
    matrix: EmbeddingSequence, table: EmbeddingTable, exclude: Optional[AbstractSet[int]] = None
) -> Tuple[int, ...]:
    return tuple(project_nearest(row, table, exclude) for row in np.asarray(matrix))
