"""
Gradient-projection attack.

Each step takes one Adam step on the objective in the continuous embedding
space, snaps every row to its cosine-nearest vocabulary token, and accepts
the projected sentence only if it has never been produced before in this
run. The loop walks an escalating (learning rate, alpha) schedule until the
classifier is fooled by a sentence similar enough to the original, or the
global iteration budget runs out. A point at which alpha pins every row to
the original sentence is a fixed point and hands over after one step.
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, Optional, Set, Tuple

import numpy as np

from classifier.transformer import ClassifierModel, predict, probabilities
from harness.metrics import get_similarity_function, token_error_rate
from numerics.optim import AdamState, adam_step
from numerics.tensor import NonFiniteError
from vocab.embedding import embed_sequence, project_rows
from vocab.tokenizer import TokenSequence

from .config import DEFAULT_GRADIENT_SCALE, AttackConfig
from .losses import adv_loss, step_direction

logger = logging.getLogger(__name__)

TokenIds = Tuple[int, ...]


class AttackError(RuntimeError):
    pass


class AttackStatus(str, Enum):
    SUCCEEDED = "succeeded"
    EXHAUSTED_BUDGET = "exhausted-budget"
    # every schedule point ran out (per-point caps or no movable row) with budget left
    SCHEDULE_EXHAUSTED = "schedule-exhausted"
    BELOW_SIMILARITY_THRESHOLD = "below-similarity-threshold"
    SKIPPED = "skipped-already-misclassified"


@dataclass(frozen=True)
class AttackResult:
    status: AttackStatus
    label: int
    original_ids: TokenIds
    adversarial_ids: TokenIds
    iterations: int
    alpha: Optional[float]
    lr: Optional[float]
    adversarial_loss: float
    similarity: float
    token_error_rate: float
    original_prediction: int
    adversarial_prediction: int
    original_confidence: float
    adversarial_confidence: float
    accepted: int = 0

    @property
    def success(self) -> bool:
        return self.status is AttackStatus.SUCCEEDED

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["status"] = self.status.value
        data["original_ids"] = list(self.original_ids)
        data["adversarial_ids"] = list(self.adversarial_ids)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "AttackResult":
        values = dict(data)
        values["status"] = AttackStatus(values["status"])
        values["original_ids"] = tuple(values["original_ids"])
        values["adversarial_ids"] = tuple(values["adversarial_ids"])
        return cls(**values)


@dataclass
class AttackState:
    """Mutable iterate of one schedule point; ``buffer`` and ``k`` are shared across the whole run."""

    e_g: np.ndarray
    e_p: np.ndarray
    projected: TokenIds
    buffer: Set[TokenIds]
    adam: AdamState
    prediction: int
    k: int = 0
    budget: int = 0
    accepted: int = 0
    stalled: bool = False

    @classmethod
    def start(
        cls,
        e_x: np.ndarray,
        original: TokenIds,
        prediction: int,
        budget: int,
        buffer: Optional[Set[TokenIds]] = None,
        k: int = 0,
    ) -> "AttackState":
        if buffer is None:
            buffer = {tuple(original)}
        return cls(
            e_g=np.array(e_x),
            e_p=e_x,
            projected=tuple(original),
            buffer=buffer,
            adam=AdamState.zeros_like(e_x),
            prediction=prediction,
            k=k,
            budget=budget,
        )


def attack_step(
    state: AttackState,
    model: ClassifierModel,
    e_x: np.ndarray,
    y: int,
    alpha: float,
    lr: float,
    gradient_scale: float = DEFAULT_GRADIENT_SCALE,
) -> Tuple[AttackState, bool]:
    """
    Advance ``state`` by one Adam step plus projection, in place. Returns (state, accepted).

    ``state.stalled`` is set when the step moved nothing and left Adam with no
    momentum: every later step at the same (alpha, lr) would repeat it exactly.
    """
    if state.k >= state.budget:
        raise AttackError(f"iteration budget of {state.budget} exhausted")
    table = model.embedding_table
    try:
        direction = step_direction(model, e_x, state.e_g, y, alpha, gradient_scale)
        e_g, state.adam = adam_step(state.e_g, direction, state.adam, lr)
    except NonFiniteError as exc:
        raise AttackError(f"iteration {state.k + 1}, alpha={alpha:g}, lr={lr:g}: {exc}") from exc

    candidate = project_rows(e_g, table)
    state.k += 1
    if candidate in state.buffer:
        state.stalled = not np.any(state.adam.first_moment) and np.array_equal(e_g, state.e_g)
        state.e_g = e_g
        return state, False

    state.buffer.add(candidate)
    e_p = embed_sequence(TokenSequence(candidate), table)
    state.e_g = np.array(e_p)
    state.e_p = e_p
    state.projected = candidate
    state.prediction = predict(model, e_p)
    state.accepted += 1
    state.stalled = False
    return state, True


def _result(
    model: ClassifierModel,
    cfg: AttackConfig,
    status: AttackStatus,
    y: int,
    original: TokenIds,
    adversarial: TokenIds,
    iterations: int,
    alpha: Optional[float],
    lr: Optional[float],
    accepted: int,
    original_probs: np.ndarray,
) -> AttackResult:
    table = model.embedding_table
    e_adv = embed_sequence(TokenSequence(adversarial), table)
    probs = probabilities(model, e_adv)
    similarity = get_similarity_function(cfg.similarity_function)
    return AttackResult(
        status=status,
        label=y,
        original_ids=original,
        adversarial_ids=adversarial,
        iterations=iterations,
        alpha=alpha,
        lr=lr,
        adversarial_loss=adv_loss(model, e_adv, y),
        similarity=similarity(original, adversarial, table),
        token_error_rate=token_error_rate(original, adversarial),
        original_prediction=predict(model, embed_sequence(TokenSequence(original), table)),
        adversarial_prediction=predict(model, e_adv),
        original_confidence=float(np.max(original_probs)),
        adversarial_confidence=float(np.max(probs)),
        accepted=accepted,
    )


def run_attack(model: ClassifierModel, x: TokenSequence, y: int, cfg: AttackConfig) -> AttackResult:
    original = tuple(x)
    if not original:
        raise AttackError("cannot attack an empty token sequence")
    table = model.embedding_table
    e_x = embed_sequence(TokenSequence(original), table)
    n = len(original)
    similarity = get_similarity_function(cfg.similarity_function)
    original_probs = probabilities(model, e_x)
    original_prediction = predict(model, e_x)

    if original_prediction != y:
        logger.debug("Skipping input already classified as %d (label %d)", original_prediction, y)
        return _result(model, cfg, AttackStatus.SKIPPED, y, original, original, 0, None, None, 0, original_probs)

    budget = cfg.max_iterations
    buffer: Set[TokenIds] = {original}
    k = 0
    accepted = 0
    best_failure: Optional[Tuple[float, TokenIds, float, float]] = None
    last: Tuple[TokenIds, Optional[float], Optional[float]] = (original, None, None)

    for lr in cfg.lr_schedule:
        for base in cfg.alpha_schedule:
            if k >= budget:
                break
            alpha = base / n
            limit = budget if not cfg.iterations_per_point else min(budget, k + cfg.iterations_per_point)
            logger.debug("Schedule point lr=%g alpha=%g (k=%d, limit=%d)", lr, alpha, k, limit)
            # each point restarts from the original embeddings
            state = AttackState.start(e_x, original, prediction=y, budget=budget, buffer=buffer, k=k)
            while state.prediction == y and state.k < limit and not state.stalled:
                attack_step(state, model, e_x, y, alpha, lr, cfg.gradient_scale)
            if state.stalled:
                logger.debug("No row can move at lr=%g alpha=%g; next schedule point", lr, alpha)
            k = state.k
            accepted += state.accepted
            last = (state.projected, alpha, lr)
            if state.prediction == y:
                continue

            score = similarity(original, state.projected, table)
            if score >= cfg.similarity_threshold:
                logger.info(
                    "Attack succeeded after %d iterations (lr=%g, alpha=%g, similarity %.3f)", k, lr, alpha, score
                )
                return _result(
                    model, cfg, AttackStatus.SUCCEEDED, y, original, state.projected, k, alpha, lr, accepted, original_probs
                )
            logger.debug("Fooling sentence rejected: similarity %.3f below %.3f", score, cfg.similarity_threshold)
            if best_failure is None or score > best_failure[0]:
                best_failure = (score, state.projected, alpha, lr)

    if best_failure is not None:
        _, adversarial, alpha, lr = best_failure
        logger.info("Attack failed the similarity threshold after %d iterations", k)
        return _result(
            model, cfg, AttackStatus.BELOW_SIMILARITY_THRESHOLD, y, original, adversarial, k, alpha, lr, accepted,
            original_probs,
        )
    adversarial, alpha, lr = last
    if k < budget:
        logger.info("Attack schedule ended after %d of %d iterations without fooling the model", k, budget)
        status = AttackStatus.SCHEDULE_EXHAUSTED
    else:
        logger.info("Attack exhausted its budget of %d iterations", budget)
        status = AttackStatus.EXHAUSTED_BUDGET
    return _result(model, cfg, status, y, original, adversarial, k, alpha, lr, accepted, original_probs)
