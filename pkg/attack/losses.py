"""
The attack objective: negated classifier loss plus a group-lasso penalty
that sums the Euclidean norm of each token's perturbation row.

``objective`` and ``objective_gradient`` are the plain objective. Attack
steps use ``step_direction``, which first rescales the classifier gradient
to a fixed mean row norm, so alpha is measured against that norm whatever
the model's confidence.
"""

from typing import Tuple

import numpy as np

from classifier.transformer import ClassifierModel, loss_tensor
from numerics import ops
from numerics.gradients import evaluate_with_gradients
from numerics.tensor import ShapeError, Tensor


def adv_loss_tensor(model: ClassifierModel, e_adv, y: int) -> Tensor:
    return ops.scale(loss_tensor(model, e_adv, y), -1.0)


def adv_loss(model: ClassifierModel, e_adv, y: int) -> float:
    return adv_loss_tensor(model, e_adv, y).item()


def block_sparse_tensor(r) -> Tensor:
    return ops.reduce_sum(ops.l2_norm(r, axis=-1))


def block_sparse_loss(r) -> float:
    """Sum of row norms of an n x d perturbation; zero only for the zero perturbation."""
    return block_sparse_tensor(r).item()


def objective_tensor(model: ClassifierModel, e_x, e_adv, y: int, alpha: float) -> Tensor:
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if np.shape(e_x) != np.shape(e_adv):
        raise ShapeError(f"objective: original {np.shape(e_x)} and adversarial {np.shape(e_adv)} shapes differ")
    penalty = block_sparse_tensor(ops.sub(e_adv, e_x))
    return ops.add(adv_loss_tensor(model, e_adv, y), ops.scale(penalty, alpha))


def objective(model: ClassifierModel, e_x, e_adv, y: int, alpha: float) -> float:
    return objective_tensor(model, e_x, e_adv, y, alpha).item()


def objective_gradient(model: ClassifierModel, e_x, e_adv, y: int, alpha: float) -> Tuple[float, np.ndarray]:
    """Objective value and its gradient with respect to the adversarial embeddings."""
    e_x = np.asarray(e_x)
    value, (grad,) = evaluate_with_gradients(
        lambda e: objective_tensor(model, e_x, e, y, alpha), [np.asarray(e_adv, dtype=model.dtype)]
    )
    return value.item(), grad


def adv_gradient(model: ClassifierModel, e_adv, y: int) -> np.ndarray:
    _, (grad,) = evaluate_with_gradients(
        lambda e: adv_loss_tensor(model, e, y), [np.asarray(e_adv, dtype=model.dtype)]
    )
    return grad


def rescale_rows(grad: np.ndarray, scale: float) -> np.ndarray:
    """Rescale ``grad`` so its rows average ``scale`` in Euclidean norm; an all-zero gradient stays zero."""
    mean_norm = float(np.mean(np.linalg.norm(grad, axis=-1)))
    if mean_norm == 0.0:
        return np.zeros_like(grad)
    return grad * (scale / mean_norm)


def descent_direction(r: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    """
    Minimum-norm element of ``grad + alpha * d(sum_i ||r_i||)``, row by row.

    Rows with a non-zero perturbation get ``grad_i + alpha * r_i / ||r_i||``.
    A zero row stays put while ``||grad_i|| <= alpha`` and otherwise moves along
    ``grad_i`` shrunk by ``alpha``, so alpha decides which rows may leave the
    original sentence at all.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if np.shape(r) != np.shape(grad):
        raise ShapeError(f"descent_direction: perturbation {np.shape(r)} and gradient {np.shape(grad)} differ")
    r_norms = np.linalg.norm(r, axis=-1, keepdims=True)
    g_norms = np.linalg.norm(grad, axis=-1, keepdims=True)
    moved = r_norms > 0
    pull = np.divide(r, r_norms, out=np.zeros_like(r), where=moved)
    shrink = np.divide(alpha, g_norms, out=np.full_like(g_norms, np.inf), where=g_norms > 0)
    at_rest = grad * np.maximum(0.0, 1.0 - shrink)
    return np.where(moved, grad + alpha * pull, at_rest)


def step_direction(
    model: ClassifierModel, e_x, e_adv, y: int, alpha: float, gradient_scale: float
) -> np.ndarray:
    """Direction fed to Adam: the rescaled adversarial gradient combined with the group penalty."""
    e_x = np.asarray(e_x)
    e_adv = np.asarray(e_adv)
    if e_x.shape != e_adv.shape:
        raise ShapeError(f"step_direction: original {e_x.shape} and adversarial {e_adv.shape} shapes differ")
    grad = rescale_rows(adv_gradient(model, e_adv, y), gradient_scale)
    return descent_direction(e_adv - e_x, grad, alpha)
