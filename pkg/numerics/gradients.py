import logging
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .tensor import GradientTape, Tensor, precision


logger = logging.getLogger(__name__)

MIN_STEP = 1e-6
MAX_STEP = 1e-2


class GradientCheckError(RuntimeError):
    pass


def evaluate_with_gradients(
    fn: Callable[..., Tensor], inputs: Sequence[object]
) -> Tuple[Tensor, List[np.ndarray]]:
    """
    Evaluate ``fn(*inputs)`` on a fresh tape and return its value together
    with the gradient of the value (summed, if it is not a scalar) with
    respect to every input. Gradients have the shapes of their inputs.
    """
    tape = GradientTape()
    watched = [tape.watch(value) for value in inputs]
    value = fn(*watched)
    if not isinstance(value, Tensor):
        raise TypeError(f"differentiated function must return a Tensor, got {type(value).__name__}")
    grads = tape.gradient(value, watched)
    return value.detach(), grads


def _scalar(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> float:
    value = fn(*[Tensor(array) for array in arrays])
    return float(np.sum(value.data))


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    samples: int = 100,
    h: float = 1e-3,
    *,
    seed: int = 0,
) -> float:
    """
    Compare reverse-mode gradients against central differences on ``samples``
    randomly chosen input coordinates. Returns the largest
    ``|analytic - numeric| / max(1, |numeric|)``. Inputs must be 64-bit.
    """
    if not MIN_STEP <= h <= MAX_STEP:
        raise ValueError(f"finite-difference step must lie in [{MIN_STEP}, {MAX_STEP}], got {h}")
    if samples < 1:
        raise ValueError("samples must be positive")
    arrays = [np.asarray(value) for value in inputs]
    for array in arrays:
        if array.dtype != np.float64:
            raise ValueError(f"grad_check requires 64-bit inputs, got {array.dtype}")

    with precision(np.float64):
        _, grads = evaluate_with_gradients(fn, arrays)
        first = _scalar(fn, arrays)
        second = _scalar(fn, arrays)
        if first != second:
            raise GradientCheckError(f"function is not deterministic: {first!r} != {second!r}")

        sizes = np.array([array.size for array in arrays])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offsets[-1])
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(total, size=min(samples, total), replace=False))

        worst = 0.0
        for flat in picks:
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            local = int(flat - offsets[which])
            plus = [array.copy() for array in arrays]
            minus = [array.copy() for array in arrays]
            plus[which].flat[local] += h
            minus[which].flat[local] -= h
            numeric = (_scalar(fn, plus) - _scalar(fn, minus)) / (2 * h)
            analytic = float(grads[which].flat[local])
            error = abs(analytic - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)

    logger.debug("Gradient check over %d coordinates: max relative error %.3e", len(picks), worst)
    return worst
