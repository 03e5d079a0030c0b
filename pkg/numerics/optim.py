from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .tensor import NonFiniteError, ShapeError, as_array


class NonFiniteGradientError(NonFiniteError):
    pass


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.first_moment.shape != self.second_moment.shape:
            raise ShapeError("Adam moments must share a shape")
        if self.step < 0:
            raise ValueError("Adam step count cannot be negative")

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        params = as_array(params)
        return cls(np.zeros_like(params), np.zeros_like(params), **hyper)

    def reset(self) -> "AdamState":
        return replace(
            self,
            first_moment=np.zeros_like(self.first_moment),
            second_moment=np.zeros_like(self.second_moment),
            step=0,
        )


def adam_step(params, grads, state: AdamState, lr: float) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new parameters and a new state; inputs are untouched."""
    params = as_array(params)
    grads = as_array(grads)
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"adam_step: params {params.shape}, grads {grads.shape} and moments "
            f"{state.first_moment.shape} must agree"
        )
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError(f"adam_step: non-finite gradient entries at step {state.step + 1}")

    step = state.step + 1
    first = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    second = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    first_hat = first / (1 - state.beta1**step)
    second_hat = second / (1 - state.beta2**step)
    updated = params - lr * first_hat / (np.sqrt(second_hat) + state.eps)

    new_state = replace(
        state,
        first_moment=first.astype(params.dtype, copy=False),
        second_moment=second.astype(params.dtype, copy=False),
        step=step,
    )
    return updated.astype(params.dtype, copy=False), new_state
