"""
Differentiable primitives.

Every primitive computes its forward value with plain numpy, so traced and
untraced evaluation are bit-identical, then records itself on the active
tape when one of its inputs is traced. Broadcasting follows numpy; backward
rules reduce gradients back to each input's shape with ``unbroadcast``.
"""

import math
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    TapeRecord,
    backward_rule,
    common_tape,
)

TensorLike = Union[Tensor, np.ndarray, float, Sequence[float]]

_GELU_C = math.sqrt(2.0 / math.pi)


def _tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], **context) -> Tensor:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    tape = common_tape(inputs, op)
    if tape is None:
        return Tensor._wrap(np.array(data))
    return tape.record(op, inputs, np.array(data), context)


def _broadcast_shape(op: str, *shapes: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}") from exc


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting added or stretched to reach it from ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise arithmetic


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    return _emit("add", a.data + b.data, (a, b))


@backward_rule("add")
def _add_backward(record: TapeRecord, g: np.ndarray):
    a, b = record.inputs
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    return _emit("sub", a.data - b.data, (a, b))


@backward_rule("sub")
def _sub_backward(record: TapeRecord, g: np.ndarray):
    a, b = record.inputs
    return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    return _emit("mul", a.data * b.data, (a, b))


@backward_rule("mul")
def _mul_backward(record: TapeRecord, g: np.ndarray):
    a, b = record.inputs
    return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)


def scale(a: TensorLike, factor: float) -> Tensor:
    a = _tensor(a)
    return _emit("scale", a.data * factor, (a,), factor=float(factor))


@backward_rule("scale")
def _scale_backward(record: TapeRecord, g: np.ndarray):
    return (g * record.context["factor"],)


# linear algebra and layout


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    return _emit("matmul", np.matmul(a.data, b.data), (a, b))


@backward_rule("matmul")
def _matmul_backward(record: TapeRecord, g: np.ndarray):
    a, b = record.inputs
    grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
    grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
    return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


def transpose(a: TensorLike, axes: Sequence[int]) -> Tensor:
    a = _tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    return _emit("transpose", np.transpose(a.data, axes), (a,), axes=axes)


@backward_rule("transpose")
def _transpose_backward(record: TapeRecord, g: np.ndarray):
    inverse = tuple(int(i) for i in np.argsort(record.context["axes"]))
    return (np.transpose(g, inverse),)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = _tensor(a)
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from exc
    return _emit("reshape", data, (a,))


@backward_rule("reshape")
def _reshape_backward(record: TapeRecord, g: np.ndarray):
    return (g.reshape(record.inputs[0].shape),)


def gather(table: TensorLike, ids: Any) -> Tensor:
    """Embedding lookup: rows of ``table`` at integer ``ids`` (any shape)."""
    table = _tensor(table)
    index = np.asarray(ids)
    if index.dtype.kind not in "iu":
        raise ShapeError(f"gather: ids must be integers, got {index.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got {table.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"gather: ids out of range for {table.shape[0]} rows")
    return _emit("gather", table.data[index], (table,), ids=index)


@backward_rule("gather")
def _gather_backward(record: TapeRecord, g: np.ndarray):
    table = record.inputs[0]
    grad = np.zeros_like(table.data)
    np.add.at(grad, record.context["ids"], g)
    return (grad,)


# reductions


def reduce_sum(a: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _tensor(a)
    return _emit("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), axis=axis, keepdims=keepdims)


@backward_rule("sum")
def _sum_backward(record: TapeRecord, g: np.ndarray):
    a = record.inputs[0]
    axis = record.context["axis"]
    if axis is not None and not record.context["keepdims"]:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def reduce_mean(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = _tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis=axis), 1.0 / count)


def l2_norm(a: TensorLike, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at a zero vector is 0."""
    a = _tensor(a)
    return _emit("l2_norm", np.sqrt(np.sum(a.data * a.data, axis=axis)), (a,), axis=axis)


@backward_rule("l2_norm")
def _l2_norm_backward(record: TapeRecord, g: np.ndarray):
    a = record.inputs[0]
    axis = record.context["axis"]
    norms = np.expand_dims(record.output.data, axis)
    safe = np.where(norms > 0, norms, 1)
    grad = np.where(norms > 0, a.data / safe, 0) * np.expand_dims(g, axis)
    return (grad.astype(a.dtype, copy=False),)


# nonlinearities


def softmax(a: TensorLike, axis: int = -1) -> Tensor:
    a = _tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    return _emit("softmax", exps / np.sum(exps, axis=axis, keepdims=True), (a,), axis=axis)


@backward_rule("softmax")
def _softmax_backward(record: TapeRecord, g: np.ndarray):
    s = record.output.data
    axis = record.context["axis"]
    return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)


def gelu(a: TensorLike) -> Tensor:
    """tanh approximation of GELU."""
    a = _tensor(a)
    x = a.data
    inner = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return _emit("gelu", 0.5 * x * (1.0 + inner), (a,))


@backward_rule("gelu")
def _gelu_backward(record: TapeRecord, g: np.ndarray):
    x = record.inputs[0].data
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)


def relu(a: TensorLike) -> Tensor:
    a = _tensor(a)
    return _emit("relu", np.maximum(a.data, 0), (a,))


@backward_rule("relu")
def _relu_backward(record: TapeRecord, g: np.ndarray):
    return (g * (record.inputs[0].data > 0),)


def layer_norm(a: TensorLike, gain: TensorLike, bias: TensorLike, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply per-feature ``gain`` and ``bias``."""
    a, gain, bias = _tensor(a), _tensor(gain), _tensor(bias)
    width = a.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({width},), got {gain.shape} and {bias.shape}")
    mean = np.mean(a.data, axis=-1, keepdims=True)
    centred = a.data - mean
    inv_std = 1.0 / np.sqrt(np.mean(centred * centred, axis=-1, keepdims=True) + eps)
    normed = centred * inv_std
    return _emit("layer_norm", normed * gain.data + bias.data, (a, gain, bias), normed=normed, inv_std=inv_std)


@backward_rule("layer_norm")
def _layer_norm_backward(record: TapeRecord, g: np.ndarray):
    a, gain, bias = record.inputs
    normed = record.context["normed"]
    inv_std = record.context["inv_std"]
    width = a.shape[-1]
    dnormed = g * gain.data
    grad_a = (inv_std / width) * (
        width * dnormed
        - np.sum(dnormed, axis=-1, keepdims=True)
        - normed * np.sum(dnormed * normed, axis=-1, keepdims=True)
    )
    grad_gain = unbroadcast(g * normed, gain.shape)
    grad_bias = unbroadcast(g, bias.shape)
    return grad_a, grad_gain, grad_bias


# losses


def cross_entropy(logits: TensorLike, labels: Any) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (C,) or (B, C) against integer ``labels``."""
    logits = _tensor(logits)
    index = np.atleast_1d(np.asarray(labels))
    if logits.ndim not in (1, 2):
        raise ShapeError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    batch = logits.data.reshape(-1, logits.shape[-1])
    classes = batch.shape[1]
    if index.dtype.kind not in "iu" or index.shape != (batch.shape[0],):
        raise ShapeError(f"cross_entropy: expected {batch.shape[0]} integer labels, got {index.shape}")
    if index.min() < 0 or index.max() >= classes:
        raise ValueError(f"cross_entropy: labels must be in 0..{classes - 1}")

    shifted = batch - np.max(batch, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(batch.shape[0])
    losses = log_norm - shifted[rows, index]
    return _emit("cross_entropy", np.mean(losses), (logits,), labels=index)


@backward_rule("cross_entropy")
def _cross_entropy_backward(record: TapeRecord, g: np.ndarray):
    logits = record.inputs[0]
    labels = record.context["labels"]
    batch = logits.data.reshape(-1, logits.shape[-1])
    shifted = batch - np.max(batch, axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= np.sum(probs, axis=1, keepdims=True)
    probs[np.arange(batch.shape[0]), labels] -= 1.0
    grad = probs * (g / batch.shape[0])
    return (grad.reshape(logits.shape).astype(logits.dtype, copy=False),)
