"""
Immutable numpy-backed tensors and the reverse-mode gradient tape.

Tensors wrap a read-only ``numpy.ndarray``. A tensor produced while a
``GradientTape`` is watching one of its inputs is *traced*: it remembers the
tape and its node id, and the primitive that produced it appends a
``TapeRecord``. Backward rules live in ``BACKWARD_RULES`` keyed by primitive
name; ``numerics.ops`` registers them with ``@backward_rule``.
"""

import contextlib
import contextvars
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np


logger = logging.getLogger(__name__)

_DEFAULT_DTYPE = contextvars.ContextVar("default_dtype", default=np.dtype(np.float32))


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE.get()


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Temporarily change the dtype used for non-float inputs (``float64`` for verification)."""
    resolved = np.dtype(dtype)
    if resolved.kind != "f":
        raise ValueError(f"precision must be a floating dtype, got {resolved}")
    token = _DEFAULT_DTYPE.set(resolved)
    try:
        yield resolved
    finally:
        _DEFAULT_DTYPE.reset(token)


def as_array(value: Any) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    array = np.asarray(value)
    if array.dtype.kind != "f":
        array = array.astype(default_dtype())
    return array


class Tensor:
    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100

    def __init__(self, value: Any):
        data = np.array(as_array(value), copy=True)
        data.setflags(write=False)
        self.data = data
        self.tape: Optional["GradientTape"] = None
        self.node: Optional[int] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, tape: Optional["GradientTape"] = None, node: Optional[int] = None) -> "Tensor":
        # data must be a freshly computed array owned by the new tensor
        tensor = cls.__new__(cls)
        data.setflags(write=False)
        tensor.data = data
        tensor.tape = tape
        tensor.node = node
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def traced(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __array__(self, dtype=None, copy=None):
        array = self.data if dtype is None else self.data.astype(dtype)
        return array.copy() if copy else array

    def __repr__(self) -> str:
        flag = ", traced" if self.traced else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __radd__(self, other):
        from .ops import add

        return add(other, self)

    def __sub__(self, other):
        from .ops import sub

        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub

        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul, scale

        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from .ops import scale

        return scale(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)

    def __rmatmul__(self, other):
        from .ops import matmul

        return matmul(other, self)


@dataclass(frozen=True)
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    context: Dict[str, Any] = field(default_factory=dict)


BackwardRule = Callable[[TapeRecord, np.ndarray], Tuple[Optional[np.ndarray], ...]]

BACKWARD_RULES: Dict[str, BackwardRule] = {}


def backward_rule(op: str) -> Callable[[BackwardRule], BackwardRule]:
    def register(fn: BackwardRule) -> BackwardRule:
        if op in BACKWARD_RULES:
            raise ValueError(f"backward rule for {op!r} already registered")
        BACKWARD_RULES[op] = fn
        return fn

    return register


class GradientTape:
    """Ordered record of primitive applications; replayed in reverse by ``gradient``."""

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._ids = itertools.count()

    def watch(self, value: Any) -> Tensor:
        source = Tensor(value)
        return Tensor._wrap(np.array(source.data), self, next(self._ids))

    def record(self, op: str, inputs: Sequence[Tensor], data: np.ndarray, context: Dict[str, Any]) -> Tensor:
        output = Tensor._wrap(data, self, next(self._ids))
        self.records.append(TapeRecord(op, tuple(inputs), output, context))
        return output

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> List[np.ndarray]:
        for source in sources:
            if source.tape is not self:
                raise ValueError("gradient sources must be watched by this tape")
        if target.tape is not self:
            # target does not depend on any watched tensor
            return [np.zeros_like(source.data) for source in sources]

        adjoints: Dict[int, np.ndarray] = {target.node: np.ones_like(target.data)}
        for record in reversed(self.records):
            upstream = adjoints.pop(record.output.node, None)
            if upstream is None:
                continue
            rule = BACKWARD_RULES[record.op]
            grads = rule(record, upstream)
            if len(grads) != len(record.inputs):
                raise RuntimeError(f"{record.op}: backward returned {len(grads)} gradients for {len(record.inputs)} inputs")
            for tensor, grad in zip(record.inputs, grads):
                if grad is None or tensor.tape is not self:
                    continue
                if grad.shape != tensor.shape:
                    raise ShapeError(f"{record.op}: backward produced shape {grad.shape}, expected {tensor.shape}")
                previous = adjoints.get(tensor.node)
                adjoints[tensor.node] = grad if previous is None else previous + grad

        return [
            np.asarray(adjoints.get(source.node, np.zeros_like(source.data)), dtype=source.dtype)
            for source in sources
        ]


def common_tape(inputs: Sequence[Tensor], op: str) -> Optional[GradientTape]:
    tape = None
    for tensor in inputs:
        if tensor.tape is None:
            continue
        if tape is None:
            tape = tensor.tape
        elif tensor.tape is not tape:
            raise ValueError(f"{op}: inputs are traced by different tapes")
    return tape
