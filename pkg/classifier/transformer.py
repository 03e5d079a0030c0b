"""
A small pre-norm transformer encoder classifier built on ``numerics.ops``.

The model consumes embedding sequences directly, so the attack can feed
continuous or projected embeddings through exactly the same forward pass
that training uses on gathered token rows. Padding positions are masked out
of attention keys and of the mean pooling.
"""

import logging
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from numerics import ops
from numerics.gradients import evaluate_with_gradients
from numerics.tensor import Tensor
from vocab.embedding import EmbeddingTable
from vocab.tokenizer import PAD_ID, UNK_ID

logger = logging.getLogger(__name__)

MASK_BIAS = -1e9
ACTIVATIONS = {"gelu": ops.gelu, "relu": ops.relu}


class ModelError(ValueError):
    pass


class ModelInputError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int = 2
    dim: int = 32
    layers: int = 2
    heads: int = 2
    max_len: int = 64
    mlp_dim: int = 64
    positional: bool = True
    final_norm: bool = True
    activation: str = "gelu"
    init_std: float = 0.02
    embedding_std: float = 0.15

    def __post_init__(self):
        if self.num_classes < 2:
            raise ModelError("a classifier needs at least two classes")
        if self.vocab_size < 3:
            raise ModelError("vocabulary must hold the special tokens and at least one word")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ModelError(f"dim {self.dim} must be a positive multiple of heads {self.heads}")
        if self.layers < 0 or self.max_len < 1 or self.mlp_dim < 1:
            raise ModelError("layers must be >= 0, max_len and mlp_dim positive")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "ModelConfig":
        return cls(**dict(data))


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, m = config.dim, config.mlp_dim
    shapes: Dict[str, Tuple[int, ...]] = {"token_embedding": (config.vocab_size, d)}
    if config.positional:
        shapes["position_embedding"] = (config.max_len, d)
    for i in range(config.layers):
        pre = f"layers.{i}"
        shapes[f"{pre}.ln1.gain"] = (d,)
        shapes[f"{pre}.ln1.bias"] = (d,)
        for proj in ("query", "key", "value", "output"):
            shapes[f"{pre}.attn.{proj}.weight"] = (d, d)
            shapes[f"{pre}.attn.{proj}.bias"] = (d,)
        shapes[f"{pre}.ln2.gain"] = (d,)
        shapes[f"{pre}.ln2.bias"] = (d,)
        shapes[f"{pre}.mlp.fc.weight"] = (d, m)
        shapes[f"{pre}.mlp.fc.bias"] = (m,)
        shapes[f"{pre}.mlp.proj.weight"] = (m, d)
        shapes[f"{pre}.mlp.proj.bias"] = (d,)
    if config.final_norm:
        shapes["final_norm.gain"] = (d,)
        shapes["final_norm.bias"] = (d,)
    shapes["head.weight"] = (d, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def _initial_value(name: str, shape: Tuple[int, ...], config: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    if name == "token_embedding":
        return rng.normal(0.0, config.embedding_std, size=shape)
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias"):
        return np.zeros(shape)
    return rng.normal(0.0, config.init_std, size=shape)


def _frozen(array, dtype) -> np.ndarray:
    frozen = np.array(array, dtype=dtype, copy=True)
    frozen.setflags(write=False)
    return frozen


class ClassifierModel:
    """Immutable parameter set plus config. Training returns new instances."""

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray]):
        shapes = parameter_shapes(config)
        missing = sorted(set(shapes) - set(params))
        unexpected = sorted(set(params) - set(shapes))
        if missing or unexpected:
            raise ModelError(f"parameter mismatch: missing {missing}, unexpected {unexpected}")
        dtype = np.asarray(params["token_embedding"]).dtype
        if dtype.kind != "f":
            dtype = np.dtype(np.float32)
        self.config = config
        self._params: Dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            value = _frozen(params[name], dtype)
            if value.shape != shape:
                raise ModelError(f"{name}: expected shape {shape}, got {value.shape}")
            self._params[name] = value

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "ClassifierModel":
        rng = np.random.default_rng(seed)
        params = {
            name: _initial_value(name, shape, config, rng).astype(dtype)
            for name, shape in parameter_shapes(config).items()
        }
        return cls(config, params)

    @classmethod
    def linear(cls, token_embedding, head_weight, head_bias=None, *, max_len: int = 64) -> "ClassifierModel":
        """Attention-free classifier: logits = mean(embeddings) @ head_weight + head_bias."""
        token_embedding = np.asarray(token_embedding)
        head_weight = np.asarray(head_weight)
        vocab_size, dim = token_embedding.shape
        num_classes = head_weight.shape[1]
        config = ModelConfig(
            vocab_size=vocab_size,
            num_classes=num_classes,
            dim=dim,
            layers=0,
            heads=1,
            max_len=max_len,
            positional=False,
            final_norm=False,
        )
        if head_bias is None:
            head_bias = np.zeros(num_classes)
        return cls(
            config,
            {"token_embedding": token_embedding, "head.weight": head_weight, "head.bias": head_bias},
        )

    @property
    def params(self) -> Mapping[str, np.ndarray]:
        return MappingProxyType(self._params)

    @property
    def param_names(self) -> Tuple[str, ...]:
        return tuple(self._params)

    @property
    def dtype(self) -> np.dtype:
        return self._params["token_embedding"].dtype

    @cached_property
    def embedding_table(self) -> EmbeddingTable:
        return EmbeddingTable(self._params["token_embedding"], special_ids=(UNK_ID, PAD_ID))

    @cached_property
    def constants(self) -> Mapping[str, Tensor]:
        return MappingProxyType({name: Tensor(value) for name, value in self._params.items()})

    def with_params(self, updates: Mapping[str, np.ndarray]) -> "ClassifierModel":
        merged = dict(self._params)
        merged.update(updates)
        return ClassifierModel(self.config, merged)

    def astype(self, dtype) -> "ClassifierModel":
        return ClassifierModel(self.config, {name: value.astype(dtype) for name, value in self._params.items()})


def _attention(h: Tensor, params: Mapping[str, Tensor], pre: str, config: ModelConfig, key_bias: np.ndarray) -> Tensor:
    batch, length, dim = h.shape
    heads = config.heads
    head_dim = dim // heads

    def project(name: str) -> Tensor:
        return ops.add(ops.matmul(h, params[f"{pre}.attn.{name}.weight"]), params[f"{pre}.attn.{name}.bias"])

    def split(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (batch, length, heads, head_dim)), (0, 2, 1, 3))

    query, key, value = split(project("query")), split(project("key")), split(project("value"))
    scores = ops.scale(ops.matmul(query, ops.transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    weights = ops.softmax(ops.add(scores, key_bias), axis=-1)
    context = ops.matmul(weights, value)
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, length, dim))
    return ops.add(ops.matmul(merged, params[f"{pre}.attn.output.weight"]), params[f"{pre}.attn.output.bias"])


def encode(config: ModelConfig, params: Mapping[str, Tensor], x: Tensor, mask: np.ndarray) -> Tensor:
    """Batched logits (B, C) for embeddings ``x`` (B, n, d) with boolean ``mask`` (B, n)."""
    batch, length, _ = x.shape
    dtype = x.dtype
    activation = ACTIVATIONS[config.activation]
    h = x
    if config.positional:
        h = ops.add(h, ops.gather(params["position_embedding"], np.arange(length)))
    key_bias = np.where(mask, 0.0, MASK_BIAS).astype(dtype)[:, None, None, :]

    for i in range(config.layers):
        pre = f"layers.{i}"
        attended = ops.layer_norm(h, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"])
        h = ops.add(h, _attention(attended, params, pre, config, key_bias))
        hidden = ops.layer_norm(h, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"])
        hidden = activation(ops.add(ops.matmul(hidden, params[f"{pre}.mlp.fc.weight"]), params[f"{pre}.mlp.fc.bias"]))
        hidden = ops.add(ops.matmul(hidden, params[f"{pre}.mlp.proj.weight"]), params[f"{pre}.mlp.proj.bias"])
        h = ops.add(h, hidden)

    if config.final_norm:
        h = ops.layer_norm(h, params["final_norm.gain"], params["final_norm.bias"])

    pool = (mask / mask.sum(axis=1, keepdims=True)).astype(dtype)[:, :, None]
    pooled = ops.reduce_sum(ops.mul(h, pool), axis=1)
    return ops.add(ops.matmul(pooled, params["head.weight"]), params["head.bias"])


def _sequence_mask(model: ClassifierModel, embeddings, mask) -> Tuple[Tensor, np.ndarray]:
    x = embeddings if isinstance(embeddings, Tensor) else Tensor(np.asarray(embeddings, dtype=model.dtype))
    if x.ndim != 2:
        raise ModelInputError(f"embeddings must be an n x d matrix, got shape {x.shape}")
    length, dim = x.shape
    if length == 0:
        raise ModelInputError("cannot classify an empty sequence")
    if length > model.config.max_len:
        raise ModelInputError(f"sequence length {length} exceeds max_len {model.config.max_len}")
    if dim != model.config.dim:
        raise ModelInputError(f"embedding width {dim} does not match model dim {model.config.dim}")
    if mask is None:
        mask = np.ones(length, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,) or not mask.any():
        raise ModelInputError("mask must flag at least one of the sequence positions")
    return ops.reshape(x, (1, length, dim)), mask[None, :]


def _check_label(model: ClassifierModel, y: int) -> int:
    if not 0 <= int(y) < model.config.num_classes:
        raise ModelInputError(f"label {y} outside 0..{model.config.num_classes - 1}")
    return int(y)


def logits_tensor(model: ClassifierModel, embeddings, mask=None) -> Tensor:
    x, batch_mask = _sequence_mask(model, embeddings, mask)
    return ops.reshape(encode(model.config, model.constants, x, batch_mask), (model.config.num_classes,))


def forward_logits(model: ClassifierModel, embeddings, mask=None) -> np.ndarray:
    return logits_tensor(model, embeddings, mask).data


def predict(model: ClassifierModel, embeddings, mask=None) -> int:
    return int(np.argmax(forward_logits(model, embeddings, mask)))


def probabilities(model: ClassifierModel, embeddings, mask=None) -> np.ndarray:
    return ops.softmax(logits_tensor(model, embeddings, mask)).data


def loss_tensor(model: ClassifierModel, embeddings, y: int, mask=None) -> Tensor:
    label = _check_label(model, y)
    return ops.cross_entropy(logits_tensor(model, embeddings, mask), label)


def loss(model: ClassifierModel, embeddings, y: int, mask=None) -> float:
    return loss_tensor(model, embeddings, y, mask).item()


def input_gradient(model: ClassifierModel, embeddings, y: int, mask=None) -> np.ndarray:
    """Gradient of the loss with respect to the input embeddings only."""
    _check_label(model, y)
    embeddings = np.asarray(embeddings, dtype=model.dtype)
    _, (grad,) = evaluate_with_gradients(lambda e: loss_tensor(model, e, y, mask), [embeddings])
    return grad
