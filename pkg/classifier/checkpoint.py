"""
Binary checkpoints.

Layout (little-endian)::

    b"BSAT"  u32 version
    u32 length + UTF-8 JSON model config
    u32 length + vocabulary fingerprint (SHA-256 digest)
    u32 parameter count
    per parameter: u32 name length, name, u32 rank, u32 dims..., float32 data
"""

import json
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Union

import numpy as np

from vocab.tokenizer import Vocabulary

from .transformer import ClassifierModel, ModelConfig, ModelError

logger = logging.getLogger(__name__)

MAGIC = b"BSAT"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_FLOAT = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _write_u32(stream: BinaryIO, value: int) -> None:
    stream.write(_U32.pack(value))


def _write_block(stream: BinaryIO, payload: bytes) -> None:
    _write_u32(stream, len(payload))
    stream.write(payload)


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_u32(stream: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(stream, _U32.size, what))[0]


def _read_block(stream: BinaryIO, what: str) -> bytes:
    return _read_exact(stream, _read_u32(stream, what), what)


def save_checkpoint(model: ClassifierModel, vocab: Vocabulary, path: Union[str, Path]) -> Path:
    if len(vocab) != model.config.vocab_size:
        raise CheckpointError(f"vocabulary has {len(vocab)} tokens but the model expects {model.config.vocab_size}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as stream:
        stream.write(MAGIC)
        _write_u32(stream, FORMAT_VERSION)
        _write_block(stream, json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8"))
        _write_block(stream, vocab.fingerprint())
        _write_u32(stream, len(model.param_names))
        for name, value in model.params.items():
            _write_block(stream, name.encode("utf-8"))
            _write_u32(stream, value.ndim)
            for dim in value.shape:
                _write_u32(stream, dim)
            stream.write(np.ascontiguousarray(value, dtype=_FLOAT).tobytes())
    logger.info("Saved checkpoint with %d parameters to %s", len(model.param_names), path)
    return path


def load_checkpoint(path: Union[str, Path], vocab: Vocabulary) -> ClassifierModel:
    path = Path(path)
    with path.open("rb") as stream:
        magic = stream.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
        version = _read_u32(stream, "version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        try:
            config = ModelConfig.from_dict(json.loads(_read_block(stream, "config").decode("utf-8")))
        except (ValueError, TypeError) as exc:
            raise CheckpointError(f"{path}: invalid model config: {exc}") from exc
        if _read_block(stream, "vocabulary hash") != vocab.fingerprint():
            raise CheckpointError(f"{path}: checkpoint was trained with a different vocabulary")

        params: Dict[str, np.ndarray] = {}
        for _ in range(_read_u32(stream, "parameter count")):
            name = _read_block(stream, "parameter name").decode("utf-8")
            shape = tuple(_read_u32(stream, name) for _ in range(_read_u32(stream, name)))
            count = int(np.prod(shape, dtype=np.int64))
            raw = _read_exact(stream, count * _FLOAT.itemsize, name)
            params[name] = np.frombuffer(raw, dtype=_FLOAT).reshape(shape).astype(np.float32)
        if stream.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last parameter")

    try:
        model = ClassifierModel(config, params)
    except ModelError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    logger.debug("Loaded checkpoint %s (%d parameters)", path, len(params))
    return model
