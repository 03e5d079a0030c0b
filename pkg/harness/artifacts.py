import logging
from pathlib import Path
from typing import Optional, Tuple, Union

from classifier.checkpoint import load_checkpoint
from classifier.transformer import ClassifierModel
from vocab.tokenizer import Vocabulary, load_vocab

logger = logging.getLogger(__name__)

VOCAB_SUFFIX = ".vocab"


def default_vocab_path(checkpoint: Union[str, Path]) -> Path:
    return Path(f"{checkpoint}{VOCAB_SUFFIX}")


def resolve_vocab_path(checkpoint: Union[str, Path], vocab_path: Optional[Union[str, Path]] = None) -> Path:
    return Path(vocab_path) if vocab_path else default_vocab_path(checkpoint)


def load_artifacts(
    checkpoint: Union[str, Path], vocab_path: Optional[Union[str, Path]] = None
) -> Tuple[ClassifierModel, Vocabulary]:
    """Load a checkpoint together with the vocabulary it was trained on (``<checkpoint>.vocab`` by default)."""
    vocab_file = resolve_vocab_path(checkpoint, vocab_path)
    for path in (Path(checkpoint), vocab_file):
        if not path.is_file():
            raise FileNotFoundError(f"file not found: {path}")
    vocab = load_vocab(vocab_file)
    model = load_checkpoint(checkpoint, vocab)
    logger.debug("Loaded model %s with vocabulary %s (%d tokens)", checkpoint, vocab_file, len(vocab))
    return model, vocab
