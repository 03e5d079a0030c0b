"""
Word-level tokenisation and the vocabulary.

Token ids 0 and 1 are always the special UNK and PAD tokens; the remaining
tokens follow in descending corpus frequency, ties broken lexicographically.
"""

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"
UNK_ID = 0
PAD_ID = 1
SPECIAL_TOKENS = (UNK_TOKEN, PAD_TOKEN)

_WORD_RE = re.compile(r"\w+|[^\w\s]")
_SPACE_BEFORE_PUNCT_RE = re.compile(r"\s+([^\w\s])")


class VocabularyError(ValueError):
    pass


def split_words(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)

    def __getitem__(self, index):
        return self.ids[index]


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise VocabularyError(f"vocabulary must start with {SPECIAL_TOKENS}")
        index = {token: i for i, token in enumerate(tokens)}
        if len(index) != len(tokens):
            raise VocabularyError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "index", index)

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def special_ids(self) -> frozenset:
        return frozenset((UNK_ID, PAD_ID))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabularyError(f"token id {token_id} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[token_id]

    def fingerprint(self) -> bytes:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).digest()


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise VocabularyError("min_count must be at least 1")
    counts: Counter = Counter()
    texts = 0
    for text in corpus:
        texts += 1
        counts.update(split_words(text))
    if texts == 0:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")

    kept = sorted(
        (word for word, count in counts.items() if count >= min_count and word not in SPECIAL_TOKENS),
        key=lambda word: (-counts[word], word),
    )
    logger.info(
        "Built vocabulary of %d tokens from %d texts (%d distinct words, min_count=%d)",
        len(kept) + len(SPECIAL_TOKENS),
        texts,
        len(counts),
        min_count,
    )
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    return TokenSequence(tuple(vocab.id_of(word) for word in split_words(text)))


def detokenize(seq: Union[TokenSequence, Sequence[int]], vocab: Vocabulary) -> str:
    text = " ".join(vocab.token_of(token_id) for token_id in seq)
    return _SPACE_BEFORE_PUNCT_RE.sub(r"\1", text)


def save_vocab(vocab: Vocabulary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")
    return path


def load_vocab(path: Union[str, Path]) -> Vocabulary:
    path = Path(path)
    tokens = path.read_text(encoding="utf-8").splitlines()
    while tokens and tokens[-1] == "":
        tokens.pop()
    if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
        raise VocabularyError(f"{path}: first lines must be the special tokens {SPECIAL_TOKENS}")
    return Vocabulary(tuple(tokens))
