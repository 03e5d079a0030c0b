"""
Synthetic keyword-sentiment corpus.

Each sentence mixes 1-2 sentiment keywords of its class into filler words
drawn from a fixed pseudo-word lexicon, so the label is decided entirely by
the keywords. The lexicon does not depend on the seed; only the sentences do.
"""

import itertools
import logging
from typing import Tuple

import numpy as np

from .datasets import LabeledDataset

logger = logging.getLogger(__name__)

CLASS_NAMES = ("negative", "positive")

NEGATIVE_KEYWORDS = (
    "awful", "bad", "boring", "broken", "clumsy", "dreadful", "dull", "flawed", "gloomy", "horrible",
    "lousy", "mediocre", "messy", "painful", "poor", "sloppy", "terrible", "tedious", "ugly", "weak",
)
POSITIVE_KEYWORDS = (
    "brilliant", "charming", "clever", "delightful", "excellent", "fantastic", "fine", "good", "gorgeous",
    "great", "joyful", "lovely", "marvelous", "neat", "pleasant", "solid", "splendid", "superb", "vivid",
    "wonderful",
)
KEYWORDS = (NEGATIVE_KEYWORDS, POSITIVE_KEYWORDS)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "th", "tr", "pl", "gr", "st", "br")
_NUCLEI = ("a", "e", "i", "o", "u", "ai", "ou")
FILLER_COUNT = 460


def filler_lexicon(count: int = FILLER_COUNT) -> Tuple[str, ...]:
    """Deterministic two-syllable pseudo-words, none of which is a keyword."""
    reserved = set(NEGATIVE_KEYWORDS) | set(POSITIVE_KEYWORDS)
    syllables = [onset + nucleus for onset, nucleus in itertools.product(_ONSETS, _NUCLEI)]
    words = []
    for first, second in itertools.product(syllables, repeat=2):
        word = first + second
        if word not in reserved:
            words.append(word)
        if len(words) == count:
            break
    return tuple(words)


def generate_keyword_corpus(
    size: int,
    seed: int = 0,
    *,
    min_length: int = 5,
    max_length: int = 20,
    two_keyword_rate: float = 0.3,
    split: str = "",
) -> LabeledDataset:
    if size < 0:
        raise ValueError("corpus size cannot be negative")
    if not 2 <= min_length <= max_length:
        raise ValueError("sentence lengths must satisfy 2 <= min_length <= max_length")
    rng = np.random.default_rng(seed)
    fillers = filler_lexicon()
    records = []
    for _ in range(size):
        label = int(rng.integers(len(CLASS_NAMES)))
        length = int(rng.integers(min_length, max_length + 1))
        keyword_count = 2 if rng.random() < two_keyword_rate else 1
        words = [fillers[i] for i in rng.integers(len(fillers), size=length - keyword_count)]
        for keyword in rng.choice(KEYWORDS[label], size=keyword_count, replace=False):
            words.insert(int(rng.integers(len(words) + 1)), str(keyword))
        records.append((" ".join(words), label))
    logger.debug("Generated %d keyword sentences (seed=%d)", size, seed)
    return LabeledDataset(tuple(records), CLASS_NAMES, split)
