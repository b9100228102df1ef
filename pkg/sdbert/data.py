"""
Examples, vocabulary, encoding and batching for binary sentiment classification.

TSV format: `label<TAB>text` per line, UTF-8, `\\n` line ends, no header.
Vocabulary file: one token per line, line number (from 0) = index.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
RESERVED = (PAD, UNK, CLS)

_SPLIT = re.compile(r"[\W_]+", re.UNICODE)

class Example(BaseModel):
    """One labelled text."""
    text: str
    label: int = Field(ge=0)

    @field_validator("text")
    @classmethod
    def _non_empty(cls, text: str) -> str:
        if not text.strip():
            raise ValueError("text is empty")
        return text

@dataclass(frozen=True)
class EncodedBatch:
    token_ids: np.ndarray  # [B, n] int64, CLS at position 0, PAD_ID on padding
    pad_mask: np.ndarray   # [B, n] bool, True on real tokens
    labels: np.ndarray     # [B] int64
    positions: np.ndarray  # [B] index of each row in the input sequence

    def __len__(self) -> int:
        return int(self.labels.shape[0])

def tokenize(text: str) -> List[str]:
    """Lowercase and split on whitespace and punctuation."""
    return [tok for tok in _SPLIT.split(text.lower()) if tok]

class Vocabulary:
    """Token list with reserved entries 0 = padding, 1 = unknown, 2 = classification marker."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:3]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        self.tokens: List[str] = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path: str) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

def build_vocab(examples: Sequence[Example], max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically, reserved entries included in max_size."""
    if max_size < 4:
        raise DataError(f"max_size must be at least 4, got {max_size}")
    counts = Counter(tok for ex in examples for tok in tokenize(ex.text))
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return Vocabulary(list(RESERVED) + [tok for tok, _ in ranked[: max_size - len(RESERVED)]])

def encode(vocab: Vocabulary, text: str, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """[CLS] + token ids, truncated to n and right-padded with PAD_ID."""
    if n < 2:
        raise DataError(f"encoded length must be at least 2, got {n}")
    ids = [CLS_ID] + [vocab.lookup(tok) for tok in tokenize(text)][: n - 1]
    out = np.full(n, PAD_ID, dtype=np.int64)
    out[: len(ids)] = ids
    mask = np.zeros(n, dtype=bool)
    mask[: len(ids)] = True
    return out, mask

def load_tsv(path: str) -> List[Example]:
    """Parse `label<TAB>text` lines; blank lines are skipped."""
    try:
        content = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not valid UTF-8: {e}") from e
    examples = []
    for line_no, line in enumerate(content.split("\n"), start=1):
        if not line.strip():
            continue
        label, sep, text = line.partition("\t")
        if not sep:
            raise ParseError("missing tab separator", line=line_no)
        if label not in ("0", "1"):
            raise ParseError(f"label must be 0 or 1, got {label!r}", line=line_no)
        if not text.strip():
            raise ParseError("empty text", line=line_no)
        examples.append(Example(text=text, label=int(label)))
    logger.info("Loaded %d examples from %s", len(examples), path)
    return examples

def save_tsv(examples: Sequence[Example], path: str) -> None:
    lines = []
    for ex in examples:
        if "\t" in ex.text or "\n" in ex.text:
            raise DataError(f"text cannot contain tab or newline: {ex.text[:40]!r}")
        lines.append(f"{ex.label}\t{ex.text}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")

def batch_iter(examples: Sequence[Example], vocab: Vocabulary, n: int, batch_size: int,
               shuffle_seed: Optional[int] = None) -> Iterator[EncodedBatch]:
    """Encode and batch examples; shuffled per seed (None keeps input order); last partial batch kept."""
    if batch_size < 1:
        raise DataError(f"batch_size must be at least 1, got {batch_size}")
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        encoded = [encode(vocab, ex.text, n) for ex in chunk]
        yield EncodedBatch(
            token_ids=np.stack([ids for ids, _ in encoded]),
            pad_mask=np.stack([mask for _, mask in encoded]),
            labels=np.array([ex.label for ex in chunk], dtype=np.int64),
            positions=np.asarray(order[start:start + batch_size], dtype=np.int64),
        )

def split_examples(examples: Sequence[Example], eval_fraction: float, seed: int) -> Tuple[List[Example], List[Example]]:
    """Deterministic shuffled split into (train, eval)."""
    order = np.random.default_rng(seed).permutation(len(examples))
    cut = len(examples) - max(1, int(round(eval_fraction * len(examples))))
    if cut < 1:
        raise DataError(f"cannot split {len(examples)} examples with eval_fraction={eval_fraction}")
    return [examples[i] for i in order[:cut]], [examples[i] for i in order[cut:]]

# ---------------------------------------------------------------------------
# Synthetic sentiment task
# ---------------------------------------------------------------------------

POSITIVE_WORDS = (
    "brilliant", "superb", "delightful", "moving", "masterful", "charming", "gripping",
    "wonderful", "excellent", "stunning", "heartfelt", "hilarious", "beautiful", "captivating",
    "remarkable", "engaging", "uplifting", "flawless", "terrific", "memorable",
)
NEGATIVE_WORDS = (
    "awful", "boring", "dreadful", "tedious", "clumsy", "lifeless", "painful", "terrible",
    "dull", "incoherent", "forgettable", "bland", "horrible", "mediocre", "tiresome",
    "pointless", "annoying", "sloppy", "wooden", "disappointing",
)
FILLER_WORDS = (
    "the", "a", "an", "film", "movie", "story", "plot", "actor", "actress", "director", "scene",
    "scenes", "script", "camera", "music", "score", "ending", "beginning", "middle", "character",
    "characters", "cast", "role", "screen", "audience", "theater", "sequel", "remake", "studio",
    "dialogue", "was", "is", "were", "are", "had", "has", "with", "and", "but", "of", "in", "on",
    "to", "for", "this", "that", "it", "its", "their", "his", "her", "they", "we", "i", "me",
    "my", "our", "about", "after", "before", "during", "while", "through", "over", "again",
    "really", "quite", "somewhat", "very", "mostly", "overall", "honestly", "frankly", "still",
    "also", "then", "later", "first", "second", "final", "hour", "minute", "night", "day",
    "year", "city", "house", "family", "friend", "war", "love", "journey", "secret", "mission",
    "town", "island", "train", "dog", "summer", "winter", "watched", "saw", "felt", "thought",
)

def synth_dataset(count: int, seed: int, noise: float = 0.0) -> List[Example]:
    """
    Class-balanced synthetic reviews.

    Each text is 8–32 words of filler with 2–4 sentiment keywords of its class
    mixed in. Exactly ⌊noise·count⌋ labels are then flipped; which ones is drawn
    from a second stream so the texts do not depend on `noise`.
    """
    if count < 2:
        raise DataError(f"count must be at least 2, got {count}")
    if not 0.0 <= noise < 0.5:
        raise DataError(f"noise must be in [0, 0.5), got {noise}")
    rng = np.random.default_rng(seed)
    labels = np.array([0] * (count // 2) + [1] * (count - count // 2))
    rng.shuffle(labels)

    examples = []
    for label in labels:
        length = int(rng.integers(8, 33))
        keywords = int(rng.integers(2, 5))
        lexicon = POSITIVE_WORDS if label == 1 else NEGATIVE_WORDS
        words = list(rng.choice(FILLER_WORDS, size=length))
        slots = rng.choice(length, size=keywords, replace=False)
        for slot in slots:
            words[int(slot)] = str(rng.choice(lexicon))
        examples.append(Example(text=" ".join(str(w) for w in words), label=int(label)))

    # exact product: in binary floats 0.29 * 100 is 28.999...
    flips = math.floor(Fraction(str(noise)) * count)
    if flips:
        flip_rng = np.random.default_rng([seed, 1])
        for i in flip_rng.choice(count, size=flips, replace=False):
            examples[i] = Example(text=examples[i].text, label=1 - examples[i].label)
    return examples
