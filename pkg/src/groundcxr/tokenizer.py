"""Whitespace/punctuation tokenizer with a frequency-ordered vocabulary.

Special ids are fixed: [PAD]=0, [CLS]=1, [BOS]=2, [EOS]=3, [ENC]=4, and
unknown words map to the reserved [UNK]=5.  Corpus words follow from id 6,
ordered by descending frequency with lexicographic tie-break.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

PAD, CLS, BOS, EOS, ENC, UNK = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[BOS]", "[EOS]", "[ENC]", "[UNK]")

_WORD_RE = re.compile(r"[a-z0-9]+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercase and split into word and punctuation tokens."""
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Immutable word <-> id mapping."""

    def __init__(self, words: list[str]):
        self.id_to_word = list(SPECIAL_TOKENS) + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def encode_words(self, words: list[str]) -> list[int]:
        return [self.word_to_id.get(w, UNK) for w in words]

    def decode(self, ids) -> str:
        keep = [self.id_to_word[int(i)] for i in ids if int(i) > UNK]
        return " ".join(keep)


def build_tokenizer(corpus: list[str]) -> Vocabulary:
    """Frequency-sorted vocabulary over the lowercased, split corpus."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    counts = Counter()
    for text in corpus:
        counts.update(split_words(text))
    ordered = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocabulary(ordered)


@dataclass
class TokenSequence:
    """Token ids with an attention mask; padded positions are masked out."""

    ids: np.ndarray
    mask: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.ids.shape != self.mask.shape:
            raise ValueError("ids and mask must have equal shape")
        if self.ids.ndim != 1 or self.ids.size == 0:
            raise ValueError("token sequence must be a non-empty 1-D array")
        if self.ids[0] not in (CLS, BOS, ENC):
            raise ValueError("sequence must start with [CLS], [BOS], or [ENC]")
        if (self.ids[~self.mask] != PAD).any():
            raise ValueError("masked positions must hold [PAD]")

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def encode_text(
    text: str,
    vocab: Vocabulary,
    start_token: int = CLS,
    max_len: int | None = None,
    append_eos: bool = False,
) -> TokenSequence:
    """Tokenize `text` with a leading start token, truncating to `max_len`."""
    ids = [start_token] + vocab.encode_words(split_words(text))
    if append_eos:
        ids.append(EOS)
    truncated = False
    if max_len is not None and len(ids) > max_len:
        ids = ids[:max_len]
        truncated = True
    arr = np.asarray(ids, dtype=np.int64)
    return TokenSequence(ids=arr, mask=np.ones(len(ids), dtype=bool), truncated=truncated)


def pad_batch(sequences: list[TokenSequence], length: int | None = None):
    """Stack sequences into (B, L) id and mask arrays, padding with [PAD]."""
    if length is None:
        length = max(len(s) for s in sequences)
    ids = np.full((len(sequences), length), PAD, dtype=np.int64)
    mask = np.zeros((len(sequences), length), dtype=bool)
    for i, s in enumerate(sequences):
        n = min(len(s), length)
        ids[i, :n] = s.ids[:n]
        mask[i, :n] = s.mask[:n]
    return ids, mask
