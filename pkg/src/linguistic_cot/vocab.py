"""
Closed vocabulary and tokenizer shared by instructions and CoT text.

Text is split on whitespace; each word is split further into letter runs
(optionally ending in ':'), single digits, and single punctuation marks.
The first piece of every word carries the word-start marker, so

    "at (0.25,0.50)"  ->  ["▁at", "▁(", "0", ".", "2", "5", ",", ...]

and detokenize (concatenate, marker -> space, drop the leading space) is an
exact inverse on single-spaced text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from src.errors import ContractError, TokenIndexError, VocabularyError
from src.world.cot_text import GRAMMAR_CONTINUATIONS, GRAMMAR_WORDS

WORD_START = "▁"
PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)
MAX_WORD_TYPES = 96

_PIECE = re.compile(r"[A-Za-z]+:?|\d|[^\sA-Za-z\d]")


def split_pieces(text: str) -> list[str]:
    pieces: list[str] = []
    for word in text.split():
        parts = _PIECE.findall(word)
        if not parts:
            continue
        pieces.append(WORD_START + parts[0])
        pieces.extend(parts[1:])
    return pieces


@dataclass
class Vocabulary:
    """Bijective piece <-> id map; ids 0, 1, 2 are pad, bos, eos."""

    tokens: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if list(self.tokens[: len(SPECIALS)]) != list(SPECIALS):
            raise ContractError(f"Vocabulary must start with {SPECIALS}.")
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractError("Vocabulary entries must be unique.")
        if len(self.tokens) - len(SPECIALS) > MAX_WORD_TYPES:
            raise ContractError(f"Vocabulary has {len(self.tokens) - len(SPECIALS)} word types; limit {MAX_WORD_TYPES}.")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_grammar(cls) -> "Vocabulary":
        words = [WORD_START + w for w in GRAMMAR_WORDS]
        return cls(tokens=[*SPECIALS, *words, *GRAMMAR_CONTINUATIONS])

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for piece in split_pieces(text):
            idx = self._index.get(piece)
            if idx is None:
                raise VocabularyError(piece.removeprefix(WORD_START))
            ids.append(idx)
        return ids

    def detokenize(self, ids: Iterable[int]) -> str:
        parts = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise TokenIndexError(f"Token id {i} outside [0, {len(self.tokens)}).")
            if i < len(SPECIALS):
                continue
            parts.append(self.tokens[i])
        text = "".join(parts).replace(WORD_START, " ")
        return text[1:] if text.startswith(" ") else text

    def pad(self, ids: Sequence[int], length: int) -> list[int]:
        return list(ids) + [self.pad_id] * (length - len(ids))
