"""Word-level tokenization and the perturbable surface of a seed input.

A seed is a (prompt, example) pair plus the expected output. Both segments
are tokenized into one contiguously indexed sequence; positions that are
punctuation or stop words are excluded from perturbation.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class Segment(Enum):
    PROMPT = "prompt"
    EXAMPLE = "example"


@dataclass(frozen=True)
class Token:
    """One surface word or punctuation mark at a fixed position."""

    surface: str
    index: int
    segment: Segment
    is_stopword: bool = False
    is_punct: bool = False


@dataclass(frozen=True)
class FuzzInput:
    """Tokenized seed: prompt + example, expected output, stable id.

    Token indices run contiguously from 0 across prompt then example.
    For classification seeds, ``reference`` holds the original label.
    """

    prompt_tokens: tuple[Token, ...]
    example_tokens: tuple[Token, ...]
    reference: str
    seed_id: str

    @property
    def tokens(self) -> tuple[Token, ...]:
        return self.prompt_tokens + self.example_tokens


class StopwordSet:
    """Case-insensitive stop-word membership for one or more languages."""

    def __init__(self, language: str, words: Iterable[str]):
        self.language = language
        self.words = {w.lower() for w in words}

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def from_file(cls, path: str | Path, language: str | None = None) -> "StopwordSet":
        """Load a one-word-per-line UTF-8 list; ``#`` lines are comments.

        Lines are NFC-normalized and lowercased on load.
        """
        path = Path(path)
        words = []
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = unicodedata.normalize("NFC", line.strip())
                if not line or line.startswith("#"):
                    continue
                words.append(line.lower())
        return cls(language or path.stem, words)

    @classmethod
    def from_files(cls, paths: Sequence[str | Path]) -> "StopwordSet":
        """Union of several per-language lists."""
        merged: set[str] = set()
        names = []
        for p in paths:
            s = cls.from_file(p)
            merged |= s.words
            names.append(s.language)
        return cls("+".join(names) if names else "empty", merged)


def bundled_stopwords(language: str) -> Path:
    """Path of a stop-word list shipped with the package."""
    data = Path(__file__).parent / "data" / "stopwords" / f"{language}.txt"
    if not data.exists():
        raise FileNotFoundError(f"no bundled stop-word list for {language!r}")
    return data


def _is_punct_char(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_chunk(chunk: str) -> list[tuple[str, bool]]:
    """Peel leading/trailing punctuation off a whitespace chunk.

    Returns (surface, is_punct) pairs in original order; each peeled
    punctuation character becomes its own token. Interior punctuation
    (hyphens, apostrophes) stays attached to the word.
    """
    leading: list[str] = []
    trailing: list[str] = []
    while chunk and _is_punct_char(chunk[0]):
        leading.append(chunk[0])
        chunk = chunk[1:]
    while chunk and _is_punct_char(chunk[-1]):
        trailing.append(chunk[-1])
        chunk = chunk[:-1]
    trailing.reverse()
    parts: list[tuple[str, bool]] = [(c, True) for c in leading]
    if chunk:
        parts.append((chunk, False))
    parts.extend((c, True) for c in trailing)
    return parts


def tokenize(
    text: str,
    segment: Segment = Segment.EXAMPLE,
    start_index: int = 0,
    stops: StopwordSet | None = None,
) -> list[Token]:
    """Split on whitespace, then peel boundary punctuation into own tokens.

    Deterministic; empty text yields an empty list. Stop-word flags are
    stamped when ``stops`` is given.
    """
    tokens: list[Token] = []
    idx = start_index
    for chunk in text.split():
        for surface, punct in _split_chunk(chunk):
            tokens.append(
                Token(
                    surface=surface,
                    index=idx,
                    segment=segment,
                    is_stopword=(not punct and stops is not None and surface in stops),
                    is_punct=punct,
                )
            )
            idx += 1
    return tokens


def make_fuzz_input(
    prompt: str,
    example: str,
    reference: str,
    seed_id: str,
    stops: StopwordSet | None = None,
) -> FuzzInput:
    """Tokenize both segments into one contiguously indexed input."""
    prompt_tokens = tokenize(prompt, Segment.PROMPT, 0, stops)
    example_tokens = tokenize(example, Segment.EXAMPLE, len(prompt_tokens), stops)
    return FuzzInput(
        prompt_tokens=tuple(prompt_tokens),
        example_tokens=tuple(example_tokens),
        reference=reference,
        seed_id=seed_id,
    )


def filter_perturbable(inp: FuzzInput, stops: StopwordSet) -> list[int]:
    """Indices of tokens, across both segments, open to substitution.

    A position survives when it is not punctuation and its lowercase
    surface is not a stop word. Returned in ascending index order; an
    input of only stop words yields an empty list.
    """
    return [
        t.index
        for t in inp.tokens
        if not t.is_punct and t.surface not in stops
    ]


def perturbable_indices(inp: FuzzInput) -> list[int]:
    """Perturbable positions from the flags stamped at construction."""
    return [t.index for t in inp.tokens if not t.is_punct and not t.is_stopword]


def render(tokens: Sequence[Token]) -> str:
    """Detokenize: single spaces between tokens, none before punctuation."""
    parts: list[str] = []
    for tok in tokens:
        if parts and not tok.is_punct:
            parts.append(" ")
        parts.append(tok.surface)
    return "".join(parts)


def mask_token(tokens: Sequence[Token], position: int, mask: str) -> tuple[Token, ...]:
    """Replace one surface verbatim (no case copying); input untouched."""
    out = list(tokens)
    out[position] = replace(out[position], surface=mask)
    return tuple(out)
