"""Per-word substitution candidates.

Related words come from a lexicon file (synonyms, near-synonyms,
hypernyms/hyponyms); a precomputed embedding table ranks them by cosine
similarity to the original word, and the top-K survive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .tokens import Token

log = logging.getLogger(__name__)


class Relation(Enum):
    SYNONYM = "syn"
    NEAR_SYNONYM = "near"
    HYPER_HYPO = "hyp"


_RELATION_PRIORITY = {
    Relation.SYNONYM: 0,
    Relation.NEAR_SYNONYM: 1,
    Relation.HYPER_HYPO: 2,
}


@dataclass(frozen=True)
class LexiconEntry:
    """One candidate word for one original, with every relation it came from."""

    word: str
    candidate: str
    relations: frozenset[Relation]


class Lexicon:
    """Multimap original word -> candidate entries; lookups case-insensitive."""

    def __init__(self):
        self._entries: dict[str, dict[str, set[Relation]]] = {}
        self.skipped_multiword = 0

    def add(self, word: str, relation: Relation, candidate: str):
        bucket = self._entries.setdefault(word.lower(), {})
        bucket.setdefault(candidate, set()).add(relation)

    def lookup(self, word: str) -> list[LexiconEntry]:
        bucket = self._entries.get(word.lower(), {})
        return [
            LexiconEntry(word=word.lower(), candidate=c, relations=frozenset(rels))
            for c, rels in bucket.items()
        ]

    def __len__(self) -> int:
        return sum(len(b) for b in self._entries.values())

    def words(self) -> list[str]:
        return list(self._entries)


def load_lexicon(path: str | Path) -> Lexicon:
    """Parse a TSV lexicon: ``word<TAB>relation<TAB>candidate`` per line.

    Relations are ``syn``/``near``/``hyp``; ``#`` lines are comments. A
    (word, candidate) pair seen under several relations is stored once
    with all tags. Candidates containing whitespace are skipped (counted),
    since substitution is strictly one token for one token.
    """
    lexicon = Lexicon()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            cols = stripped.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
            word, rel_tag, candidate = (c.strip() for c in cols)
            if not word or not candidate:
                raise ValueError(f"{path}:{lineno}: empty word or candidate")
            try:
                relation = Relation(rel_tag)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: unknown relation {rel_tag!r}")
            if candidate.lower() == word.lower():
                raise ValueError(f"{path}:{lineno}: candidate equals its word")
            if any(ch.isspace() for ch in candidate):
                lexicon.skipped_multiword += 1
                continue
            lexicon.add(word, relation, candidate)
    if lexicon.skipped_multiword:
        log.warning(
            "%s: skipped %d multiword candidates", path, lexicon.skipped_multiword
        )
    return lexicon


class EmbeddingTable:
    """Word -> dense vector map with a fixed dimensionality."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        self.duplicates = 0

    def put(self, word: str, vector: np.ndarray):
        if vector.shape != (self.dim,):
            raise ValueError(
                f"vector for {word!r} has length {vector.shape[0]}, expected {self.dim}"
            )
        if not np.all(np.isfinite(vector)):
            raise ValueError(f"vector for {word!r} has non-finite values")
        if word in self._vectors:
            self.duplicates += 1
        self._vectors[word] = vector

    def get(self, word: str) -> np.ndarray | None:
        vec = self._vectors.get(word)
        if vec is None:
            vec = self._vectors.get(word.lower())
        return vec

    def __contains__(self, word: str) -> bool:
        return self.get(word) is not None

    def __len__(self) -> int:
        return len(self._vectors)


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse a text embedding file: ``word v1 v2 ... vd`` per line.

    An optional first line ``<count> <dim>`` (two integer fields) is
    treated as a header. Duplicate words keep the last vector, counted and
    warned about. Dimension mismatches name the offending word.
    """
    table: EmbeddingTable | None = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                except ValueError:
                    pass
                else:
                    table = EmbeddingTable(int(parts[1]))
                    continue
            word, values = parts[0], parts[1:]
            try:
                vector = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric vector component")
            if table is None:
                table = EmbeddingTable(len(vector))
            try:
                table.put(word, vector)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}")
    if table is None:
        raise ValueError(f"{path}: empty embedding file")
    if table.duplicates:
        log.warning("%s: %d duplicate words, last occurrence wins", path, table.duplicates)
    return table


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for the zero vector")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class CandidateSet:
    """Up to k replacement words for one original, best-first.

    Embedding-ranked sets are ordered by similarity descending, ties by
    word; when the original has no embedding the lexicon fallback order
    (relation priority, then word) is used with similarity 0.
    """

    original: str
    candidates: tuple[tuple[str, float], ...]
    k: int

    def __len__(self) -> int:
        return len(self.candidates)

    def words(self) -> list[str]:
        return [w for w, _ in self.candidates]


def candidate_set(
    word: str, lexicon: Lexicon, table: EmbeddingTable, k: int = 10
) -> CandidateSet:
    """Retrieve, score and truncate the substitution candidates for a word.

    Candidates equal to the original (case-insensitive) are dropped. On
    the embedding path, candidates without a vector (or with a zero
    vector) are dropped as unscorable.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    entries = [e for e in lexicon.lookup(word) if e.candidate.lower() != word.lower()]
    if not entries:
        return CandidateSet(original=word, candidates=(), k=k)
    origin_vec = table.get(word)
    if origin_vec is None:
        ordered = sorted(
            entries,
            key=lambda e: (
                min(_RELATION_PRIORITY[r] for r in e.relations),
                e.candidate,
            ),
        )
        chosen = tuple((e.candidate, 0.0) for e in ordered[:k])
        return CandidateSet(original=word, candidates=chosen, k=k)
    scored: list[tuple[str, float]] = []
    for entry in entries:
        vec = table.get(entry.candidate)
        if vec is None:
            continue
        try:
            sim = cosine(origin_vec, vec)
        except ValueError:
            continue
        scored.append((entry.candidate, sim))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return CandidateSet(original=word, candidates=tuple(scored[:k]), k=k)


def copy_case(original: str, replacement: str) -> str:
    """Carry the original's initial capitalization onto the replacement."""
    if not original or not replacement:
        return replacement
    head = original[0]
    if head.isupper():
        return replacement[0].upper() + replacement[1:]
    if head.islower():
        return replacement[0].lower() + replacement[1:]
    return replacement


def substitute(
    tokens: Sequence[Token], position: int, replacement: str
) -> tuple[Token, ...]:
    """New token sequence with one surface swapped; the input is untouched.

    The displaced surface's initial capitalization is copied onto the
    replacement. Non-perturbable positions (punctuation, stop words) are
    rejected.
    """
    if not 0 <= position < len(tokens):
        raise ValueError(f"position {position} out of range")
    target = tokens[position]
    if target.is_punct or target.is_stopword:
        raise ValueError(f"position {position} is not perturbable")
    out = list(tokens)
    out[position] = replace(target, surface=copy_case(target.surface, replacement))
    return tuple(out)
