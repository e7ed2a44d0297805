"""Search objectives: n-gram overlap scoring, loss, and success predicates.

Generation runs are guided by the complement of the n-gram overlap score
between the target's output and the reference (loss = 1 - score, so losses
are non-negative and bounded, which keeps the downstream normalization and
exponentiation well-defined); classification runs by the confidence drain
on the original label.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .threat import CLASSIFICATION, GENERATION, ThreatResponse
from .tokens import FuzzInput, tokenize


class Smoothing(Enum):
    STRICT = "strict"
    FLOOR = "floor"


@dataclass(frozen=True)
class BleuConfig:
    """Overlap score settings: n-gram order, weights, zero handling.

    Strict smoothing zeroes the whole score when any precision is zero;
    floor smoothing substitutes ``floor_eps`` for zero precisions so short
    or heavily corrupted hypotheses still yield a usable gradient.
    """

    max_n: int = 4
    weights: tuple[float, ...] | None = None
    smoothing: Smoothing = Smoothing.FLOOR
    floor_eps: float = 1e-9

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if self.weights is None:
            object.__setattr__(self, "weights", (1.0 / self.max_n,) * self.max_n)
        weights = tuple(self.weights)
        object.__setattr__(self, "weights", weights)
        if len(weights) != self.max_n:
            raise ValueError("need one weight per n-gram order")
        if any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if self.smoothing is Smoothing.FLOOR and self.floor_eps <= 0:
            raise ValueError("floor_eps must be positive")


class CriterionKind(Enum):
    BLEU_BELOW = "bleu_below"
    LABEL_FLIPPED = "label_flipped"


@dataclass(frozen=True)
class SuccessCriterion:
    kind: CriterionKind = CriterionKind.BLEU_BELOW
    threshold: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


@dataclass(frozen=True)
class Loss:
    """Bounded search loss; for generation, value = 1 - raw_bleu exactly."""

    value: float
    raw_bleu: float | None = None


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def ngram_precision(hypothesis: Sequence[str], reference: Sequence[str], n: int) -> float:
    """Clipped n-gram precision of hypothesis against reference.

    Each hypothesis n-gram counts at most as often as it appears in the
    reference. 0 when the hypothesis has fewer than n tokens.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    hyp_counts = _ngrams(hypothesis, n)
    total = sum(hyp_counts.values())
    if total == 0:
        return 0.0
    ref_counts = _ngrams(reference, n)
    clipped = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return clipped / total


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    """Penalty for hypotheses shorter than the reference.

    1 when hyp is longer; exp(1 - r/c) when 0 < c <= r; 0 for an empty
    hypothesis by convention.
    """
    if ref_len < 1:
        raise ValueError("ref_len must be >= 1")
    if hyp_len == 0:
        return 0.0
    if hyp_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def bleu(hypothesis: str, reference: str, cfg: BleuConfig = BleuConfig()) -> float:
    """Weighted geometric mean of clipped precisions times brevity penalty.

    Both sides are tokenized with the package tokenizer; scoring is
    case-sensitive over all tokens, punctuation included.
    """
    ref_tokens = [t.surface for t in tokenize(reference)]
    if not ref_tokens:
        raise ValueError("reference must be non-empty")
    hyp_tokens = [t.surface for t in tokenize(hypothesis)]
    bp = brevity_penalty(len(hyp_tokens), len(ref_tokens))
    if bp == 0.0:
        return 0.0
    log_sum = 0.0
    for n, weight in zip(range(1, cfg.max_n + 1), cfg.weights):
        p_n = ngram_precision(hyp_tokens, ref_tokens, n)
        if p_n == 0.0:
            if cfg.smoothing is Smoothing.STRICT:
                return 0.0
            p_n = cfg.floor_eps
        log_sum += weight * math.log(p_n)
    return bp * math.exp(log_sum)


def _original_label(inp: FuzzInput) -> str:
    if not inp.reference:
        raise ValueError(f"seed {inp.seed_id}: missing original label")
    return inp.reference


def loss(
    output: ThreatResponse,
    inp: FuzzInput,
    criterion: SuccessCriterion,
    cfg: BleuConfig = BleuConfig(),
) -> Loss:
    """Search loss of one target response against the seed's expectation."""
    if criterion.kind is CriterionKind.BLEU_BELOW:
        if output.kind != GENERATION or output.text is None:
            raise ValueError("generation objective needs a text response")
        score = bleu(output.text, inp.reference, cfg)
        return Loss(value=1.0 - score, raw_bleu=score)
    if output.kind != CLASSIFICATION or output.confidences is None:
        raise ValueError("classification objective needs a label response")
    confidence = output.confidences.get(_original_label(inp), 0.0)
    return Loss(value=1.0 - confidence)


def is_success(
    output: ThreatResponse,
    inp: FuzzInput,
    criterion: SuccessCriterion,
    cfg: BleuConfig = BleuConfig(),
) -> bool:
    """True when the response violates the seed's quality expectation."""
    if criterion.kind is CriterionKind.BLEU_BELOW:
        if output.kind != GENERATION or output.text is None:
            raise ValueError("generation objective needs a text response")
        return bleu(output.text, inp.reference, cfg) < criterion.threshold
    if output.kind != CLASSIFICATION or output.label is None:
        raise ValueError("classification objective needs a label response")
    return output.label != _original_label(inp)
