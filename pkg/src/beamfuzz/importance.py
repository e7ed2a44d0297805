"""Position importance from masked-query loss deltas.

Each perturbable position is masked with a literal unknown token and the
target queried once; the loss increase over the unmasked baseline, scaled
by its softmax share, fixes the perturbation schedule. Costs exactly
|perturbable| + 1 queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .objective import BleuConfig, SuccessCriterion, loss
from .threat import ThreatResponse
from .tokens import FuzzInput, mask_token, render

MASK = "[UNK]"


@dataclass(frozen=True)
class ImportanceRanking:
    """Per-position impact scores plus the derived visiting order.

    ``order`` is a permutation of the perturbable indices, score
    descending, ties by ascending index. The unmasked baseline loss and
    response are kept for reuse by the search loop.
    """

    scores: Mapping[int, float]
    order: tuple[int, ...]
    baseline_loss: float
    baseline_response: ThreatResponse


def _softmax(values: Sequence[float]) -> list[float]:
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    total = math.fsum(exps)
    return [e / total for e in exps]


def rank(
    inp: FuzzInput,
    perturbable: Sequence[int],
    threat,
    criterion: SuccessCriterion,
    cfg: BleuConfig = BleuConfig(),
) -> ImportanceRanking:
    """Rank perturbable positions by masked-loss impact.

    Issues one query for the unmasked input and one per masked position.
    Threat failures propagate to the caller.
    """
    if not perturbable:
        raise ValueError("need at least one perturbable position")
    baseline_response = threat.query(render(inp.tokens))
    baseline_loss = loss(baseline_response, inp, criterion, cfg).value
    deltas: list[float] = []
    for position in perturbable:
        masked = mask_token(inp.tokens, position, MASK)
        response = threat.query(render(masked))
        deltas.append(loss(response, inp, criterion, cfg).value - baseline_loss)
    shares = _softmax(deltas)
    scores = {
        pos: share * delta
        for pos, share, delta in zip(perturbable, shares, deltas)
    }
    order = tuple(sorted(perturbable, key=lambda pos: (-scores[pos], pos)))
    return ImportanceRanking(
        scores=scores,
        order=order,
        baseline_loss=baseline_loss,
        baseline_response=baseline_response,
    )
