"""The fuzzing loop: beam search with simulated-annealing acceptance.

One seed is fuzzed by walking its perturbable positions in importance
order. Each iteration expands every beam member with every candidate word
at the current position, admits candidates into a temporary beam by the
annealing criterion (better-than-seed always, worse with probability
exp(delta / temperature) under a logarithmically cooling temperature),
then rebuilds the beam: the global best variant is carried over with a
soft elitism probability and the remaining slots are filled by
exp(loss)-weighted sampling without replacement. Beam width adapts each
iteration to the Shannon entropy of the temporary beam's normalized loss
distribution, within [b_min, b_max].

Randomness is drawn from one per-seed stream in a fixed order per
iteration: first one draw per evaluated candidate with delta <= 0 (in
evaluation order), then one elitism draw, then the sampling draws.
Iterations with no candidates consume no draws. Ablation switches:
``disable_sa`` admits only strict improvements, ``disable_entropy_pruning``
freezes the width, ``greedy`` degenerates to single-path hill-climbing
with no randomness at all.

Every evaluated candidate is checked against the success criterion, even
ones the annealing filter rejects: a discovered failure is a failure, and
discarding it would be a false negative of the test tool.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass
from typing import Sequence

from .importance import rank
from .metrics import FuzzReport, TraceEntry
from .objective import BleuConfig, Loss, SuccessCriterion, is_success, loss
from .perturb import CandidateSet, EmbeddingTable, Lexicon, candidate_set, substitute
from .threat import ThreatError, ThreatResponse
from .tokens import FuzzInput, Token, perturbable_indices, render


@dataclass(frozen=True)
class SearchParams:
    """Loop hyperparameters and ablation switches."""

    gamma: float = 0.3
    epsilon: float = 1e-10
    b0: int = 2
    b_min: int = 2
    b_max: int = 6
    sigma: int = 1
    p0_elite: float = 0.9
    tem0: float = 1.0
    disable_sa: bool = False
    disable_entropy_pruning: bool = False
    greedy: bool = False

    def __post_init__(self):
        if not self.b_min <= self.b0 <= self.b_max:
            raise ValueError("need b_min <= b0 <= b_max")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.p0_elite <= 1.0:
            raise ValueError("p0_elite must lie in [0, 1]")
        if self.tem0 <= 0:
            raise ValueError("tem0 must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class Variant:
    """One point of the search space: substituted tokens plus evaluation."""

    tokens: tuple[Token, ...]
    loss: Loss
    substitutions: tuple[tuple[int, str, str], ...]
    response: ThreatResponse

    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.tokens)


def cool(iteration: int, params: SearchParams) -> float:
    """Logarithmic cooling: tem0 / (1 + gamma * ln(1 + iteration))."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return params.tem0 / (1.0 + params.gamma * math.log(1.0 + iteration))


def sa_accept(delta: float, temperature: float, rng: random.Random) -> bool:
    """Annealing acceptance: improvements always, others by exp(delta/tem).

    Consumes one rng draw iff delta <= 0.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if delta > 0:
        return True
    return rng.random() < math.exp(delta / temperature)


def beam_entropy(losses: Sequence[float], epsilon: float) -> float:
    """Shannon entropy of the normalized loss distribution.

    Losses are normalized to a probability vector (uniform if all zero);
    epsilon keeps the logarithm finite.
    """
    if not losses:
        raise ValueError("losses must be non-empty")
    if any(l < 0 for l in losses):
        raise ValueError("losses must be non-negative")
    total = math.fsum(losses)
    if total == 0.0:
        probs = [1.0 / len(losses)] * len(losses)
    else:
        probs = [l / total for l in losses]
    return -math.fsum(p * math.log(p + epsilon) for p in probs)


def update_width(b_t: int, entropy: float, params: SearchParams) -> int:
    """Adapt the beam width to the entropy signal, clamped to [b_min, b_max].

    raw = max(b_min, min(b_max, b_t * (1 + H / b_max), b_t + sigma)),
    rounded half-up. A set disable_entropy_pruning flag freezes the width.
    """
    if params.disable_entropy_pruning:
        return b_t
    raw = max(
        float(params.b_min),
        min(float(params.b_max), b_t * (1.0 + entropy / params.b_max), float(b_t + params.sigma)),
    )
    rounded = math.floor(raw + 0.5)
    return max(params.b_min, min(params.b_max, rounded))


def elite_probability(best_loss: float, beam_losses: Sequence[float], p0: float) -> float:
    """Soft retention probability of the global best variant.

    p* is the best loss's softmax share among the beam losses (which must
    include it); the retention probability is p0 + (1 - p0) * p*.
    """
    if not beam_losses:
        raise ValueError("beam_losses must be non-empty")
    total = math.fsum(math.exp(l) for l in beam_losses)
    p_star = math.exp(best_loss) / total
    return p0 + (1.0 - p0) * p_star


def soft_sample(pool: Sequence[Variant], count: int, rng: random.Random) -> list[Variant]:
    """Sample without replacement, each draw weighted by exp(loss).

    Returns the whole pool (original order, no draws) when count covers it.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count >= len(pool):
        return list(pool)
    remaining = list(pool)
    chosen: list[Variant] = []
    for _ in range(count):
        weights = [math.exp(v.loss.value) for v in remaining]
        total = math.fsum(weights)
        pick = rng.random() * total
        cumulative = 0.0
        index = len(remaining) - 1
        for i, w in enumerate(weights):
            cumulative += w
            if pick < cumulative:
                index = i
                break
        chosen.append(remaining.pop(index))
    return chosen


def expand(
    beam: Sequence[Variant],
    position: int,
    candidates: CandidateSet,
    seed: FuzzInput,
    threat,
    criterion: SuccessCriterion,
    cfg: BleuConfig,
) -> list[Variant]:
    """Evaluate every (beam member, candidate) substitution at one position.

    Variants with identical token sequences are merged before querying, so
    each distinct string costs one query (minus cache hits). Order is
    deterministic: beam order, then candidate rank.
    """
    seen: set[tuple[str, ...]] = set()
    out: list[Variant] = []
    for parent in beam:
        original_surface = parent.tokens[position].surface
        for word, _sim in candidates.candidates:
            tokens = substitute(parent.tokens, position, word)
            surfaces = tuple(t.surface for t in tokens)
            if surfaces in seen:
                continue
            seen.add(surfaces)
            response = threat.query(render(tokens))
            variant_loss = loss(response, seed, criterion, cfg)
            out.append(
                Variant(
                    tokens=tokens,
                    loss=variant_loss,
                    substitutions=parent.substitutions
                    + ((position, original_surface, tokens[position].surface),),
                    response=response,
                )
            )
    return out


def _best_of(variants: Sequence[Variant]) -> Variant:
    # max() keeps the first of equals, preserving evaluation order
    return max(variants, key=lambda v: v.loss.value)


def _pick_success(
    variants: Sequence[Variant],
    seed: FuzzInput,
    criterion: SuccessCriterion,
    cfg: BleuConfig,
) -> Variant | None:
    hits = [v for v in variants if is_success(v.response, seed, criterion, cfg)]
    return _best_of(hits) if hits else None


def fuzz(
    seed: FuzzInput,
    lexicon: Lexicon,
    embeddings: EmbeddingTable,
    threat,
    criterion: SuccessCriterion,
    cfg: BleuConfig,
    params: SearchParams,
    *,
    rng: random.Random,
    k: int = 10,
) -> FuzzReport:
    """Fuzz one seed to a report.

    A seed with no perturbable positions yields an immediate non-success
    report; a threat failure yields a report marked aborted with whatever
    trace was accumulated.
    """
    started = time.perf_counter()
    ledger_before = threat.ledger_snapshot()
    objective_kind = criterion.kind.value
    perturbable = perturbable_indices(seed)

    def report(
        final: Variant | None, success: bool, trace: list[TraceEntry], aborted: bool = False
    ) -> FuzzReport:
        return FuzzReport(
            seed_id=seed.seed_id,
            success=success,
            aborted=aborted,
            final_variant=render(final.tokens) if final else render(seed.tokens),
            final_loss=final.loss.value if final else 0.0,
            substitutions=final.substitutions if final else (),
            loss_trace=tuple(trace),
            queries=threat.ledger_snapshot().delta(ledger_before),
            wall_time_s=time.perf_counter() - started,
            seed_tokens=len(seed.tokens),
            reference=seed.reference,
            objective=objective_kind,
        )

    if not perturbable:
        return report(None, success=False, trace=[])

    trace: list[TraceEntry] = []
    best: Variant | None = None
    try:
        ranking = rank(seed, perturbable, threat, criterion, cfg)
        seed_loss = ranking.baseline_loss
        seed_variant = Variant(
            tokens=seed.tokens,
            loss=Loss(value=seed_loss),
            substitutions=(),
            response=ranking.baseline_response,
        )
        beam: list[Variant] = [seed_variant]
        best = seed_variant
        width = 1 if params.greedy else params.b0
        temperature = params.tem0
        iteration = 0
        candidate_cache: dict[int, CandidateSet] = {}

        while iteration < len(ranking.order):
            position = ranking.order[iteration]
            if position not in candidate_cache:
                candidate_cache[position] = candidate_set(
                    seed.tokens[position].surface, lexicon, embeddings, k
                )
            evaluated = expand(
                beam, position, candidate_cache[position], seed, threat, criterion, cfg
            )

            if params.greedy:
                temp_beam = []
                if evaluated:
                    top = _best_of(evaluated)
                    if top.loss.value > beam[0].loss.value:
                        temp_beam = [top]
            else:
                temp_beam = []
                for variant in evaluated:
                    delta = variant.loss.value - seed_loss
                    if params.disable_sa:
                        accepted = delta > 0
                    else:
                        accepted = sa_accept(delta, temperature, rng)
                    if accepted:
                        temp_beam.append(variant)
                if evaluated and not temp_beam:
                    # every candidate was rejected; keep the search moving
                    temp_beam = [_best_of(evaluated)]

            iteration += 1
            for variant in temp_beam:
                if variant.loss.value > best.loss.value:
                    best = variant
            temperature = cool(iteration, params)

            winner = _pick_success(evaluated, seed, criterion, cfg)
            if winner is not None:
                trace.append(
                    TraceEntry(iteration, temperature, width, None, max(best.loss.value, winner.loss.value))
                )
                return report(winner, success=True, trace=trace)

            if not temp_beam:
                # no candidates at this position: trivial iteration
                trace.append(TraceEntry(iteration, temperature, width, None, best.loss.value))
                continue

            if params.greedy:
                beam = temp_beam
                trace.append(TraceEntry(iteration, temperature, width, None, best.loss.value))
                continue

            entropy = beam_entropy([v.loss.value for v in temp_beam], params.epsilon)
            width = update_width(width, entropy, params)

            elite_losses = [v.loss.value for v in temp_beam]
            best_surfaces = best.surfaces()
            in_temp = any(v.surfaces() == best_surfaces for v in temp_beam)
            if not in_temp:
                elite_losses = elite_losses + [best.loss.value]
            p_e = elite_probability(best.loss.value, elite_losses, params.p0_elite)
            carried = rng.random() < p_e
            if carried:
                pool = list(temp_beam)
                for i, variant in enumerate(pool):
                    if variant.surfaces() == best_surfaces:
                        del pool[i]
                        break
                budget = width - 1
                beam = [best] + soft_sample(pool, budget, rng)
            else:
                beam = soft_sample(temp_beam, width, rng)
            if not beam:
                beam = [best]
            trace.append(TraceEntry(iteration, temperature, width, entropy, best.loss.value))

        success = is_success(best.response, seed, criterion, cfg)
        return report(best, success=success, trace=trace)
    except ThreatError:
        return report(best, success=False, trace=trace, aborted=True)
