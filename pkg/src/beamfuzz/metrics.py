"""Post-run evaluation: per-seed reports, aggregate metrics, fluency scoring.

Reports serialize to JSON Lines; aggregation produces success rate, change
rate, perplexity (pluggable scorer), query count and time overhead, the
latter four averaged over successful cases only.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .threat import QueryLedger
from .tokens import tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceEntry:
    """One fuzzing-loop iteration: counter, temperature, width, entropy, best."""

    iteration: int
    temperature: float
    width: int
    entropy: float | None
    best_loss: float


@dataclass
class FuzzReport:
    """Outcome of fuzzing one seed."""

    seed_id: str
    success: bool
    final_variant: str
    substitutions: tuple[tuple[int, str, str], ...]
    loss_trace: tuple[TraceEntry, ...]
    queries: QueryLedger
    wall_time_s: float
    seed_tokens: int
    reference: str
    objective: str
    final_loss: float
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "success": self.success,
            "aborted": self.aborted,
            "final_variant": self.final_variant,
            "final_loss": self.final_loss,
            "substitutions": [list(s) for s in self.substitutions],
            "loss_trace": [
                {
                    "iteration": t.iteration,
                    "temperature": t.temperature,
                    "width": t.width,
                    "entropy": t.entropy,
                    "best_loss": t.best_loss,
                }
                for t in self.loss_trace
            ],
            "queries": {
                "logical_queries": self.queries.logical_queries,
                "model_invocations": self.queries.model_invocations,
                "wall_time_s": self.queries.wall_time_s,
            },
            "wall_time_s": self.wall_time_s,
            "seed_tokens": self.seed_tokens,
            "reference": self.reference,
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FuzzReport":
        q = data["queries"]
        return cls(
            seed_id=data["seed_id"],
            success=data["success"],
            aborted=data.get("aborted", False),
            final_variant=data["final_variant"],
            final_loss=data["final_loss"],
            substitutions=tuple(
                (int(p), str(a), str(b)) for p, a, b in data["substitutions"]
            ),
            loss_trace=tuple(
                TraceEntry(
                    iteration=t["iteration"],
                    temperature=t["temperature"],
                    width=t["width"],
                    entropy=t["entropy"],
                    best_loss=t["best_loss"],
                )
                for t in data["loss_trace"]
            ),
            queries=QueryLedger(
                logical_queries=q["logical_queries"],
                model_invocations=q["model_invocations"],
                wall_time_s=q["wall_time_s"],
            ),
            wall_time_s=data["wall_time_s"],
            seed_tokens=data["seed_tokens"],
            reference=data["reference"],
            objective=data["objective"],
        )


def write_reports(reports: Iterable[FuzzReport], path: str | Path):
    """One report per line, key-sorted for byte-stable output."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict(), sort_keys=True))
            fh.write("\n")


def read_reports(path: str | Path) -> list[FuzzReport]:
    reports = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                reports.append(FuzzReport.from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad report record: {exc}")
    return reports


@dataclass
class RunSummary:
    """Aggregate metrics over one report set.

    c_rate, ppl, q_n, t_o are averaged over successful cases only and are
    None when there are no successes (or no scorer for ppl).
    """

    n: int
    n_suc: int
    s_rate: float
    c_rate: float | None
    ppl: float | None
    q_n: float | None
    q_n_invocations: float | None
    t_o: float | None
    g_e: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_suc": self.n_suc,
            "s_rate": self.s_rate,
            "c_rate": self.c_rate,
            "ppl": self.ppl,
            "q_n": self.q_n,
            "q_n_invocations": self.q_n_invocations,
            "t_o": self.t_o,
            "g_e": self.g_e,
        }


class Scorer(Protocol):
    """Language-model interface for perplexity: per-token log-probabilities."""

    def log_prob_sequence(self, words: Sequence[str]) -> list[float]: ...


class BigramScorer:
    """Interpolated bigram model with add-alpha smoothing.

    Trained on a plain-text corpus, one sequence per line. The vocabulary
    reserves one slot for unseen words. Desk-scale stand-in for a real
    language model, so absolute perplexities are not comparable across
    scorers.
    """

    def __init__(self, corpus_text: str, alpha: float = 0.1, interpolation: float = 0.5):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= interpolation <= 1.0:
            raise ValueError("interpolation must lie in [0, 1]")
        self.alpha = alpha
        self.interpolation = interpolation
        self._unigrams: Counter = Counter()
        self._bigrams: Counter = Counter()
        for line in corpus_text.splitlines():
            words = [t.surface for t in tokenize(line)]
            self._unigrams.update(words)
            self._bigrams.update(zip(words, words[1:]))
        self._total = sum(self._unigrams.values())
        self._vocab = len(self._unigrams) + 1  # one slot for unseen words

    @classmethod
    def from_file(cls, path: str | Path, alpha: float = 0.1, interpolation: float = 0.5):
        return cls(Path(path).read_text(encoding="utf-8"), alpha, interpolation)

    def _p_unigram(self, word: str) -> float:
        return (self._unigrams[word] + self.alpha) / (self._total + self.alpha * self._vocab)

    def _p_bigram(self, prev: str, word: str) -> float:
        return (self._bigrams[(prev, word)] + self.alpha) / (
            self._unigrams[prev] + self.alpha * self._vocab
        )

    def log_prob_sequence(self, words: Sequence[str]) -> list[float]:
        probs = []
        for i, word in enumerate(words):
            p_uni = self._p_unigram(word)
            if i == 0:
                probs.append(math.log(p_uni))
            else:
                p = self.interpolation * self._p_bigram(words[i - 1], word) + (
                    1.0 - self.interpolation
                ) * p_uni
                probs.append(math.log(p))
        return probs


def perplexity(text: str, scorer: Scorer) -> float:
    """exp of the mean negative token log-likelihood; 1.0 for empty text."""
    words = [t.surface for t in tokenize(text)]
    if not words:
        return 1.0
    log_probs = scorer.log_prob_sequence(words)
    return math.exp(-math.fsum(log_probs) / len(words))


def s_rate(reports: Sequence[FuzzReport]) -> float:
    """Percentage of seeds whose fuzzing run found a failing variant."""
    if not reports:
        return 0.0
    return 100.0 * sum(1 for r in reports if r.success) / len(reports)


def c_rate(reports: Sequence[FuzzReport]) -> float | None:
    """Mean percentage of substituted words, over successful cases."""
    rates = [
        100.0 * len(r.substitutions) / r.seed_tokens
        for r in reports
        if r.success and r.seed_tokens
    ]
    if not rates:
        return None
    return math.fsum(rates) / len(rates)


def grammar_error_hook(text: str, command: str | None = None) -> int | None:
    """Count grammar errors via an external checker, if one is configured.

    The checker receives the text on stdin and must print a single integer
    count on stdout. Any failure yields None with a warning; it never
    aborts the run.
    """
    if not command:
        return None
    try:
        proc = subprocess.run(
            shlex.split(command),
            input=text,
            capture_output=True,
            text=True,
            timeout=60,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"exit code {proc.returncode}")
        return int(proc.stdout.strip())
    except Exception as exc:  # checker problems must never kill a run
        log.warning("grammar checker failed: %s", exc)
        return None


def summarize(
    reports: Sequence[FuzzReport],
    scorer: Scorer | None = None,
    query_metric: str = "logical",
    grammar_command: str | None = None,
) -> RunSummary:
    """Fold a report set into the aggregate metrics.

    ``query_metric`` selects whether q_n averages logical queries
    (default, the conservative per-test-case count) or model invocations;
    the other is reported alongside either way.
    """
    if query_metric not in ("logical", "invocations"):
        raise ValueError("query_metric must be 'logical' or 'invocations'")
    successes = [r for r in reports if r.success]

    def _mean(values: list[float]) -> float | None:
        return math.fsum(values) / len(values) if values else None

    q_logical = _mean([float(r.queries.logical_queries) for r in successes])
    q_invocations = _mean([float(r.queries.model_invocations) for r in successes])
    ppl = None
    if scorer is not None and successes:
        ppl = _mean([perplexity(r.final_variant, scorer) for r in successes])
    g_e = None
    if grammar_command and successes:
        counts = [grammar_error_hook(r.final_variant, grammar_command) for r in successes]
        found = [float(c) for c in counts if c is not None]
        g_e = _mean(found)
    return RunSummary(
        n=len(reports),
        n_suc=len(successes),
        s_rate=s_rate(reports),
        c_rate=c_rate(reports),
        ppl=ppl,
        q_n=q_logical if query_metric == "logical" else q_invocations,
        q_n_invocations=q_invocations,
        t_o=_mean([r.wall_time_s for r in successes]),
        g_e=g_e,
    )


def write_summary(summary: RunSummary, path: str | Path):
    Path(path).write_text(
        json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_summary_csv(rows: dict[str, RunSummary], path: str | Path):
    """Optional CSV export: one row per named summary (e.g. ablation mode)."""
    cols = ["name", "n", "n_suc", "s_rate", "c_rate", "ppl", "q_n", "q_n_invocations", "t_o", "g_e"]
    lines = [",".join(cols)]
    for name, summary in rows.items():
        data = summary.to_dict()
        lines.append(
            ",".join([name] + ["" if data[c] is None else str(data[c]) for c in cols[1:]])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
