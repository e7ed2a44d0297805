"""Query boundary to the system under test.

One uniform interface (``query(text) -> ThreatResponse``) backed by either
a live HTTP endpoint or deterministic in-process mocks. A per-run caching
wrapper keeps exact-string response caching and query/time accounting.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .tokens import tokenize

GENERATION = "generation"
CLASSIFICATION = "classification"

_CONFIDENCE_SUM_TOL = 1e-6


class ThreatError(Exception):
    """Base class for threat-model failures; carries the offending input."""

    def __init__(self, message: str, input_text: str = ""):
        super().__init__(message)
        self.input_text = input_text


class ThreatTransportError(ThreatError):
    """Connection-level failure talking to the endpoint."""


class ThreatTimeoutError(ThreatError):
    """The endpoint did not answer within the configured timeout."""


class ThreatStatusError(ThreatError):
    """The endpoint answered with a non-success HTTP status."""


class ThreatPayloadError(ThreatError):
    """The endpoint answered with an undecodable or invalid body."""


@dataclass(frozen=True)
class ThreatResponse:
    """Target system output: generated text, or label + confidences."""

    kind: str
    text: str | None = None
    label: str | None = None
    confidences: Mapping[str, float] | None = None
    latency_s: float = 0.0
    cached: bool = False

    def payload(self) -> tuple:
        """Value identity, ignoring latency/cached bookkeeping."""
        conf = tuple(sorted(self.confidences.items())) if self.confidences else None
        return (self.kind, self.text, self.label, conf)


def generation_response(text: str, latency_s: float = 0.0) -> ThreatResponse:
    return ThreatResponse(kind=GENERATION, text=text, latency_s=latency_s)


def classification_response(
    label: str, confidences: Mapping[str, float], latency_s: float = 0.0
) -> ThreatResponse:
    if len(confidences) > 1:
        total = math.fsum(confidences.values())
        if abs(total - 1.0) > _CONFIDENCE_SUM_TOL:
            raise ThreatPayloadError(f"confidences sum to {total}, expected 1")
    return ThreatResponse(
        kind=CLASSIFICATION,
        label=label,
        confidences=dict(confidences),
        latency_s=latency_s,
    )


@dataclass
class QueryLedger:
    """Counters over one client: every request, cache misses, elapsed time."""

    logical_queries: int = 0
    model_invocations: int = 0
    wall_time_s: float = 0.0

    def snapshot(self) -> "QueryLedger":
        return QueryLedger(self.logical_queries, self.model_invocations, self.wall_time_s)

    def delta(self, earlier: "QueryLedger") -> "QueryLedger":
        return QueryLedger(
            self.logical_queries - earlier.logical_queries,
            self.model_invocations - earlier.model_invocations,
            self.wall_time_s - earlier.wall_time_s,
        )


class Backend(Protocol):
    def respond(self, text: str) -> ThreatResponse: ...


class CachingThreat:
    """Cache + ledger wrapper over a backend; safe for concurrent query().

    The cache key is the exact input string. Every query() bumps
    logical_queries; only cache misses reach the backend and bump
    model_invocations.
    """

    def __init__(self, backend: Backend, cache_enabled: bool = True):
        self._backend = backend
        self._cache_enabled = cache_enabled
        self._cache: dict[str, ThreatResponse] = {}
        self._ledger = QueryLedger()
        self._lock = threading.Lock()

    def query(self, input_text: str) -> ThreatResponse:
        start = time.perf_counter()
        with self._lock:
            self._ledger.logical_queries += 1
            hit = self._cache.get(input_text) if self._cache_enabled else None
        if hit is not None:
            with self._lock:
                self._ledger.wall_time_s += time.perf_counter() - start
            return replace(hit, cached=True, latency_s=0.0)
        response = self._backend.respond(input_text)
        elapsed = time.perf_counter() - start
        with self._lock:
            self._ledger.model_invocations += 1
            self._ledger.wall_time_s += elapsed
            if self._cache_enabled:
                self._cache[input_text] = response
        return response

    def ledger_snapshot(self) -> QueryLedger:
        with self._lock:
            return self._ledger.snapshot()


@dataclass(frozen=True)
class TriggerRule:
    """Corrupt the output when enough trigger tokens appear in the input.

    Fires when at least ``min_count`` distinct members of ``tokens`` are
    present (case-insensitive). Effects: ``phrase`` replaces the output
    with a fixed wrong phrase, ``reverse`` reverses output word order,
    ``drop`` keeps every other output word.
    """

    tokens: frozenset[str]
    min_count: int = 1
    effect: str = "phrase"
    phrase: str = ""


def _input_words(text: str) -> list[str]:
    return [t.surface.lower() for t in tokenize(text) if not t.is_punct]


class MockTranslator:
    """Deterministic word-by-word dictionary translator with planted faults.

    Input tokens with a dictionary entry are emitted translated, all other
    tokens are skipped, so prompt words outside the dictionary never leak
    into the output. The first matching trigger rule corrupts the output.
    Pure function of the input string.
    """

    def __init__(self, dictionary: Mapping[str, str], triggers: Sequence[TriggerRule] = ()):
        self._dictionary = {k.lower(): v for k, v in dictionary.items()}
        self._triggers = tuple(triggers)

    def respond(self, text: str) -> ThreatResponse:
        words = _input_words(text)
        out = [self._dictionary[w] for w in words if w in self._dictionary]
        present = set(words)
        for rule in self._triggers:
            if len(rule.tokens & present) >= rule.min_count:
                if rule.effect == "phrase":
                    return generation_response(rule.phrase)
                if rule.effect == "reverse":
                    out = list(reversed(out))
                elif rule.effect == "drop":
                    out = out[::2]
                else:
                    raise ValueError(f"unknown trigger effect {rule.effect!r}")
                break
        return generation_response(" ".join(out))


class MockClassifier:
    """Deterministic keyword-vote classifier with softmax confidences.

    Each label accumulates the weights of its keywords found in the input
    (with multiplicity); the argmax label wins, ties broken by label name.
    """

    def __init__(self, keyword_weights: Mapping[str, Mapping[str, float]]):
        if not keyword_weights:
            raise ValueError("classifier needs at least one label")
        self._weights = {
            label: {k.lower(): float(w) for k, w in kws.items()}
            for label, kws in keyword_weights.items()
        }

    def respond(self, text: str) -> ThreatResponse:
        words = _input_words(text)
        labels = sorted(self._weights)
        scores = []
        for label in labels:
            kws = self._weights[label]
            scores.append(math.fsum(kws.get(w, 0.0) for w in words))
        peak = max(scores)
        exps = [math.exp(s - peak) for s in scores]
        total = math.fsum(exps)
        confidences = {lbl: e / total for lbl, e in zip(labels, exps)}
        # labels are sorted, so a tie resolves to the smallest label
        best = next(lbl for lbl, s in zip(labels, scores) if s == peak)
        return classification_response(best, confidences)


class HttpThreat:
    """JSON-over-HTTP client for a live target system.

    POSTs ``{"input": <text>}``; expects ``{"output": <text>}`` for
    generation or ``{"label": ..., "confidences": {...}}`` for
    classification. Transport failures, timeouts and non-2xx statuses are
    retried with exponential backoff before raising.
    """

    def __init__(
        self,
        url: str,
        timeout_s: float = 60.0,
        retries: int = 2,
        auth_env: str | None = None,
        backoff_s: float = 0.5,
    ):
        self.url = url
        self.timeout_s = timeout_s
        self.retries = retries
        self.auth_env = auth_env
        self.backoff_s = backoff_s
        self._session = requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if token:
                headers["Authorization"] = token
        return headers

    def respond(self, text: str) -> ThreatResponse:
        last_error: ThreatError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            start = time.perf_counter()
            try:
                resp = self._session.post(
                    self.url,
                    json={"input": text},
                    headers=self._headers(),
                    timeout=self.timeout_s,
                )
            except requests.Timeout:
                last_error = ThreatTimeoutError(
                    f"timeout after {self.timeout_s}s", input_text=text
                )
                continue
            except requests.RequestException as exc:
                last_error = ThreatTransportError(str(exc), input_text=text)
                continue
            if not 200 <= resp.status_code < 300:
                last_error = ThreatStatusError(
                    f"status {resp.status_code}", input_text=text
                )
                continue
            return self._parse(resp, text, time.perf_counter() - start)
        assert last_error is not None
        raise last_error

    def _parse(self, resp: requests.Response, text: str, latency: float) -> ThreatResponse:
        try:
            body = resp.json()
        except ValueError as exc:
            raise ThreatPayloadError(f"invalid JSON: {exc}", input_text=text)
        if not isinstance(body, dict):
            raise ThreatPayloadError("payload is not an object", input_text=text)
        if "output" in body:
            return generation_response(str(body["output"]), latency_s=latency)
        if "label" in body:
            label = str(body["label"])
            confidences = body.get("confidences") or {label: 1.0}
            try:
                return classification_response(
                    label,
                    {str(k): float(v) for k, v in confidences.items()},
                    latency_s=latency,
                )
            except (TypeError, ValueError, AttributeError) as exc:
                raise ThreatPayloadError(f"bad confidences: {exc}", input_text=text)
        raise ThreatPayloadError("payload has neither 'output' nor 'label'", input_text=text)


def load_mock_spec(path: str | Path) -> Backend:
    """Build a mock backend from a JSON spec file.

    Translator: ``{"kind": "translator", "dictionary": {...},
    "triggers": [{"tokens": [...], "min_count", "effect", "phrase"}]}``.
    Classifier: ``{"kind": "classifier", "labels": {label: {word: weight}}}``.
    """
    with Path(path).open(encoding="utf-8") as fh:
        spec = json.load(fh)
    kind = spec.get("kind")
    if kind == "translator":
        triggers = [
            TriggerRule(
                tokens=frozenset(w.lower() for w in rule["tokens"]),
                min_count=int(rule.get("min_count", 1)),
                effect=rule.get("effect", "phrase"),
                phrase=rule.get("phrase", ""),
            )
            for rule in spec.get("triggers", [])
        ]
        return MockTranslator(spec.get("dictionary", {}), triggers)
    if kind == "classifier":
        return MockClassifier(spec["labels"])
    raise ValueError(f"unknown mock kind {kind!r} in {path}")
