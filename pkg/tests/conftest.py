"""Shared helpers: scripted backends and canned inputs."""

import pytest

from beamfuzz.threat import ThreatTransportError, generation_response
from beamfuzz.tokens import StopwordSet, bundled_stopwords, make_fuzz_input


class ScriptedBackend:
    """Table-driven generation backend; unknown inputs get the default."""

    def __init__(self, table=None, default="", fail_on=()):
        self.table = dict(table or {})
        self.default = default
        self.fail_on = set(fail_on)
        self.calls = 0

    def respond(self, text):
        self.calls += 1
        if text in self.fail_on:
            raise ThreatTransportError("scripted failure", input_text=text)
        return generation_response(self.table.get(text, self.default))


class CountingBackend:
    """Pass-through wrapper that records every true model invocation."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.seen = []

    def respond(self, text):
        self.calls += 1
        self.seen.append(text)
        return self.inner.respond(text)


@pytest.fixture(scope="session")
def english_stops():
    return StopwordSet.from_file(bundled_stopwords("english"))


@pytest.fixture
def simple_input(english_stops):
    return make_fuzz_input(
        "Translate this:", "the contract ends now", "pact stops today", "seed-1", english_stops
    )
