"""End-to-end behavior of the fuzzing loop on planted fixtures."""

import math
import random

import pytest

from beamfuzz.importance import rank
from beamfuzz.objective import (
    BleuConfig,
    CriterionKind,
    SuccessCriterion,
    is_success,
    loss,
)
from beamfuzz.perturb import candidate_set, load_embeddings, load_lexicon, substitute
from beamfuzz.search import SearchParams, fuzz
from beamfuzz.threat import CachingThreat, MockTranslator, TriggerRule, load_mock_spec
from beamfuzz.tokens import make_fuzz_input, perturbable_indices, render

from conftest import ScriptedBackend
from fixture_suites import build_suite

CRITERION = SuccessCriterion(CriterionKind.BLEU_BELOW, 0.2)
CFG = BleuConfig(max_n=2)
PARAMS = SearchParams()


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def contract_fixture(tmp_path, english_stops):
    """Single perturbable position with a unique planted fault."""
    lexicon = load_lexicon(
        write(
            tmp_path / "lex.tsv",
            "contract\tsyn\tagreement\ncontract\tsyn\tpaper\n",
        )
    )
    table = load_embeddings(
        write(
            tmp_path / "vec.txt",
            "contract 1 0\nagreement 0.9 0.1\npaper 0.5 0.5\n",
        )
    )
    backend = MockTranslator(
        {"the": "le", "under": "sous", "contract": "pact"},
        [TriggerRule(tokens=frozenset(["agreement"]), effect="phrase", phrase="broken output text")],
    )
    inp = make_fuzz_input("", "the contract under the", "le pact sous le", "s1", english_stops)
    return inp, lexicon, table, backend


def run_fuzz(inp, lexicon, table, backend, params=PARAMS, seed=42, k=10):
    client = CachingThreat(backend)
    return fuzz(
        inp, lexicon, table, client, CRITERION, CFG, params,
        rng=random.Random(seed), k=k,
    ), client


class TestPlantedSingleFault:
    def test_unique_substitution_found(self, contract_fixture):
        inp, lexicon, table, backend = contract_fixture
        assert perturbable_indices(inp) == [1]
        report, _ = run_fuzz(inp, lexicon, table, backend)
        assert report.success
        assert report.substitutions == ((1, "contract", "agreement"),)
        assert report.final_variant == "the agreement under the"

    def test_every_mode_finds_single_position_fault(self, contract_fixture):
        inp, lexicon, table, backend = contract_fixture
        for mode in (
            SearchParams(),
            SearchParams(disable_sa=True),
            SearchParams(disable_entropy_pruning=True),
            SearchParams(disable_sa=True, disable_entropy_pruning=True),
            SearchParams(greedy=True),
        ):
            report, _ = run_fuzz(inp, lexicon, table, backend, params=mode)
            assert report.success, mode

    def test_success_variant_reconfirms_against_threat(self, contract_fixture):
        inp, lexicon, table, backend = contract_fixture
        report, _ = run_fuzz(inp, lexicon, table, backend)
        response = backend.respond(report.final_variant)
        assert is_success(response, inp, CRITERION, CFG)


class TestTraceInvariants:
    @pytest.fixture
    def suite(self, tmp_path):
        return build_suite(tmp_path / "suite", easy=2, pair=2, wide=2)

    def load(self, suite, english_stops):
        import json

        lexicon = load_lexicon(suite["lexicon"])
        table = load_embeddings(suite["embeddings"])
        backend = load_mock_spec(suite["mock"])
        seeds = [
            json.loads(line)
            for line in suite["dataset"].read_text(encoding="utf-8").splitlines()
        ]
        inputs = [
            make_fuzz_input(s["prompt"], s["example"], s["reference"], s["id"], english_stops)
            for s in seeds
        ]
        return lexicon, table, backend, inputs

    def test_temperature_trace_matches_schedule_exactly(self, suite, english_stops):
        lexicon, table, backend, inputs = self.load(suite, english_stops)
        for inp in inputs:
            report, _ = run_fuzz(inp, lexicon, table, backend)
            for entry in report.loss_trace:
                want = 1.0 / (1.0 + 0.3 * math.log(1.0 + entry.iteration))
                assert abs(entry.temperature - want) <= 1e-12

    def test_width_bounds_and_monotone_best(self, suite, english_stops):
        lexicon, table, backend, inputs = self.load(suite, english_stops)
        for inp in inputs:
            report, _ = run_fuzz(inp, lexicon, table, backend)
            previous = -1.0
            for entry in report.loss_trace:
                assert PARAMS.b_min <= entry.width <= PARAMS.b_max or entry.width == PARAMS.b0
                assert entry.best_loss >= previous
                previous = entry.best_loss

    def test_determinism_same_rng(self, suite, english_stops):
        lexicon, table, backend, inputs = self.load(suite, english_stops)
        for inp in inputs:
            a, _ = run_fuzz(inp, lexicon, table, backend, seed=7)
            b, _ = run_fuzz(inp, lexicon, table, backend, seed=7)
            da, db = a.to_dict(), b.to_dict()
            for d in (da, db):
                d.pop("wall_time_s")
                d["queries"].pop("wall_time_s")
            assert da == db

    def test_entropy_disabled_freezes_width(self, suite, english_stops):
        lexicon, table, backend, inputs = self.load(suite, english_stops)
        params = SearchParams(disable_sa=True, disable_entropy_pruning=True)
        for inp in inputs:
            report, _ = run_fuzz(inp, lexicon, table, backend, params=params)
            assert all(entry.width == params.b0 for entry in report.loss_trace)


class TestDegenerateInputs:
    def test_no_perturbable_positions(self, english_stops):
        inp = make_fuzz_input("", "the and to", "ref words", "s", english_stops)
        backend = ScriptedBackend(default="ref words")
        report, client = run_fuzz(
            inp,
            load_lexicon_from_rows([]),
            table_from_rows(["x 1 0"]),
            backend,
        )
        assert not report.success
        assert report.loss_trace == ()
        assert report.substitutions == ()
        assert client.ledger_snapshot().logical_queries == 0

    def test_empty_candidate_sets_everywhere(self, english_stops):
        inp = make_fuzz_input("", "aa bb cc", "ta tb tc", "s", english_stops)
        backend = ScriptedBackend(default="ta tb tc")
        report, client = run_fuzz(
            inp, load_lexicon_from_rows([]), table_from_rows(["x 1 0"]), backend
        )
        assert not report.success
        assert len(report.loss_trace) == 3  # one trivial iteration per position
        assert all(e.entropy is None for e in report.loss_trace)
        # rank consumed P+1; the loop itself queried nothing
        assert client.ledger_snapshot().logical_queries == 4

    def test_flat_landscape_keeps_zero_gain(self, english_stops, tmp_path):
        # every candidate translates identically: nothing to find
        lexicon = load_lexicon(
            write(tmp_path / "l.tsv", "aa\tsyn\tdd\nbb\tsyn\tee\n")
        )
        table = load_embeddings(
            write(tmp_path / "v.txt", "aa 1 0\nbb 0 1\ndd 1 0.1\nee 0.1 1\n")
        )
        backend = MockTranslator(
            {"aa": "ta", "bb": "tb", "cc": "tc", "dd": "ta", "ee": "tb"}
        )
        inp = make_fuzz_input("", "aa bb cc", "ta tb tc", "s", english_stops)
        report, _ = run_fuzz(inp, lexicon, table, backend)
        assert not report.success
        assert report.final_loss == pytest.approx(0.0)

    def test_fallback_keeps_beam_alive_when_all_rejected(self, english_stops, tmp_path):
        lexicon = load_lexicon(write(tmp_path / "l.tsv", "aa\tsyn\tdd\n"))
        table = load_embeddings(write(tmp_path / "v.txt", "aa 1 0\ndd 1 0.1\n"))
        backend = MockTranslator({"aa": "ta", "bb": "tb", "cc": "tc", "dd": "ta"})
        inp = make_fuzz_input("", "aa bb cc", "ta tb tc", "s", english_stops)
        params = SearchParams(disable_sa=True)  # zero-gain move gets rejected
        report, _ = run_fuzz(inp, lexicon, table, backend, params=params)
        assert not report.success
        # the one candidate-bearing iteration kept a beam via the fallback
        assert sum(e.entropy is not None for e in report.loss_trace) == 1

    def test_seed_that_already_fails(self, english_stops):
        inp = make_fuzz_input("", "aa bb", "totally different reference", "s", english_stops)
        backend = ScriptedBackend(default="unrelated output words")
        report, _ = run_fuzz(
            inp, load_lexicon_from_rows([]), table_from_rows(["x 1 0"]), backend
        )
        assert report.success
        assert report.substitutions == ()

    def test_threat_failure_marks_report_aborted(self, contract_fixture):
        inp, lexicon, table, _ = contract_fixture
        failing = ScriptedBackend(
            default="le pact sous le",
            fail_on={"the agreement under the"},
        )
        report, _ = run_fuzz(inp, lexicon, table, failing)
        assert report.aborted
        assert not report.success


class TestGreedyDegeneration:
    def reference_greedy(self, inp, lexicon, table, backend, k=10):
        """Independently written single-path hill-climb."""
        client = CachingThreat(backend)
        ranking = rank(inp, perturbable_indices(inp), client, CRITERION, CFG)
        tokens, current = inp.tokens, ranking.baseline_loss
        for pos in ranking.order:
            cands = candidate_set(inp.tokens[pos].surface, lexicon, table, k)
            best_tokens, best_loss = None, current
            for word, _ in cands.candidates:
                trial = substitute(tokens, pos, word)
                response = client.query(render(trial))
                if is_success(response, inp, CRITERION, CFG):
                    return render(trial), True
                value = loss(response, inp, CRITERION, CFG).value
                if value > best_loss:
                    best_tokens, best_loss = trial, value
            if best_tokens is not None:
                tokens, current = best_tokens, best_loss
        final = client.query(render(tokens))
        return render(tokens), is_success(final, inp, CRITERION, CFG)

    def test_greedy_mode_matches_reference(self, tmp_path, english_stops):
        import json

        suite = build_suite(tmp_path / "suite", easy=3, pair=3)
        lexicon = load_lexicon(suite["lexicon"])
        table = load_embeddings(suite["embeddings"])
        backend = load_mock_spec(suite["mock"])
        for line in suite["dataset"].read_text(encoding="utf-8").splitlines():
            seed = json.loads(line)
            inp = make_fuzz_input(
                seed["prompt"], seed["example"], seed["reference"], seed["id"], english_stops
            )
            report, _ = run_fuzz(
                inp, lexicon, table, backend, params=SearchParams(greedy=True)
            )
            want_text, want_success = self.reference_greedy(inp, lexicon, table, backend)
            assert report.success == want_success
            assert report.final_variant == want_text
            assert all(e.width == 1 for e in report.loss_trace)

    def test_full_finds_at_least_as_many_as_greedy(self, tmp_path, english_stops):
        import json

        suite = build_suite(tmp_path / "suite", easy=5, pair=8)
        lexicon = load_lexicon(suite["lexicon"])
        table = load_embeddings(suite["embeddings"])
        backend = load_mock_spec(suite["mock"])
        full = greedy = 0
        for line in suite["dataset"].read_text(encoding="utf-8").splitlines():
            seed = json.loads(line)
            inp = make_fuzz_input(
                seed["prompt"], seed["example"], seed["reference"], seed["id"], english_stops
            )
            rng_seed = int(seed["id"][1:])
            full += run_fuzz(inp, lexicon, table, backend, seed=rng_seed)[0].success
            greedy += run_fuzz(
                inp, lexicon, table, backend,
                params=SearchParams(greedy=True), seed=rng_seed,
            )[0].success
        assert full >= greedy


def load_lexicon_from_rows(rows):
    import tempfile
    from pathlib import Path

    with tempfile.NamedTemporaryFile(
        "w", suffix=".tsv", delete=False, encoding="utf-8"
    ) as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")
        name = fh.name
    return load_lexicon(Path(name))


def table_from_rows(rows):
    import tempfile
    from pathlib import Path

    with tempfile.NamedTemporaryFile(
        "w", suffix=".txt", delete=False, encoding="utf-8"
    ) as fh:
        fh.write("\n".join(rows) + "\n")
        name = fh.name
    return load_embeddings(Path(name))
