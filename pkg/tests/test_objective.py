"""Overlap scoring and the loss/success predicates."""

import math
import random

import pytest

from beamfuzz.objective import (
    BleuConfig,
    CriterionKind,
    Smoothing,
    SuccessCriterion,
    bleu,
    brevity_penalty,
    is_success,
    loss,
    ngram_precision,
)
from beamfuzz.threat import classification_response, generation_response
from beamfuzz.tokens import make_fuzz_input

from bleu_oracle import oracle_bleu

STRICT = BleuConfig(smoothing=Smoothing.STRICT)
FLOOR = BleuConfig()


class TestNgramPrecision:
    def test_clipping_caps_repeats(self):
        assert ngram_precision(["the", "the", "the"], ["the", "cat"], 1) == pytest.approx(1 / 3)

    def test_perfect_overlap(self):
        tokens = ["a", "b", "c", "d"]
        for n in range(1, 5):
            assert ngram_precision(tokens, tokens, n) == 1.0

    def test_no_overlap(self):
        assert ngram_precision(["a", "b"], ["c", "d"], 1) == 0.0

    def test_hypothesis_shorter_than_n(self):
        assert ngram_precision(["a", "b"], ["a", "b", "c"], 3) == 0.0

    def test_rejects_bad_n(self):
        with pytest.raises(ValueError):
            ngram_precision(["a"], ["a"], 0)


class TestBrevityPenalty:
    def test_longer_hypothesis(self):
        assert brevity_penalty(10, 5) == 1.0

    def test_equal_lengths(self):
        assert brevity_penalty(7, 7) == 1.0

    def test_short_hypothesis(self):
        assert brevity_penalty(5, 10) == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_empty_hypothesis(self):
        assert brevity_penalty(0, 4) == 0.0

    def test_rejects_empty_reference(self):
        with pytest.raises(ValueError):
            brevity_penalty(3, 0)


class TestBleu:
    def test_identical_strings(self):
        assert bleu("the cat sat on the mat", "the cat sat on the mat", STRICT) == 1.0
        assert bleu("the cat sat on the mat", "the cat sat on the mat", FLOOR) == 1.0

    def test_disjoint_strings_strict_zero(self):
        assert bleu("aa bb cc", "xx yy zz", STRICT) == 0.0

    def test_disjoint_strings_floor_near_zero(self):
        assert bleu("aa bb cc", "xx yy zz", FLOOR) < 1e-6

    def test_short_hypothesis_strict(self):
        # fewer tokens than max_n leaves the top-order precision at zero
        assert bleu("the cat sat", "the cat sat on the mat", STRICT) == 0.0

    def test_short_hypothesis_matches_oracle_under_floor(self):
        got = bleu("the cat sat", "the cat sat on the mat", FLOOR)
        want = oracle_bleu(
            ["the", "cat", "sat"], ["the", "cat", "sat", "on", "the", "mat"], floor=1e-9
        )
        assert got == pytest.approx(want, abs=1e-9)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            bleu("words", "", FLOOR)
        with pytest.raises(ValueError):
            bleu("words", "   ", FLOOR)

    def test_case_sensitive(self):
        assert bleu("The cat", "the cat", STRICT) < 1.0

    @pytest.mark.parametrize("length", [4, 5, 9])
    def test_self_score_is_one_at_adequate_length(self, length):
        # below max_n tokens the top-order precision is zero by definition,
        # so self-identity only pins the score at 1 from max_n up
        text = " ".join(f"w{i}" for i in range(length))
        assert bleu(text, text, STRICT) == 1.0
        assert bleu(text, text, FLOOR) == 1.0

    @pytest.mark.parametrize("seed", range(25))
    def test_bounds_and_oracle_agreement(self, seed):
        rng = random.Random(seed)
        vocab = ["a", "b", "c", "d", "e"]
        hyp = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
        ref = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
        for cfg, floor in ((STRICT, None), (FLOOR, 1e-9)):
            got = bleu(" ".join(hyp), " ".join(ref), cfg)
            assert 0.0 <= got <= 1.0
            assert got == pytest.approx(oracle_bleu(hyp, ref, floor=floor), abs=1e-9)

    @pytest.mark.parametrize("seed", range(25))
    def test_floor_preserves_ranking_of_positive_strict_scores(self, seed):
        rng = random.Random(seed)
        vocab = ["a", "b", "c"]
        ref = [rng.choice(vocab) for _ in range(8)]
        hyps = [[rng.choice(vocab) for _ in range(rng.randint(4, 10))] for _ in range(2)]
        strict = [bleu(" ".join(h), " ".join(ref), STRICT) for h in hyps]
        if strict[0] > 0 and strict[1] > 0 and strict[0] != strict[1]:
            floored = [bleu(" ".join(h), " ".join(ref), FLOOR) for h in hyps]
            assert (strict[0] > strict[1]) == (floored[0] > floored[1])


class TestBleuConfig:
    def test_default_weights_uniform(self):
        cfg = BleuConfig(max_n=4)
        assert cfg.weights == (0.25, 0.25, 0.25, 0.25)

    def test_rejects_weight_count_mismatch(self):
        with pytest.raises(ValueError):
            BleuConfig(max_n=2, weights=(1.0,))

    def test_rejects_unnormalized_weights(self):
        with pytest.raises(ValueError):
            BleuConfig(max_n=2, weights=(0.9, 0.2))

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            BleuConfig(max_n=0)


class TestLoss:
    def test_generation_complement(self, english_stops):
        inp = make_fuzz_input("", "der Vertrag", "the contract stays valid", "s1")
        out = generation_response("the contract stays valid")
        criterion = SuccessCriterion(CriterionKind.BLEU_BELOW, 0.2)
        got = loss(out, inp, criterion, FLOOR)
        assert got.value == 0.0
        assert got.raw_bleu == 1.0

    def test_generation_loss_antitone_in_score(self):
        inp = make_fuzz_input("", "x", "the cat sat on the mat", "s1")
        criterion = SuccessCriterion(CriterionKind.BLEU_BELOW, 0.2)
        close = loss(generation_response("the cat sat on the mat"), inp, criterion, FLOOR)
        far = loss(generation_response("dogs bark loudly outside"), inp, criterion, FLOOR)
        assert far.raw_bleu < close.raw_bleu
        assert far.value > close.value
        assert close.value == pytest.approx(1.0 - close.raw_bleu, abs=0)

    def test_classification_confidence_drain(self):
        inp = make_fuzz_input("", "x", "positive", "s1")
        criterion = SuccessCriterion(CriterionKind.LABEL_FLIPPED, 0.2)
        out = classification_response("negative", {"positive": 0.3, "negative": 0.7})
        assert loss(out, inp, criterion).value == pytest.approx(0.7)

    def test_kind_mismatch_rejected(self):
        inp = make_fuzz_input("", "x", "ref words", "s1")
        gen_criterion = SuccessCriterion(CriterionKind.BLEU_BELOW, 0.2)
        cls_criterion = SuccessCriterion(CriterionKind.LABEL_FLIPPED, 0.2)
        with pytest.raises(ValueError):
            loss(classification_response("a", {"a": 1.0}), inp, gen_criterion)
        with pytest.raises(ValueError):
            loss(generation_response("text"), inp, cls_criterion)


class TestIsSuccess:
    def test_exact_output_is_not_a_failure(self):
        inp = make_fuzz_input("", "x", "the very same text again", "s1")
        criterion = SuccessCriterion(CriterionKind.BLEU_BELOW, 0.2)
        out = generation_response("the very same text again")
        assert not is_success(out, inp, criterion, FLOOR)

    def test_disjoint_output_is_a_failure(self):
        inp = make_fuzz_input("", "x", "the very same text again", "s1")
        criterion = SuccessCriterion(CriterionKind.BLEU_BELOW, 0.2)
        out = generation_response("words without overlap whatsoever here")
        assert is_success(out, inp, criterion, FLOOR)

    def test_label_must_flip(self):
        inp = make_fuzz_input("", "x", "positive", "s1")
        criterion = SuccessCriterion(CriterionKind.LABEL_FLIPPED, 0.2)
        same = classification_response("positive", {"positive": 0.6, "negative": 0.4})
        flipped = classification_response("negative", {"positive": 0.4, "negative": 0.6})
        assert not is_success(same, inp, criterion)
        assert is_success(flipped, inp, criterion)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            SuccessCriterion(CriterionKind.BLEU_BELOW, 0.0)
        with pytest.raises(ValueError):
            SuccessCriterion(CriterionKind.BLEU_BELOW, 1.0)
