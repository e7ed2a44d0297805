"""Brute-force reference scorer, written independently of the package.

Counts clipped n-gram matches by explicit list scanning and combines the
precisions as a product of powers. Used only to cross-check the shipped
implementation; must not share code with it.
"""

import math


def _grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def oracle_precision(hyp_tokens, ref_tokens, n):
    hyp_grams = _grams(list(hyp_tokens), n)
    if not hyp_grams:
        return 0.0
    ref_grams = _grams(list(ref_tokens), n)
    clipped = 0
    for gram in set(hyp_grams):
        clipped += min(hyp_grams.count(gram), ref_grams.count(gram))
    return clipped / len(hyp_grams)


def oracle_bp(hyp_len, ref_len):
    if hyp_len == 0:
        return 0.0
    if hyp_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def oracle_bleu(hyp_tokens, ref_tokens, max_n=4, floor=None):
    """Direct evaluation; floor=None means strict zero handling."""
    weights = [1.0 / max_n] * max_n
    bp = oracle_bp(len(hyp_tokens), len(ref_tokens))
    if bp == 0.0:
        return 0.0
    product = 1.0
    for n, w in zip(range(1, max_n + 1), weights):
        p = oracle_precision(hyp_tokens, ref_tokens, n)
        if p == 0.0:
            if floor is None:
                return 0.0
            p = floor
        product *= p**w
    return bp * product
