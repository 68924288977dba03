import itertools
import math

import numpy as np
import pytest
import torch

from idda.corpus import Corpus, collate
from idda.decoding import (
    DecodeConfig, Hypothesis, beam_search, beam_search_batch, bleu, eval_model, greedy_decode, translate,
)
from idda.model import ModelConfig, forward, init_model
from idda.tokenization import BOS_ID, EOS_ID

nltk_bleu = pytest.importorskip("nltk.translate.bleu_score")


def sharp_model(vocab, seed, scale=3.0, max_positions=8):
    """Random model with enlarged output weights so distributions are peaked but varied."""
    p = init_model(ModelConfig(vocab, 8, 8, 2, 1, max_positions), seed)
    p.tensors["out.w"] *= scale
    p.tensors["out.b"] += torch.from_numpy(np.random.default_rng(seed).normal(0, 1.0, vocab))
    return p


def sequence_log_prob(params, source, tokens):
    """Teacher-forced log-probability of ``tokens`` given ``source``."""
    b = collate(Corpus.from_pairs([(list(source), [BOS_ID, *tokens])], "x").pairs)
    probs = forward(params, b)[0]
    return sum(math.log(float(probs[t, tok])) for t, tok in enumerate(tokens))


def exhaustive_best(params, source, max_len):
    V = params.config.vocab_size
    generable = [t for t in range(V) if t not in (0, BOS_ID)]
    complete = []
    for length in range(1, max_len + 1):
        for body in itertools.product([t for t in generable if t != EOS_ID], repeat=length - 1):
            complete.append(body + (EOS_ID,))
            if length == max_len:
                for last in generable:
                    if last != EOS_ID:
                        complete.append(body + (last,))
    scored = [Hypothesis(seq, sequence_log_prob(params, source, seq)) for seq in complete]
    return min(scored, key=lambda h: (-h.score, h.tokens))


@pytest.mark.parametrize("seed", range(4))
def test_beam_one_is_greedy(seed):
    p = sharp_model(9, seed)
    for source in ([1, 4, 5, 2], [1, 7, 2], [1, 3, 3, 8, 6, 2]):
        g = greedy_decode(p, source, 6)
        b = beam_search(p, source, beam_size=1, max_len=6)
        assert b.tokens == g.tokens
        assert b.log_prob == pytest.approx(g.log_prob, abs=1e-12)


@pytest.mark.parametrize("vocab,max_len,seed", [(4, 4, 0), (4, 4, 1), (4, 3, 2), (4, 4, 3), (5, 3, 4), (6, 3, 5)])
def test_beam_matches_exhaustive_enumeration(vocab, max_len, seed):
    p = sharp_model(vocab, seed, scale=1.5)
    width = (vocab - 2) ** max_len
    for source in ([1, 3, 2], [1, 3, 3, 3, 2]):
        got = beam_search(p, source, beam_size=width, max_len=max_len)
        want = exhaustive_best(p, source, max_len)
        assert got.tokens == want.tokens
        assert got.log_prob == pytest.approx(want.log_prob, abs=1e-9)


def test_length_cap_respected_and_batched_equals_single():
    p = sharp_model(9, 7)
    sources = [[1, 4, 5, 2], [1, 7, 2], [1, 3, 3, 8, 6, 2]]
    caps = [3, 5, 2]
    batched = beam_search_batch(p, sources, 3, caps)
    for src, cap, hyp in zip(sources, caps, batched):
        assert 1 <= len(hyp.tokens) <= cap
        single = beam_search(p, src, 3, cap)
        assert single.tokens == hyp.tokens
        assert single.log_prob == pytest.approx(hyp.log_prob, abs=1e-12)


def test_beam_log_prob_matches_teacher_forced_score():
    p = sharp_model(9, 3)
    hyp = beam_search(p, [1, 4, 2], 4, 6)
    assert hyp.log_prob == pytest.approx(sequence_log_prob(p, [1, 4, 2], hyp.tokens), abs=1e-9)


def test_decode_config_cap():
    assert DecodeConfig(max_len_a=1.5, max_len_b=5).max_len(10, 64) == 20
    assert DecodeConfig().max_len(100, 64) == 64


def test_invalid_beam_size():
    with pytest.raises(ValueError):
        beam_search(sharp_model(5, 0), [1, 2], beam_size=0)


# --------------------------------------------------------------------------
# BLEU


def test_bleu_identity_is_100():
    sents = [["the", "cat", "sat", "on", "the", "mat"], ["a", "b", "c", "d"]]
    assert bleu(sents, sents).score == pytest.approx(100.0)


def test_bleu_zero_when_no_4gram_matches():
    assert bleu([["a", "b", "c", "x", "d"]], [["a", "b", "c", "y", "d"]]).score == 0.0


def test_bleu_empty_hypothesis():
    out = bleu([[]], [["a", "b"]])
    assert out.score == 0.0 and out.hyp_len == 0


def test_bleu_length_mismatch_rejected():
    with pytest.raises(ValueError):
        bleu([["a"]], [])


HAND_CASES = [
    # (hyps, refs, expected score) worked out by hand
    ([["a", "b", "c", "d"]], [["a", "b", "c", "d"]], 100.0),
    # short hypothesis: all precisions 1, BP = exp(1 - 8/4)
    ([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e", "f", "g", "h"]], 100.0 * math.exp(-1.0)),
    # p = (4/5, 3/4, 2/3, 1/2), c = r = 5
    ([["a", "b", "c", "d", "z"]], [["a", "b", "c", "d", "e"]], 100.0 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25),
    # clipping: only three "a" and two "a a" in the reference; no 4-gram match
    ([["a", "a", "a", "a", "a", "a"]], [["a", "a", "a", "b", "c", "d"]],
     100.0 * (3 / 6 * 2 / 5 * 1 / 4 * 0 / 3) ** 0.25),
    # corpus pooling across two sentences, c = 9, r = 10
    ([["a", "b", "c", "d", "e"], ["p", "q", "r", "s"]],
     [["a", "b", "c", "d", "e"], ["p", "q", "r", "s", "t"]],
     100.0 * math.exp(1 - 10 / 9) * (9 / 9 * 7 / 7 * 5 / 5 * 3 / 3) ** 0.25),
]


@pytest.mark.filterwarnings("ignore::UserWarning")
@pytest.mark.parametrize("hyps,refs,expected", HAND_CASES)
def test_bleu_hand_cases_and_oracle(hyps, refs, expected):
    got = bleu(hyps, refs).score
    assert got == pytest.approx(expected, abs=1e-9)
    oracle = 100.0 * nltk_bleu.corpus_bleu([[r] for r in refs], hyps)
    assert got == pytest.approx(oracle, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_bleu_matches_oracle_on_random_corpora(seed):
    rng = np.random.default_rng(seed)
    refs = [list(rng.integers(0, 6, size=rng.integers(4, 12))) for _ in range(20)]
    hyps = []
    for r in refs:
        h = [t if rng.random() < 0.8 else int(rng.integers(0, 6)) for t in r]
        # nltk counts max(1, n-gram count) in each denominator, so stay at >= 4 tokens
        hyps.append(h[: max(4, len(h) - int(rng.integers(0, 3)))])
    oracle = 100.0 * nltk_bleu.corpus_bleu([[r] for r in refs], hyps)
    assert bleu(hyps, refs).score == pytest.approx(oracle, abs=1e-9)


# --------------------------------------------------------------------------
# evaluation


def dev_corpus():
    pairs = [([1, 4, 5, 2], [1, 5, 4, 2]), ([1, 6, 2], [1, 6, 2]), ([1, 7, 4, 2], [1, 4, 7, 2])]
    return Corpus.from_pairs(pairs, "dev")


def test_eval_model_deterministic_and_bounded():
    p = sharp_model(9, 1)
    cfg = DecodeConfig(beam_size=2)
    a, b = eval_model(dev_corpus(), p, cfg), eval_model(dev_corpus(), p, cfg)
    assert a == b and 0.0 <= a <= 100.0


def test_eval_model_is_bleu_of_translations():
    p = sharp_model(9, 2)
    cfg = DecodeConfig(beam_size=3)
    dev = dev_corpus()
    hyps = translate(p, dev.sources, cfg)
    strip = lambda ids: [i for i in ids if i not in (0, 1, 2)]  # noqa: E731
    want = bleu([strip(h.tokens) for h in hyps], [strip(t) for t in dev.targets]).score
    assert eval_model(dev, p, cfg) == want


def test_eval_model_empty_dev():
    with pytest.raises(ValueError):
        eval_model(Corpus.from_pairs([], "dev"), sharp_model(5, 0))
