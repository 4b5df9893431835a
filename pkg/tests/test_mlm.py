import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcfg_io import approx, chart, mlm
from pcfg_io.grammar import random_grammar
from pcfg_io.parallel import thread_pool
from pcfg_io.sampler import sample_corpus


def test_g0_point_mass(g0):
    d = mlm.one_mask_distribution(g0, ["a", "[MASK]"], 2)
    assert d.prob(g0, "b") == 1.0 and d.prob(g0, "a") == 0.0


def test_g1_uniform(g1):
    d = mlm.one_mask_distribution(g1, ["x", "[MASK]", "x"], 2)
    assert d.prob(g1, "x") == pytest.approx(0.5, rel=1e-15)
    assert d.prob(g1, "y") == pytest.approx(0.5, rel=1e-15)


def test_undefined_conditional(g0):
    with pytest.raises(mlm.UndefinedConditional):
        mlm.one_mask_distribution(g0, ["b", "[MASK]"], 2)


def test_g0_perplexity_is_one(g0):
    rep = mlm.one_mask_perplexity(g0, [["a", "b"]] * 4)
    assert rep.ppl == 1.0 and rep.tokens_scored == 8 and rep.skipped == 0
    d = json.loads(mlm.report_json(rep, {"x": 1}))
    assert d["averaging"] == "per-token" and d["config"] == {"x": 1}


def test_skipped_positions_are_counted(g0):
    rep = mlm.one_mask_perplexity(g0, [["a", "b"], ["b", "b"]])
    # "b b": masking position 1 works (a); masking 2 leaves "b ?" underivable
    assert rep.tokens_scored == 2 and rep.skipped == 2


def test_empty_corpus_rejected(g0):
    with pytest.raises(ValueError):
        mlm.one_mask_perplexity(g0, [])


@pytest.mark.parametrize("seed", range(5))
def test_matches_substitution(seed):
    g = random_grammar(3, 3, 4, seed)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 4, size=6)]
    for m in range(1, 7):
        d = mlm.one_mask_distribution(g, words, m)
        p = np.array([chart.io(g, words[: m - 1] + [w] + words[m:]).root_value for w in g.vocab])
        assert np.allclose(d.probs, p / p.sum(), rtol=1e-12, atol=0)


def test_full_restriction_is_bitwise_identical():
    g = random_grammar(4, 3, 5, 3)
    words = ["w0", "w3", "w1", "w1", "w4"]
    r = approx.full_restriction(g)
    for m in range(1, 6):
        a = mlm.one_mask_distribution(g, words, m)
        b = mlm.one_mask_distribution(g, words, m, restriction=r)
        assert np.array_equal(a.probs, b.probs)


def test_threaded_perplexity_matches():
    g = random_grammar(3, 3, 5, 8, pre_child_bias=2.0)
    corpus, _ = sample_corpus(g, 60, 1, max_len=10)
    a = mlm.one_mask_perplexity(g, corpus)
    with thread_pool(4) as pool:
        b = mlm.one_mask_perplexity(g, corpus, pool=pool)
    assert a.tokens_scored == b.tokens_scored
    assert b.ppl == pytest.approx(a.ppl, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_normalized_and_argmax_sane(seed, L):
    g = random_grammar(2, 3, 4, seed)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 4, size=L)]
    m = 1 + seed % L
    d = mlm.one_mask_distribution(g, words, m)
    assert abs(d.probs.sum() - 1.0) <= 1e-12 and (d.probs >= 0).all()
    best = g.vocab[int(np.argmax(d.probs))]
    swapped = words[: m - 1] + [best] + words[m:]
    assert chart.sentence_logprob(g, swapped) >= chart.sentence_logprob(g, words) - 1e-12
    assert math.isfinite(chart.sentence_logprob(g, swapped))
