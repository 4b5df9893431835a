import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import all_sentences, shape_enumeration
from pcfg_io import chart, kernels
from pcfg_io.bench import available_backends, use_backend
from pcfg_io.grammar import random_grammar


def test_g0_examples(g0):
    c = chart.io(g0, ["a", "b"])
    assert c.inside_prob(0, 1, 2) == 1.0
    assert c.outside_prob(1, 1, 1) == 1.0 and c.outside_prob(2, 2, 2) == 1.0
    mu = chart.marginals(g0, c)
    assert mu[0, 0, 1] == 1.0 and mu[1, 0, 0] == 1.0
    assert chart.sentence_logprob(g0, ["a", "b"]) == 0.0


def test_g0_underivable_is_zero_not_error(g0):
    c = chart.io(g0, ["b", "a"])
    assert c.root_value == 0.0
    assert chart.sentence_logprob(g0, ["b", "a"]) == -math.inf
    assert not np.any(chart.posteriors(g0, c))


def test_g1_examples(g1):
    c = chart.io(g1, ["x", "x", "x"])
    X, T = g1.symbol_id("X"), g1.symbol_id("T")
    assert c.root_value == pytest.approx(0.075, rel=1e-15)
    assert c.outside_prob(T, 3, 3) == pytest.approx(0.6 * c.inside_prob(X, 1, 2), rel=1e-15)
    assert c.outside_prob(T, 3, 3) == pytest.approx(0.15, rel=1e-15)
    assert chart.posteriors(g1, c)[X, 0, 1] == pytest.approx(1.0, rel=1e-15)
    assert chart.sentence_logprob(g1, ["x", "x", "x"]) == pytest.approx(math.log(0.075), rel=1e-15)


def test_oov_names_token_and_position(g1):
    with pytest.raises(chart.OOVError) as exc:
        chart.io(g1, ["x", "q"])
    assert exc.value.token == "q" and exc.value.position == 2


def test_empty_sentence_rejected(g1):
    with pytest.raises(chart.ChartError):
        chart.io(g1, [])


def test_mask_sets_leaf_inside_to_one(g1):
    c = chart.io(g1, ["x", "[MASK]", "x"], mask=2)
    assert c.inside_prob(g1.symbol_id("T"), 2, 2) == 1.0
    c2 = chart.io(g1, ["x", "zzz", "x"], mask=2)      # masked token is never looked up
    assert np.array_equal(np.asarray(c.alpha), np.asarray(c2.alpha))


def test_outside_from_inside_chart(g1):
    words = ["x", "y", "x"]
    inner = chart.inside(g1, words)
    assert inner.beta is None
    full = chart.outside(g1, inner)
    ref = chart.io(g1, words)
    assert np.array_equal(np.asarray(full.beta), np.asarray(ref.beta))


def test_chart_views_are_read_only(g1):
    c = chart.io(g1, ["x", "x"])
    with pytest.raises(ValueError):
        c.alpha[0, 0, 0] = 1.0


def test_json_dump(g1):
    d = json.loads(chart.io(g1, ["x", "x", "y"]).to_json(g1))
    assert d["L"] == 3 and len(d["alpha"]) == g1.n_nt and d["format_version"] == 1


@pytest.mark.parametrize("seed", range(6))
def test_masked_root_marginalizes_vocab(seed):
    g = random_grammar(3, 2, 3, seed)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 3, size=5)]
    for m in range(1, 6):
        masked = chart.io(g, words, mask=m).root_value
        total = sum(chart.io(g, words[: m - 1] + [w] + words[m:]).root_value for w in g.vocab)
        assert masked == pytest.approx(total, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 14))
def test_consistency_and_base_cases(seed, L):
    g = random_grammar(1 + seed % 4, 1 + seed % 3, 4, seed, pre_child_bias=1.5)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 4, size=L)]
    c = chart.io(g, words)
    z = c.root_value
    mu = chart.marginals(g, c)
    beta = np.asarray(c.beta)
    alpha = np.asarray(c.alpha)
    assert (alpha >= 0).all() and (beta >= 0).all() and (alpha <= 1).all()
    # every word is covered by exactly one pre-terminal span
    for i in range(L):
        assert mu[g.n_in:, i, i].sum() == pytest.approx(z, rel=1e-12)
    assert beta[g.root, 0, L - 1] == 1.0
    assert not np.delete(beta[:, 0, L - 1], g.root).any()
    assert not alpha[g.n_in:][:, ~np.eye(L, dtype=bool)].any()
    assert np.array_equal(mu == 0, (alpha == 0) | (beta == 0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20))
def test_scaled_matches_raw(seed, L):
    g = random_grammar(3, 3, 5, seed)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 5, size=L)]
    raw = chart.io(g, words)
    sc = chart.io(g, words, scale_mode="scaled")
    # the stored root value is scaled; logprob and posteriors undo the factors
    assert sc.logprob == pytest.approx(raw.logprob, rel=1e-10)
    assert np.allclose(chart.posteriors(g, sc), chart.posteriors(g, raw), rtol=1e-10, atol=0)
    assert np.allclose(sc.unscaled_alpha(), np.asarray(raw.alpha), rtol=1e-10, atol=0)
    assert np.allclose(sc.unscaled_beta(), np.asarray(raw.beta), rtol=1e-10, atol=0)


def test_scaled_survives_long_sentences():
    g = random_grammar(4, 4, 200, 1)
    rng = np.random.default_rng(1)
    words = [g.vocab[k] for k in rng.integers(0, 200, size=150)]
    raw = chart.io(g, words)
    sc = chart.io(g, words, scale_mode="scaled")
    assert raw.root_value == 0.0            # underflows in binary64
    assert math.isfinite(sc.logprob) and sc.logprob < -700


def test_small_oracle_against_chart(g1):
    z, mu = shape_enumeration(g1, all_sentences(2, 4))
    for s, ids in enumerate(all_sentences(2, 4)):
        c = chart.io(g1, [g1.vocab[k] for k in ids])
        assert c.root_value == pytest.approx(z[s], rel=1e-14, abs=0)
        assert np.allclose(chart.marginals(g1, c), mu[s], rtol=1e-14, atol=0)


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernels not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    g = random_grammar(5, 4, 6, seed)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 6, size=17)]
    out = {}
    for name in available_backends():
        with use_backend(name):
            out[name] = chart.io(g, words, scale_mode="scaled")
    a, b = out["numpy"], out["cython"]
    assert np.allclose(np.asarray(a.alpha), np.asarray(b.alpha), rtol=1e-12, atol=0)
    assert np.allclose(np.asarray(a.beta), np.asarray(b.beta), rtol=1e-12, atol=0)


def test_backend_selected():
    assert kernels.BACKEND in ("numpy", "cython")
