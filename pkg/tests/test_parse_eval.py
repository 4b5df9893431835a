import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import best_span_tree
from pcfg_io import chart, parse_eval
from pcfg_io.grammar import random_grammar
from pcfg_io.parse_eval import (KEEP_ALL, EvalError, EvalPolicy, SpanSet, best_tree,
                                extract_eval_spans, f1_corpus, f1_sentence, labelled_recall,
                                right_branching)
from pcfg_io.sampler import sample_corpus
from pcfg_io.trees import ParseTree


def S(L, *spans):
    return SpanSet(L, frozenset(spans))


def test_g0_tree(g0):
    t = labelled_recall(g0, ["a", "b"])
    assert t.span_set() == {(1, 2), (1, 1), (2, 2)}
    assert t.labeled() == {(0, 1, 2), (1, 1, 1), (2, 2, 2)}


def test_g1_tree_contains_x_span(g1):
    t = labelled_recall(g1, ["x", "x", "y"])
    assert (1, 2) in t.span_set()
    assert (g1.symbol_id("X"), 1, 2) in t.labeled()


def test_underivable_falls_back_with_warning(g0):
    with pytest.warns(RuntimeWarning):
        t = labelled_recall(g0, ["b", "a"])
    assert t.warning
    assert t.span_set() == right_branching(2).spans
    t.check()


def test_right_branching():
    assert right_branching(3).spans == {(1, 3), (2, 3), (1, 1), (2, 2), (3, 3)}
    assert right_branching(1).spans == {(1, 1)}
    assert right_branching(2).spans == {(1, 2), (1, 1), (2, 2)}
    with pytest.raises(EvalError):
        right_branching(0)


def test_extract_policies(g0):
    t = labelled_recall(g0, ["a", "b"])
    assert extract_eval_spans(t).spans == frozenset()
    assert len(extract_eval_spans(t, KEEP_ALL)) == 3
    balanced = S(4, (1, 4), (1, 2), (3, 4), (1, 1), (2, 2), (3, 3), (4, 4))
    only_sing = EvalPolicy(drop_singletons=True, drop_whole=False)
    assert extract_eval_spans(balanced, only_sing).spans == {(1, 4), (1, 2), (3, 4)}


def test_empty_vs_empty_is_perfect(g0):
    t = labelled_recall(g0, ["a", "b"])
    rep = parse_eval.evaluate([t], [t], "sentence")
    assert rep.f1 == 1.0
    assert parse_eval.evaluate([t], [t], "sentence", EvalPolicy(empty_f1=0.0)).f1 == 0.0


def test_half_f1_example():
    gold = [S(3, (1, 3), (2, 3))]
    pred = [S(3, (1, 3), (1, 2))]
    assert f1_sentence(gold, pred, KEEP_ALL).f1 == 0.5
    rep = f1_corpus(gold, pred, KEEP_ALL)
    assert (rep.tp, rep.fp, rep.fn, rep.f1) == (1, 1, 1, 0.5)


def test_sentence_vs_corpus_averaging():
    gold = [S(4, (1, 2)), S(4, (1, 2), (3, 4), (2, 4))]
    pred = [S(4, (1, 2)), S(4, (1, 3))]
    assert f1_sentence(gold, pred).f1 == pytest.approx(0.5)
    assert f1_corpus(gold, pred).f1 == pytest.approx(2 * 0.5 * 0.25 / 0.75)


def test_length_mismatch():
    with pytest.raises(EvalError):
        f1_sentence([S(3)], [])
    with pytest.raises(EvalError):
        f1_corpus([S(3)], [S(4)])


def test_report_json():
    d = json.loads(f1_corpus([S(3, (1, 2))], [S(3, (1, 2))]).to_json())
    for key in ("precision", "recall", "f1", "tp", "fp", "fn", "mode", "policy", "format_version"):
        assert key in d


def test_gold_self_test(g1):
    _, trees = sample_corpus(g1, 200, 4)
    for mode in ("sentence", "corpus"):
        assert parse_eval.evaluate(trees, trees, mode).f1 == 1.0


def test_tie_breaks_to_smallest_split():
    score = np.zeros((3, 3))
    _, spans = best_tree(score)
    assert (1, 1) in spans and (2, 3) in spans    # k = 1 first


@pytest.mark.filterwarnings("ignore:all-zero chart")
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7))
def test_labelled_recall_tree_valid_and_optimal(seed, L):
    g = random_grammar(2 + seed % 3, 2, 3, seed, pre_child_bias=1.5)
    rng = np.random.default_rng(seed)
    words = [g.vocab[k] for k in rng.integers(0, 3, size=L)]
    t = labelled_recall(g, words)
    t.check(None)
    assert len(t.spans) == 2 * L - 1
    score = chart.marginals(g, chart.io(g, words)).max(axis=0)
    best, winners = best_span_tree(score)
    assert frozenset((i - 1, j - 1) for _, i, j in t.spans) in winners
    # scaling every score leaves the argmax alone
    _, a = best_tree(score)
    _, b = best_tree(score * 7.5)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.integers(0, 6)), min_size=1, max_size=6), st.integers(0, 99))
def test_f1_bounds_and_single_sentence(pairs, seed):
    rng = np.random.default_rng(seed)
    gold, pred = [], []
    for L, _ in pairs:
        def rand():
            spans = {(i, j) for i in range(1, L + 1) for j in range(i, L + 1) if rng.random() < 0.4}
            return SpanSet(L, frozenset(spans))
        gold.append(rand())
        pred.append(rand())
    for rep in (f1_sentence(gold, pred), f1_corpus(gold, pred)):
        assert 0.0 <= rep.f1 <= 1.0
    assert f1_sentence(gold[:1], pred[:1]).f1 == pytest.approx(f1_corpus(gold[:1], pred[:1]).f1)


def test_fallback_tree_structure(g1):
    t = parse_eval._right_branching_tree(g1, 4, "x")
    t.check(g1)
    assert isinstance(t, ParseTree)
