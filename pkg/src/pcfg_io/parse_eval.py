"""Labelled-Recall parsing from span marginals and unlabelled span F1."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import chart
from .grammar import Grammar
from .trees import ParseTree

FORMAT_VERSION = 1


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class SpanSet:
    sentence_len: int
    spans: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __len__(self):
        return len(self.spans)

    def __contains__(self, span):
        return span in self.spans


@dataclass(frozen=True)
class EvalPolicy:
    """Which spans take part in F1.

    ``empty_f1`` is the per-sentence score when gold and prediction both
    end up empty after exclusions.
    """

    drop_singletons: bool = True
    drop_whole: bool = True
    empty_f1: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


KEEP_ALL = EvalPolicy(False, False)


@dataclass(frozen=True)
class F1Report:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    mode: str
    policy: dict
    sentences: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps({"format_version": FORMAT_VERSION, **self.to_dict()}, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# parsing


def span_scores(mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(score, label) matrices with score(i,j) = max_A mu(A,i,j), 0-based."""
    return mu.max(axis=0), mu.argmax(axis=0)


def best_tree(score: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Binary span tree maximizing the summed score; ties go to the smallest split.

    ``score`` is an (L, L) matrix over 0-based inclusive spans.  Returns the
    optimum and the spans (1-based) in pre-order.
    """
    L = score.shape[0]
    G = np.zeros((L, L))
    split = np.zeros((L, L), dtype=np.int64)
    for i in range(L):
        G[i, i] = score[i, i]
    for ell in range(1, L):
        for i in range(L - ell):
            j = i + ell
            cand = G[i, i:j] + G[i + 1:j + 1, j]
            k = int(np.argmax(cand))  # first maximum = smallest split
            split[i, j] = i + k
            G[i, j] = score[i, j] + cand[k]
    spans: list[tuple[int, int]] = []
    stack = [(0, L - 1)]
    while stack:
        i, j = stack.pop()
        spans.append((i + 1, j + 1))
        if i < j:
            k = split[i, j]
            stack.append((k + 1, j))
            stack.append((i, k))
    return float(G[0, L - 1]), spans


def right_branching(L: int) -> SpanSet:
    if L < 1:
        raise EvalError("sentence length must be positive")
    spans = {(i, L) for i in range(1, L)} | {(i, i) for i in range(1, L + 1)}
    return SpanSet(L, frozenset(spans))


def _right_branching_tree(g: Grammar, L: int, warning: str) -> ParseTree:
    pre = g.n_in
    spans = []
    for i in range(1, L):
        spans.append((g.root, i, L))
        spans.append((pre, i, i))
    spans.append((pre if L > 1 else g.root, L, L))
    spans.sort(key=lambda s: (s[1], -s[2]))
    return ParseTree(L, tuple(spans), warning)


def tree_from_marginals(g: Grammar, mu: np.ndarray) -> ParseTree:
    score, label = span_scores(mu)
    L = score.shape[0]
    if not np.any(score > 0):
        msg = "all-zero chart; right-branching fallback"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return _right_branching_tree(g, L, msg)
    _, spans = best_tree(score)
    return ParseTree(L, tuple((int(label[i - 1, j - 1]), i, j) for i, j in spans))


def labelled_recall(g: Grammar, words: Sequence[str], io_fn=None) -> ParseTree:
    """Labelled-Recall tree; ``io_fn(g, words)`` may supply an approximate chart."""
    c = chart.io(g, words) if io_fn is None else io_fn(g, words)
    return tree_from_marginals(g, chart.marginals(g, c))


# ---------------------------------------------------------------------------
# evaluation


def extract_eval_spans(t: ParseTree | SpanSet, policy: EvalPolicy = EvalPolicy()) -> SpanSet:
    L = t.sentence_len
    spans = t.span_set() if isinstance(t, ParseTree) else set(t.spans)
    out = {
        (i, j) for i, j in spans
        if not (policy.drop_singletons and i == j)
        and not (policy.drop_whole and (i, j) == (1, L))
    }
    return SpanSet(L, frozenset(out))


def _counts(gold: SpanSet, pred: SpanSet) -> tuple[int, int, int]:
    tp = len(gold.spans & pred.spans)
    return tp, len(pred.spans) - tp, len(gold.spans) - tp


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _check(gold, pred):
    if len(gold) != len(pred):
        raise EvalError(f"{len(gold)} gold entries but {len(pred)} predictions")
    for k, (a, b) in enumerate(zip(gold, pred)):
        if a.sentence_len != b.sentence_len:
            raise EvalError(f"sentence {k}: lengths {a.sentence_len} and {b.sentence_len} differ")


def f1_sentence(gold: Sequence[SpanSet], pred: Sequence[SpanSet],
                policy: EvalPolicy = EvalPolicy()) -> F1Report:
    """Unweighted mean of per-sentence precision, recall and F1."""
    _check(gold, pred)
    ps, rs, fs = [], [], []
    tot = [0, 0, 0]
    for a, b in zip(gold, pred):
        tp, fp, fn = _counts(a, b)
        tot[0] += tp
        tot[1] += fp
        tot[2] += fn
        if not a.spans and not b.spans:
            p = r = f = policy.empty_f1
        else:
            p, r, f = _prf(tp, fp, fn)
        ps.append(p)
        rs.append(r)
        fs.append(f)
    n = len(gold)
    mean = (lambda xs: float(sum(xs) / n)) if n else (lambda xs: 0.0)
    return F1Report(mean(ps), mean(rs), mean(fs), *tot, "sentence", policy.to_dict(), n)


def f1_corpus(gold: Sequence[SpanSet], pred: Sequence[SpanSet],
              policy: EvalPolicy = EvalPolicy()) -> F1Report:
    """Micro-averaged F1 from pooled counts."""
    _check(gold, pred)
    tot = [0, 0, 0]
    for a, b in zip(gold, pred):
        for k, v in enumerate(_counts(a, b)):
            tot[k] += v
    if gold and not any(tot):
        p = r = f = policy.empty_f1
    else:
        p, r, f = _prf(*tot)
    return F1Report(p, r, f, *tot, "corpus", policy.to_dict(), len(gold))


def evaluate(gold_trees: Iterable, pred_trees: Iterable, mode: str = "sentence",
             policy: EvalPolicy = EvalPolicy()) -> F1Report:
    gold = [extract_eval_spans(t, policy) for t in gold_trees]
    pred = [extract_eval_spans(t, policy) for t in pred_trees]
    if mode == "sentence":
        return f1_sentence(gold, pred, policy)
    if mode == "corpus":
        return f1_corpus(gold, pred, policy)
    raise EvalError(f"unknown mode {mode!r}")
