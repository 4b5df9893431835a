"""The 1-mask conditional word distribution and its perplexity.

Setting every pre-terminal's inside value to 1 at the masked position sums
out the missing word, since each lexical row sums to 1.  The outside value
of each pre-terminal at that position then weights its lexical row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import chart
from .grammar import Grammar
from .parallel import pmap

FORMAT_VERSION = 1


class UndefinedConditional(ValueError):
    """No filler of the masked position makes the sentence derivable."""


@dataclass(frozen=True)
class MaskDistribution:
    position: int
    probs: np.ndarray

    def prob(self, g: Grammar, word: str) -> float:
        return float(self.probs[g.word_id(word)])


@dataclass(frozen=True)
class PerplexityReport:
    ppl: float
    tokens_scored: int
    skipped: int
    nll_sum: float
    averaging: str = "per-token"

    def to_dict(self) -> dict:
        return {"ppl": self.ppl, "tokens_scored": self.tokens_scored, "skipped": self.skipped,
                "nll_sum": self.nll_sum, "averaging": self.averaging}


def distribution_from_chart(g: Grammar, c: chart.IOChart, m: int,
                            pre_keep: np.ndarray | None = None) -> MaskDistribution:
    """Normalized Σ_A β(A,m,m) Pr[A→w] from a chart masked at ``m``.

    ``pre_keep`` (length n_pre) restricts the pre-terminals that contribute.
    """
    beta = c.beta[g.n_in:, m - 1, m - 1]
    if pre_keep is not None:
        beta = beta * pre_keep
    scores = beta @ g.lexical
    z = float(scores.sum())
    if not z > 0.0:
        raise UndefinedConditional(f"no word at position {m} makes the sentence derivable")
    return MaskDistribution(m, scores / z)


def one_mask_distribution(g: Grammar, words: Sequence[str], m: int,
                          restriction=None, transforms=None) -> MaskDistribution:
    """Pr[w_m = w | all other words] over the whole vocabulary.

    With ``restriction`` (and optionally ``transforms``) the masked chart
    comes from the restricted or projected computation and only the kept
    pre-terminals contribute.
    """
    if restriction is None and transforms is None:
        c = chart.run_io(g, words, mask=m)
        return distribution_from_chart(g, c, m)
    from . import approx

    r = restriction if restriction is not None else approx.full_restriction(g)
    if transforms is None:
        c = approx.restricted_io(g, words, r, mask=m)
    else:
        c = approx.approx_io(g, words, r, transforms, mask=m)
    return distribution_from_chart(g, c, m, r.pre_keep(g))


def sentence_terms(g: Grammar, words: Sequence[str], dist_fn: Callable | None = None
                   ) -> tuple[float, int, int]:
    """(Σ -ln p(true word), scored, skipped) over every position of one sentence."""
    nll, scored, skipped = 0.0, 0, 0
    for m in range(1, len(words) + 1):
        try:
            d = one_mask_distribution(g, words, m) if dist_fn is None else dist_fn(g, words, m)
        except UndefinedConditional:
            skipped += 1
            continue
        p = d.prob(g, words[m - 1]) if g.has_word(words[m - 1]) else 0.0
        if p <= 0.0:
            skipped += 1
            continue
        nll -= math.log(p)
        scored += 1
    return nll, scored, skipped


def one_mask_perplexity(g: Grammar, corpus: Sequence[Sequence[str]], restriction=None,
                        transforms=None, pool=None) -> PerplexityReport:
    """Per-token geometric-mean perplexity of the 1-mask conditionals.

    Positions whose conditional is undefined or gives the true word zero
    probability are counted in ``skipped`` and left out of the mean.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")

    def dist(g_, w, m):
        return one_mask_distribution(g_, w, m, restriction, transforms)

    parts = pmap(lambda w: sentence_terms(g, w, dist), corpus, pool)
    nll = math.fsum(p[0] for p in parts)
    scored = sum(p[1] for p in parts)
    skipped = sum(p[2] for p in parts)
    if scored == 0:
        raise ValueError("no position could be scored")
    return PerplexityReport(math.exp(nll / scored), scored, skipped, nll)


def report_json(rep: PerplexityReport, config: dict) -> str:
    out = {"format_version": FORMAT_VERSION, **rep.to_dict(), "config": config}
    return json.dumps(out, sort_keys=True) + "\n"
