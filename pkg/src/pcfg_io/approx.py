"""Approximate Inside-Outside: frequent-symbol restriction and low-rank transforms.

Restriction keeps a subset of in-terminals on spans of two or more tokens
and a subset of pre-terminals in the single-token outside values; lexical
inside values stay complete.  The low-rank variant additionally replaces
every in-terminal vector of span offset ``ell`` by ``W^T W v`` with ``W``
learned per offset from the top eigenvectors of a normalized marginal
correlation matrix.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import chart, mlm, parse_eval
from .grammar import Grammar
from .linalg import jacobi_eigh
from .parallel import pmap
from .trees import ParseTree

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ApproxError(ValueError):
    pass


# ---------------------------------------------------------------------------
# frequencies and subsets


@dataclass(frozen=True)
class FrequencyTable:
    """Head counts of every symbol over a set of labeled trees."""

    names: tuple[str, ...]
    n_in: int
    counts: np.ndarray

    def normalized(self) -> np.ndarray:
        """Frequencies within each kind (in-terminals, pre-terminals)."""
        out = np.zeros(len(self.counts))
        for sl in (slice(0, self.n_in), slice(self.n_in, None)):
            tot = self.counts[sl].sum()
            if tot:
                out[sl] = self.counts[sl] / tot
        return out

    def count(self, name: str) -> int:
        return int(self.counts[self.names.index(name)])

    def to_dict(self) -> dict:
        return {n: int(c) for n, c in zip(self.names, self.counts)}

    def to_json(self, config: dict | None = None) -> str:
        out = {"format_version": FORMAT_VERSION, "counts": self.to_dict(),
               "in_terminals": list(self.names[: self.n_in])}
        if config is not None:
            out["config"] = config
        return json.dumps(out, sort_keys=True) + "\n"


def span_frequencies(trees: Sequence[ParseTree], g: Grammar | None = None) -> FrequencyTable:
    """Count every labeled span of every tree."""
    if g is not None:
        names, n_in = g.names, g.n_in
    else:
        top = max((a for t in trees for a, _, _ in t.spans), default=-1)
        names, n_in = tuple(str(k) for k in range(top + 1)), top + 1
    counts = np.zeros(len(names), dtype=np.int64)
    for t in trees:
        for a, _, _ in t.spans:
            counts[a] += 1
    return FrequencyTable(tuple(names), n_in, counts)


@dataclass(frozen=True)
class RestrictionSpec:
    """Kept in-terminals and pre-terminals (symbol ids, ascending)."""

    in_subset: tuple[int, ...]
    pre_subset: tuple[int, ...]

    def check(self, g: Grammar) -> None:
        if not self.in_subset or not self.pre_subset:
            raise ApproxError("restriction subsets must be non-empty")
        if g.root not in self.in_subset:
            raise ApproxError("the root symbol must be kept")
        if any(not 0 <= a < g.n_in for a in self.in_subset):
            raise ApproxError("in_subset holds a non-in-terminal")
        if any(not g.n_in <= a < g.n_nt for a in self.pre_subset):
            raise ApproxError("pre_subset holds a non-pre-terminal")

    def keep_in(self, g: Grammar) -> np.ndarray:
        k = np.zeros(g.n_in)
        k[list(self.in_subset)] = 1.0
        return k

    def pre_keep(self, g: Grammar) -> np.ndarray:
        k = np.zeros(g.n_pre)
        k[[a - g.n_in for a in self.pre_subset]] = 1.0
        return k

    def keep_long(self, g: Grammar) -> np.ndarray:
        # pre-terminal values on long spans are dead ends; left as computed
        return np.concatenate([self.keep_in(g), np.ones(g.n_pre)])

    def keep_leaf(self, g: Grammar) -> np.ndarray:
        return np.concatenate([self.keep_in(g), self.pre_keep(g)])

    def is_full(self, g: Grammar) -> bool:
        return len(self.in_subset) == g.n_in and len(self.pre_subset) == g.n_pre

    def to_dict(self, g: Grammar) -> dict:
        return {"in_subset": [g.names[a] for a in self.in_subset],
                "pre_subset": [g.names[a] for a in self.pre_subset]}


def full_restriction(g: Grammar) -> RestrictionSpec:
    return RestrictionSpec(tuple(range(g.n_in)), tuple(range(g.n_in, g.n_nt)))


def restriction_from_names(g: Grammar, in_names: Sequence[str], pre_names: Sequence[str]
                           ) -> RestrictionSpec:
    r = RestrictionSpec(tuple(sorted(g.symbol_id(n) for n in in_names)),
                        tuple(sorted(g.symbol_id(n) for n in pre_names)))
    r.check(g)
    return r


def _top(ids: Sequence[int], counts: np.ndarray, k: int) -> list[int]:
    return sorted(ids, key=lambda a: (-int(counts[a]), a))[:k]


def select_subsets(f: FrequencyTable, k_in: int, k_pre: int, root: int = 0) -> RestrictionSpec:
    """Top ``k_in`` in-terminals and ``k_pre`` pre-terminals by count.

    Ties go to the smaller symbol id.  The root always takes one of the
    ``k_in`` slots.  Oversized requests are clamped with a warning.
    """
    if k_in < 1 or k_pre < 1:
        raise ApproxError("subset sizes must be at least 1")
    n_in = f.n_in
    n_pre = len(f.counts) - n_in
    if k_in > n_in:
        warnings.warn(f"k_in={k_in} clamped to {n_in}", RuntimeWarning, stacklevel=2)
        k_in = n_in
    if k_pre > n_pre:
        warnings.warn(f"k_pre={k_pre} clamped to {n_pre}", RuntimeWarning, stacklevel=2)
        k_pre = n_pre
    others = [a for a in range(n_in) if a != root]
    ins = [root] + _top(others, f.counts, k_in - 1)
    pres = _top(range(n_in, n_in + n_pre), f.counts, k_pre)
    return RestrictionSpec(tuple(sorted(ins)), tuple(sorted(pres)))


def restricted_io(g: Grammar, words: Sequence[str], r: RestrictionSpec,
                  mask: int | None = None, scale_mode: str = "raw") -> chart.IOChart:
    """Inside-Outside with excluded symbols held at zero."""
    r.check(g)
    return chart.run_io(g, words, mask=mask, scale_mode=scale_mode, keep_in=r.keep_in(g),
                        keep_long=r.keep_long(g), keep_leaf=r.keep_leaf(g))


# ---------------------------------------------------------------------------
# transform bank


@dataclass
class TransformBank:
    """Per-offset orthonormal row matrices over the kept in-terminals.

    ``transforms[ell] = (W, eigenvalues)`` with ``W`` of shape ``(k, m)``,
    ``m = len(in_subset)``.  Offsets without data are absent; lookups fall
    back to the nearest trained offset (the smaller one on a tie).
    """

    in_subset: tuple[int, ...]
    transforms: dict[int, tuple[np.ndarray, np.ndarray]]
    names: tuple[str, ...] = ()
    contributors: dict[int, int] = field(default_factory=dict)
    fallback_uses: dict[int, int] = field(default_factory=dict)
    skipped: int = 0
    correlations: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def max_ell(self) -> int:
        return max(self.transforms, default=0)

    def ranks(self) -> dict[int, int]:
        return {ell: int(w.shape[0]) for ell, (w, _) in sorted(self.transforms.items())}

    def lookup(self, ell: int) -> np.ndarray:
        if ell in self.transforms:
            return self.transforms[ell][0]
        if not self.transforms:
            raise ApproxError("empty transform bank")
        near = min(self.transforms, key=lambda k: (abs(k - ell), k))
        self.fallback_uses[ell] = self.fallback_uses.get(ell, 0) + 1
        log.debug("no transform for offset %d; using offset %d", ell, near)
        return self.transforms[near][0]

    def projector(self, ell: int) -> np.ndarray:
        w = self.lookup(ell)
        return w.T @ w

    def reconstruction_error(self, ell: int) -> float:
        """Share of the spectrum dropped by the rank-k projection."""
        w, lam = self.transforms[ell]
        total = float(lam.sum())
        if total <= 0.0:
            return 0.0
        return float(lam[w.shape[0]:].sum()) / total

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "in_subset": list(self.names),
            "lengths": {
                str(ell): {"k": int(w.shape[0]), "eigenvalues": [float(x) for x in lam],
                           "W": w.tolist(), "sentences": int(self.contributors.get(ell, 0))}
                for ell, (w, lam) in sorted(self.transforms.items())
            },
        }

    def to_json(self, config: dict | None = None) -> str:
        out = self.to_dict()
        if config is not None:
            out["config"] = config
        return json.dumps(out, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, g: Grammar, text: str) -> "TransformBank":
        d = json.loads(text)
        saved = [g.symbol_id(n) for n in d["in_subset"]]
        # columns are stored in the saved name order; reorder to ascending ids
        order = np.argsort(saved, kind="stable")
        ids = tuple(saved[k] for k in order)
        names = tuple(g.names[a] for a in ids)
        tr = {}
        contrib = {}
        for key, v in d["lengths"].items():
            w = np.asarray(v["W"], dtype=float).reshape(int(v["k"]), len(ids))[:, order]
            tr[int(key)] = (np.ascontiguousarray(w), np.asarray(v["eigenvalues"], dtype=float))
            contrib[int(key)] = int(v.get("sentences", 0))
        return cls(ids, tr, names, contrib)

    def truncated(self, ranks) -> "TransformBank":
        """Copy keeping only the top rows per offset (rank clamped to the width)."""
        tr = {}
        for ell, (w, lam) in self.transforms.items():
            k = min(_rank_for(ranks, ell, len(self.in_subset)), w.shape[0])
            tr[ell] = (w[:k].copy(), lam.copy())
        return TransformBank(self.in_subset, tr, self.names, dict(self.contributors),
                             correlations=self.correlations)


def _rank_for(ranks, ell: int, width: int) -> int:
    if isinstance(ranks, Mapping):
        k = ranks.get(ell, ranks.get(str(ell), width))
    elif callable(ranks):
        k = ranks(ell)
    else:
        k = ranks
    return max(0, min(int(k), width))


def _sentence_correlations(g, words, r, source):
    """Per-offset X_s = Σ μ μ^T over kept in-terminals, or None if underivable."""
    try:
        c = restricted_io(g, words, r) if source == "restricted" else chart.io(g, words)
    except chart.OOVError:
        return None
    if c.root_value <= 0.0:
        return None
    mu = chart.marginals(g, c)[list(r.in_subset)]
    L = c.L
    out = {}
    for ell in range(1, L):
        i = np.arange(L - ell)
        vecs = mu[:, i, i + ell]            # (m, n)
        out[ell] = vecs @ vecs.T
    return out


def learn_transforms(g: Grammar, corpus: Sequence[Sequence[str]], r: RestrictionSpec,
                     ranks=None, *, source: str = "restricted", pool=None) -> TransformBank:
    """Top-k eigenvectors of Σ_s X_s / ||X_s||_F for every span offset.

    ``ranks`` is an int, a mapping offset -> k, a callable, or None for
    full rank.  Accumulation follows corpus order.
    """
    r.check(g)
    if source not in ("restricted", "exact"):
        raise ApproxError(f"unknown marginal source {source!r}")
    m = len(r.in_subset)
    parts = pmap(lambda w: _sentence_correlations(g, w, r, source), corpus, pool)
    acc: dict[int, np.ndarray] = {}
    contrib: dict[int, int] = {}
    skipped = 0
    for part in parts:
        if part is None:
            skipped += 1
            continue
        for ell, xs in part.items():
            nrm = float(np.linalg.norm(xs))
            if nrm == 0.0:
                continue
            acc[ell] = acc.get(ell, np.zeros((m, m))) + xs / nrm
            contrib[ell] = contrib.get(ell, 0) + 1
    if skipped:
        log.info("learn_transforms: %d underivable sentences skipped", skipped)
    tr = {}
    for ell in sorted(acc):
        lam, vec = jacobi_eigh(acc[ell])
        k = m if ranks is None else _rank_for(ranks, ell, m)
        tr[ell] = (np.ascontiguousarray(vec[:, :k].T), lam)
    return TransformBank(tuple(r.in_subset), tr, tuple(g.names[a] for a in r.in_subset),
                         contrib, skipped=skipped, correlations=acc)


def approx_io(g: Grammar, words: Sequence[str], r: RestrictionSpec, bank: TransformBank,
              mask: int | None = None, scale_mode: str = "raw") -> chart.IOChart:
    """Restricted Inside-Outside with per-offset W^T W projections.

    Projected vectors are clamped at 0; the chart records the smallest
    pre-clamp value in ``min_before_clamp``.
    """
    r.check(g)
    if tuple(bank.in_subset) != tuple(r.in_subset):
        raise ApproxError("transform bank was trained for a different in-terminal subset")
    cols = list(r.in_subset)
    cache: dict[int, np.ndarray] = {}

    def project(kind, ell, block):
        p = cache.get(ell)
        if p is None:
            p = cache[ell] = bank.projector(ell)
        sub = block[:, cols] @ p            # p is symmetric
        low = float(sub.min()) if sub.size else math.inf
        out = block.copy()
        out[:, cols] = np.maximum(sub, 0.0)
        return out, low

    return chart.run_io(g, words, mask=mask, scale_mode=scale_mode, keep_in=r.keep_in(g),
                        keep_long=r.keep_long(g), keep_leaf=r.keep_leaf(g), project=project)


# ---------------------------------------------------------------------------
# degradation harness


@dataclass
class ApproxConfig:
    name: str
    restriction: RestrictionSpec | None = None
    bank: TransformBank | None = None

    def io_fn(self):
        if self.restriction is None and self.bank is None:
            return chart.io
        if self.bank is None:
            return lambda g, w: restricted_io(g, w, self.restriction)
        return lambda g, w: approx_io(g, w, self.restriction, self.bank)

    def describe(self, g: Grammar) -> dict:
        out = {"name": self.name,
               "in_size": g.n_in if self.restriction is None else len(self.restriction.in_subset),
               "pre_size": g.n_pre if self.restriction is None else len(self.restriction.pre_subset),
               "ranks": None if self.bank is None else {str(k): v for k, v in self.bank.ranks().items()}}
        return out


def _parse_one(g, words, io_fn):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            t = parse_eval.labelled_recall(g, words, io_fn)
    except chart.ChartError as exc:
        return parse_eval._right_branching_tree(g, len(words), str(exc))
    return t


def degradation_report(g: Grammar, corpus: Sequence[Sequence[str]], gold_trees: Sequence[ParseTree],
                       configs: Sequence[ApproxConfig],
                       policy: parse_eval.EvalPolicy = parse_eval.EvalPolicy(),
                       ppl_corpus: Sequence[Sequence[str]] | None = None, pool=None) -> list[dict]:
    """One row per config: corpus F1, sentence F1 and 1-mask perplexity.

    ``ppl_corpus`` defaults to ``corpus``.  Sentences whose chart is
    degenerate fall back to right branching and are counted.
    """
    if len(corpus) != len(gold_trees):
        raise ApproxError("corpus and gold trees are not aligned")
    rows = []
    for cfg in configs:
        io_fn = cfg.io_fn()
        preds = pmap(lambda w: _parse_one(g, w, io_fn), corpus, pool)
        sent = parse_eval.evaluate(gold_trees, preds, "sentence", policy)
        corp = parse_eval.evaluate(gold_trees, preds, "corpus", policy)
        try:
            ppl = mlm.one_mask_perplexity(g, ppl_corpus if ppl_corpus is not None else corpus,
                                          cfg.restriction, cfg.bank, pool=pool)
            ppl_d = ppl.to_dict()
        except ValueError as exc:
            ppl_d = {"ppl": None, "tokens_scored": 0, "skipped": None, "error": str(exc)}
        row = cfg.describe(g)
        row.update({
            "corpus_f1": corp.f1, "sent_f1": sent.f1, "ppl": ppl_d["ppl"],
            "tokens_scored": ppl_d["tokens_scored"], "skipped": ppl_d["skipped"],
            "parse_fallbacks": sum(1 for t in preds if t.warning is not None),
        })
        rows.append(row)
    return rows


def report_json(rows: list[dict], config: dict) -> str:
    return json.dumps({"format_version": FORMAT_VERSION, "config": config, "rows": rows},
                      sort_keys=True) + "\n"
