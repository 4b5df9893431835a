"""Sentence and gold-tree generation by leftmost rewriting.

Random streams come from numpy's PCG64 seeded through ``SeedSequence``.
Sentence ``k`` of a corpus drawn with seed ``s`` uses the stream
``SeedSequence(s, spawn_key=(k,))``, so a corpus is reproducible across
platforms and independent of how sentences are scheduled.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .grammar import Grammar
from .trees import ParseTree

RETRY_CAP = 10_000
DEFAULT_MAX_LEN = 64


class SamplingError(RuntimeError):
    pass


def stream(seed: int, index: int | None = None) -> np.random.Generator:
    """The generator for a whole-call seed, or for sentence ``index`` of a corpus."""
    key = () if index is None else (index,)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


class _Tables:
    """Cumulative rule tables for inverse-CDF draws."""

    def __init__(self, g: Grammar):
        n_nt = g.n_nt
        self.n_in = g.n_in
        self.bin_cdf = np.cumsum(g.binary.reshape(g.n_in, n_nt * n_nt), axis=1)
        self.lex_cdf = np.cumsum(g.lexical, axis=1)
        self.n_nt = n_nt

    def draw_binary(self, a: int, u: float) -> tuple[int, int]:
        row = self.bin_cdf[a]
        # side="right" lands on the first cell with positive mass above u
        k = min(int(np.searchsorted(row, u * row[-1], side="right")), row.size - 1)
        return divmod(k, self.n_nt)

    def draw_lexical(self, a: int, u: float) -> int:
        row = self.lex_cdf[a - self.n_in]
        return min(int(np.searchsorted(row, u * row[-1], side="right")), row.size - 1)


def _derive(g: Grammar, tables: _Tables, rng: np.random.Generator, max_len: int):
    """One leftmost derivation; None once it must exceed ``max_len`` words."""
    node_cap = 100 * max_len
    labels = [g.root]
    starts = [1]
    kids: list[tuple[int, int] | None] = [None]
    words: list[int] = []
    stack = [0]
    while stack:
        node = stack.pop()
        if len(labels) > node_cap:
            raise SamplingError(f"expansion cap of {node_cap} nodes exceeded")
        a = labels[node]
        starts[node] = len(words) + 1
        if a >= g.n_in:
            words.append(tables.draw_lexical(a, rng.random()))
            continue
        b, c = tables.draw_binary(a, rng.random())
        # every pending symbol yields at least one word
        if len(words) + len(stack) + 2 > max_len:
            return None
        left, right = len(labels), len(labels) + 1
        labels += [b, c]
        starts += [0, 0]
        kids += [None, None]
        kids[node] = (left, right)
        stack += [right, left]
    ends = [0] * len(labels)
    for node in range(len(labels) - 1, -1, -1):  # children always follow parents
        ends[node] = starts[node] if kids[node] is None else ends[kids[node][1]]
    spans = tuple(sorted(zip(labels, starts, ends), key=lambda s: (s[1], -s[2])))
    return words, spans


def sample_tree(g: Grammar, rng_seed: int | np.random.Generator,
                max_len: int = DEFAULT_MAX_LEN) -> tuple[list[str], ParseTree]:
    """Draw (words, gold tree), rejecting derivations longer than ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be positive")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else stream(rng_seed)
    tables = _tables(g)
    for _ in range(RETRY_CAP):
        got = _derive(g, tables, rng, max_len)
        if got is None:
            continue
        ids, spans = got
        words = [g.vocab[k] for k in ids]
        return words, ParseTree(len(words), spans)
    raise SamplingError(
        f"no sentence of length <= {max_len} after {RETRY_CAP} attempts")


def sample_corpus(g: Grammar, count: int, rng_seed: int,
                  max_len: int = DEFAULT_MAX_LEN, pool=None
                  ) -> tuple[list[list[str]], list[ParseTree]]:
    """``count`` sentences; sentence k is drawn from its own derived stream."""
    if count < 0:
        raise ValueError("count must be non-negative")

    def one(k):
        return sample_tree(g, stream(rng_seed, k), max_len)

    if pool is None:
        pairs: Sequence = [one(k) for k in range(count)]
    else:
        pairs = list(pool.map(one, range(count)))
    return [p[0] for p in pairs], [p[1] for p in pairs]


_TABLE_CACHE: dict[int, tuple[Grammar, _Tables]] = {}


def _tables(g: Grammar) -> _Tables:
    hit = _TABLE_CACHE.get(id(g))
    if hit is not None and hit[0] is g:
        return hit[1]
    t = _Tables(g)
    _TABLE_CACHE[id(g)] = (g, t)
    return t
