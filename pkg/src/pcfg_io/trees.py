"""Binary labeled span trees and the bracketed one-line tree format."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .grammar import Grammar


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class ParseTree:
    """Labeled binary tree as a span list; spans are 1-based and inclusive.

    ``spans`` are kept in pre-order (parent, left subtree, right subtree).
    ``warning`` is set when the tree is a fallback rather than a real parse.
    """

    sentence_len: int
    spans: tuple[tuple[int, int, int], ...]
    warning: str | None = field(default=None, compare=False)

    def span_set(self) -> set[tuple[int, int]]:
        return {(i, j) for _, i, j in self.spans}

    def labeled(self) -> set[tuple[int, int, int]]:
        return set(self.spans)

    def leaves(self) -> list[int]:
        """Leaf labels left to right."""
        return [a for a, i, j in sorted(self.spans, key=lambda s: s[1]) if i == j]

    def check(self, g: Grammar | None = None) -> None:
        """Raise TreeError unless the spans form a full binary tree over 1..L."""
        L = self.sentence_len
        if len(self.spans) != 2 * L - 1:
            raise TreeError(f"expected {2 * L - 1} spans, got {len(self.spans)}")
        by_span = {}
        for a, i, j in self.spans:
            if not 1 <= i <= j <= L:
                raise TreeError(f"span ({i},{j}) out of range")
            if (i, j) in by_span:
                raise TreeError(f"span ({i},{j}) repeated")
            by_span[(i, j)] = a
        if (1, L) not in by_span:
            raise TreeError("missing whole-sentence span")
        if g is not None and by_span[(1, L)] != g.root and L > 0:
            raise TreeError("root span not labeled by the root symbol")
        for (i, j), a in by_span.items():
            if i == j:
                if g is not None and not g.is_pre(a):
                    raise TreeError(f"leaf ({i},{i}) labeled by an in-terminal")
                continue
            if g is not None and g.is_pre(a):
                raise TreeError(f"span ({i},{j}) labeled by a pre-terminal")
            splits = [k for k in range(i, j) if (i, k) in by_span and (k + 1, j) in by_span]
            if len(splits) != 1:
                raise TreeError(f"span ({i},{j}) does not have exactly two children")


def tree_from_nested(node, start: int = 1) -> tuple[list[tuple[int, int, int]], int]:
    """Flatten ``(label, left, right)`` / ``(label, word)`` nesting with int labels."""
    out: list[tuple[int, int, int]] = []

    def walk(n, s):
        if len(n) == 2:
            out.append((n[0], s, s))
            return s
        slot = len(out)
        out.append(None)
        mid = walk(n[1], s)
        end = walk(n[2], mid + 1)
        out[slot] = (n[0], s, end)
        return end

    end = walk(node, start)
    return out, end


def derivation_logprob_terms(g: Grammar, words: Sequence[str], tree: ParseTree) -> list[float]:
    """Rule probabilities used by the derivation, one per span."""
    lab = {(i, j): a for a, i, j in tree.spans}
    probs = []
    for a, i, j in tree.spans:
        if i == j:
            probs.append(g.lex_prob(a, words[i - 1]))
            continue
        k = next(k for k in range(i, j) if (i, k) in lab and (k + 1, j) in lab)
        probs.append(g.rule_prob(a, lab[(i, k)], lab[(k + 1, j)]))
    return probs


def derivation_prob(g: Grammar, words: Sequence[str], tree: ParseTree) -> float:
    p = 1.0
    for q in derivation_logprob_terms(g, words, tree):
        p *= q
    return p


# ---------------------------------------------------------------------------
# bracketed format: (ROOT (X (T x) (T x)) (T y))

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def format_tree(g: Grammar, words: Sequence[str], tree: ParseTree) -> str:
    names = g.names
    lab = {(i, j): a for a, i, j in tree.spans}

    def render(i, j):
        a = lab[(i, j)]
        if i == j:
            return f"({names[a]} {words[i - 1]})"
        k = next(k for k in range(i, j) if (i, k) in lab and (k + 1, j) in lab)
        return f"({names[a]} {render(i, k)} {render(k + 1, j)})"

    return render(1, tree.sentence_len)


def parse_tree(g: Grammar, text: str) -> tuple[list[str], ParseTree]:
    """Inverse of :func:`format_tree`; labels are resolved against ``g``."""
    toks = _TOKEN.findall(text)
    pos = 0

    def expect(t):
        nonlocal pos
        if pos >= len(toks) or toks[pos] != t:
            raise TreeError(f"expected {t!r} at token {pos}")
        pos += 1

    def label():
        nonlocal pos
        if pos >= len(toks) or toks[pos] in "()":
            raise TreeError(f"expected a label at token {pos}")
        name = toks[pos]
        pos += 1
        try:
            return g.symbol_id(name)
        except KeyError:
            raise TreeError(f"unknown label {name!r}") from None

    def node():
        nonlocal pos
        expect("(")
        a = label()
        if pos < len(toks) and toks[pos] == "(":
            left = node()
            right = node()
            expect(")")
            return (a, left, right)
        if pos >= len(toks) or toks[pos] in "()":
            raise TreeError(f"expected a word or subtree at token {pos}")
        w = toks[pos]
        pos += 1
        expect(")")
        return (a, w)

    nested = node()
    if pos != len(toks):
        raise TreeError("trailing tokens after tree")
    words: list[str] = []

    def collect(n):
        if len(n) == 2:
            words.append(n[1])
            return (n[0], n[1])
        return (n[0], collect(n[1]), collect(n[2]))

    spans, end = tree_from_nested(collect(nested))
    return words, ParseTree(end, tuple(spans))


def read_trees(g: Grammar, lines: Iterable[str]) -> tuple[list[list[str]], list[ParseTree]]:
    words, trees = [], []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        w, t = parse_tree(g, line)
        words.append(w)
        trees.append(t)
    return words, trees


def read_corpus(lines: Iterable[str]) -> list[list[str]]:
    return [line.split() for line in lines if line.strip()]


def bracket_spans(text: str) -> tuple[int, set[tuple[int, int]]]:
    """(length, span set) of a bracketed tree without resolving labels."""
    toks = _TOKEN.findall(text)
    spans: set[tuple[int, int]] = set()
    stack: list[int] = []
    pos = 0
    k = 0
    while k < len(toks):
        t = toks[k]
        if t == "(":
            if k + 1 >= len(toks) or toks[k + 1] in ("(", ")"):
                raise TreeError(f"expected a label at token {k + 1}")
            stack.append(pos + 1)
            k += 2
            continue
        if t == ")":
            if not stack:
                raise TreeError(f"unbalanced ')' at token {k}")
            spans.add((stack.pop(), pos))
            k += 1
            if not stack and k != len(toks):
                raise TreeError("trailing tokens after tree")
            continue
        pos += 1
        k += 1
    if stack or not spans:
        raise TreeError("unbalanced brackets")
    return pos, spans
