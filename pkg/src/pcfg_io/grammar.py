"""Chomsky-normal-form PCFGs: construction, validation, text serialization.

Symbol ids are dense, with every in-terminal preceding every pre-terminal.
Binary rules are stored as a dense ``(n_in, n_nt, n_nt)`` tensor, so
``binary[A, B, C] == Pr[A -> B C]``; lexical rules as ``(n_pre, n_vocab)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

IN = "in_terminal"
PRE = "pre_terminal"

STRICT_TOL = 1e-9
RENORM_TOL = 1e-3


class GrammarError(ValueError):
    """Raised for malformed grammar files or degenerate grammars."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Symbol:
    id: int
    name: str
    kind: str


@dataclass(frozen=True)
class Violation:
    symbol: str
    kind: str
    message: str
    residual: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


@dataclass(frozen=True, eq=False)
class Grammar:
    """An immutable CNF PCFG.

    ``binary`` has one row block per in-terminal; ``lexical`` one row per
    pre-terminal (row ``a`` belongs to symbol id ``n_in + a``).
    """

    symbols: tuple[Symbol, ...]
    root: int
    vocab: tuple[str, ...]
    binary: np.ndarray
    lexical: np.ndarray
    _word_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        binary = np.ascontiguousarray(self.binary, dtype=np.float64)
        lexical = np.ascontiguousarray(self.lexical, dtype=np.float64)
        binary.setflags(write=False)
        lexical.setflags(write=False)
        object.__setattr__(self, "binary", binary)
        object.__setattr__(self, "lexical", lexical)
        object.__setattr__(self, "symbols", tuple(self.symbols))
        object.__setattr__(self, "vocab", tuple(self.vocab))
        object.__setattr__(self, "_word_index", {w: k for k, w in enumerate(self.vocab)})
        n_in = sum(1 for s in self.symbols if s.kind == IN)
        for s in self.symbols:
            if (s.id < n_in) != (s.kind == IN):
                raise GrammarError("in-terminals must precede pre-terminals")
        if binary.shape != (n_in, len(self.symbols), len(self.symbols)):
            raise GrammarError(f"binary tensor has shape {binary.shape}")
        if lexical.shape != (len(self.symbols) - n_in, len(self.vocab)):
            raise GrammarError(f"lexical matrix has shape {lexical.shape}")
        if not 0 <= self.root < n_in:
            raise GrammarError("root must be an in-terminal")

    @cached_property
    def n_in(self) -> int:
        return self.binary.shape[0]

    @property
    def n_nt(self) -> int:
        return len(self.symbols)

    @property
    def n_pre(self) -> int:
        return self.n_nt - self.n_in

    @property
    def n_vocab(self) -> int:
        return len(self.vocab)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.symbols)

    def symbol_id(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def word_id(self, word: str) -> int:
        return self._word_index[word]

    def has_word(self, word: str) -> bool:
        return word in self._word_index

    def is_pre(self, a: int) -> bool:
        return a >= self.n_in

    def lexical_column(self, word: str) -> np.ndarray:
        """Pr[A -> word] for every pre-terminal A."""
        return self.lexical[:, self._word_index[word]]

    # Rule tensors re-indexed by child, consumed by the outside pass and txsim.
    @cached_property
    def as_right_child(self) -> np.ndarray:
        """``r[A, B, C] = Pr[B -> C A]`` with B ranging over in-terminals."""
        return np.ascontiguousarray(np.transpose(self.binary, (2, 0, 1)))

    @cached_property
    def as_left_child(self) -> np.ndarray:
        """``l[A, B, C] = Pr[B -> A C]`` with B ranging over in-terminals."""
        return np.ascontiguousarray(np.transpose(self.binary, (1, 0, 2)))

    def rule_prob(self, parent: int, left: int, right: int) -> float:
        return float(self.binary[parent, left, right])

    def lex_prob(self, pre: int, word: str) -> float:
        return float(self.lexical[pre - self.n_in, self._word_index[word]])


def make_grammar(
    in_names: Sequence[str],
    pre_names: Sequence[str],
    vocab: Sequence[str],
    binary: Iterable[tuple[str, str, str, float]],
    lexical: Iterable[tuple[str, str, float]],
    root: str | None = None,
) -> Grammar:
    """Build a grammar from named rule lists (no normalization checks)."""
    symbols = [Symbol(k, n, IN) for k, n in enumerate(in_names)]
    symbols += [Symbol(len(in_names) + k, n, PRE) for k, n in enumerate(pre_names)]
    index = {s.name: s.id for s in symbols}
    if len(index) != len(symbols):
        raise GrammarError("duplicate symbol name")
    widx = {w: k for k, w in enumerate(vocab)}
    n_in, n_nt = len(in_names), len(symbols)
    bin_t = np.zeros((n_in, n_nt, n_nt))
    lex_t = np.zeros((len(pre_names), len(vocab)))
    for a, b, c, p in binary:
        bin_t[index[a], index[b], index[c]] += p
    for a, w, p in lexical:
        lex_t[index[a] - n_in, widx[w]] += p
    root_id = index[root] if root is not None else 0
    return Grammar(tuple(symbols), root_id, tuple(vocab), bin_t, lex_t)


def validate(g: Grammar) -> ValidationReport:
    """Report every normalization / range violation; never raises."""
    out = []
    for a in range(g.n_in):
        row = g.binary[a]
        if (row < 0).any() or (row > 1).any():
            out.append(Violation(g.names[a], "range", "binary probability outside [0, 1]",
                                 float(max(-row.min(), row.max() - 1, 0.0))))
        total = float(row.sum())
        if abs(total - 1.0) > STRICT_TOL:
            out.append(Violation(g.names[a], "row_sum",
                                 f"binary rules sum to {total!r}", abs(1.0 - total)))
    for k in range(g.n_pre):
        row = g.lexical[k]
        name = g.names[g.n_in + k]
        if (row < 0).any() or (row > 1).any():
            out.append(Violation(name, "range", "lexical probability outside [0, 1]",
                                 float(max(-row.min(), row.max() - 1, 0.0))))
        total = float(row.sum())
        if abs(total - 1.0) > STRICT_TOL:
            out.append(Violation(name, "row_sum",
                                 f"lexical rules sum to {total!r}", abs(1.0 - total)))
    return ValidationReport(tuple(out))


def load_grammar(text: str, renormalize: bool = False) -> Grammar:
    """Parse the line-oriented grammar format.

    Lines are ``root NAME``, ``nonterm NAME in|pre``,
    ``rule A -> B C prob`` and ``lex A -> word prob``; ``#`` starts a comment.
    """
    root_name = None
    root_line = None
    order: list[tuple[str, str]] = []
    kinds: dict[str, str] = {}
    vocab: list[str] = []
    seen_words: set[str] = set()
    rules: dict[tuple[str, str, str], float] = {}
    lexes: dict[tuple[str, str], float] = {}

    def need(name, lineno):
        if name not in kinds:
            raise GrammarError(f"unknown symbol {name!r}", lineno)
        return kinds[name]

    def prob(tok, lineno):
        try:
            p = float(tok)
        except ValueError:
            raise GrammarError(f"bad probability {tok!r}", lineno) from None
        if not math.isfinite(p) or p < 0 or p > 1:
            raise GrammarError(f"probability {tok!r} outside [0, 1]", lineno)
        return p

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        head = toks[0]
        if head == "root":
            if len(toks) != 2:
                raise GrammarError("expected 'root NAME'", lineno)
            if root_name is not None:
                raise GrammarError("root declared twice", lineno)
            root_name, root_line = toks[1], lineno
        elif head == "nonterm":
            if len(toks) != 3 or toks[2] not in ("in", "pre"):
                raise GrammarError("expected 'nonterm NAME in|pre'", lineno)
            name, kind = toks[1], IN if toks[2] == "in" else PRE
            if name in kinds:
                if kinds[name] != kind:
                    raise GrammarError(
                        f"symbol {name!r} declared both in-terminal and pre-terminal", lineno)
                raise GrammarError(f"symbol {name!r} declared twice", lineno)
            kinds[name] = kind
            order.append((name, kind))
        elif head == "rule":
            if len(toks) == 5 and toks[2] == "->":
                raise GrammarError("unary or non-CNF rule", lineno)
            if len(toks) != 6 or toks[2] != "->":
                raise GrammarError("expected 'rule A -> B C prob'", lineno)
            a, b, c = toks[1], toks[3], toks[4]
            if need(a, lineno) != IN:
                raise GrammarError(f"binary rule parent {a!r} is not an in-terminal", lineno)
            need(b, lineno)
            need(c, lineno)
            if (a, b, c) in rules:
                raise GrammarError(f"duplicate rule {a} -> {b} {c}", lineno)
            rules[(a, b, c)] = prob(toks[5], lineno)
        elif head == "lex":
            if len(toks) != 5 or toks[2] != "->":
                raise GrammarError("expected 'lex A -> word prob'", lineno)
            a, w = toks[1], toks[3]
            if need(a, lineno) != PRE:
                raise GrammarError(f"lexical rule parent {a!r} is not a pre-terminal", lineno)
            if (a, w) in lexes:
                raise GrammarError(f"duplicate rule {a} -> {w}", lineno)
            lexes[(a, w)] = prob(toks[4], lineno)
            if w not in seen_words:
                seen_words.add(w)
                vocab.append(w)
        else:
            raise GrammarError(f"unknown directive {head!r}", lineno)

    if root_name is None:
        raise GrammarError("missing root declaration")
    if root_name not in kinds:
        raise GrammarError(f"unknown symbol {root_name!r}", root_line)
    if kinds[root_name] != IN:
        raise GrammarError(f"root {root_name!r} is not an in-terminal", root_line)

    in_names = [n for n, k in order if k == IN]
    pre_names = [n for n, k in order if k == PRE]
    g = make_grammar(in_names, pre_names, vocab,
                     [(a, b, c, p) for (a, b, c), p in rules.items()],
                     [(a, w, p) for (a, w), p in lexes.items()], root=root_name)
    return _check_sums(g, renormalize)


def _check_sums(g: Grammar, renormalize: bool) -> Grammar:
    binary = g.binary.copy()
    lexical = g.lexical.copy()
    rows = [(g.names[a], binary[a]) for a in range(g.n_in)]
    rows += [(g.names[g.n_in + k], lexical[k]) for k in range(g.n_pre)]
    changed = False
    for name, row in rows:
        total = float(row.sum())
        resid = abs(total - 1.0)
        if resid <= STRICT_TOL:
            continue
        if renormalize and resid < RENORM_TOL and total > 0:
            row /= total
            changed = True
            continue
        raise GrammarError(f"rules for {name!r} sum to {total!r} (residual {resid:.3g})")
    if not changed:
        return g
    return Grammar(g.symbols, g.root, g.vocab, binary, lexical)


def save_grammar(g: Grammar) -> str:
    """Serialize with 17 significant digits so probabilities round-trip exactly."""
    if g.n_vocab == 0:
        raise GrammarError("cannot save a grammar with an empty vocabulary")
    names = g.names
    lines = [f"root {names[g.root]}"]
    for s in g.symbols:
        lines.append(f"nonterm {s.name} {'in' if s.kind == IN else 'pre'}")
    for a, b, c in zip(*np.nonzero(g.binary)):
        lines.append(f"rule {names[a]} -> {names[b]} {names[c]} {g.binary[a, b, c]:.17g}")
    # word-major order keeps the vocabulary order stable under reload
    for w, word in enumerate(g.vocab):
        emitters = np.nonzero(g.lexical[:, w])[0]
        if emitters.size == 0:
            lines.append(f"lex {names[g.n_in]} -> {word} 0")
        for k in emitters:
            lines.append(f"lex {names[g.n_in + k]} -> {word} {g.lexical[k, w]:.17g}")
    return "\n".join(lines) + "\n"


def random_grammar(
    n_in: int,
    n_pre: int,
    n_vocab: int,
    seed: int,
    *,
    concentration: float = 1.0,
    pre_child_bias: float = 1.0,
    lex_concentration: float = 1.0,
) -> Grammar:
    """Dirichlet-random dense grammar.

    ``pre_child_bias`` scales the prior weight of children that are
    pre-terminals; values above 1 shorten expected derivations.
    """
    rng = np.random.default_rng(seed)
    n_nt = n_in + n_pre
    prior = np.full((n_nt, n_nt), concentration)
    prior[n_in:, :] *= pre_child_bias
    prior[:, n_in:] *= pre_child_bias
    binary = np.stack([rng.dirichlet(prior.ravel()).reshape(n_nt, n_nt)
                       for _ in range(n_in)]) if n_in else np.zeros((0, n_nt, n_nt))
    lexical = rng.dirichlet(np.full(n_vocab, lex_concentration), size=n_pre)
    symbols = tuple(Symbol(k, f"I{k}" if k else "ROOT", IN) for k in range(n_in))
    symbols += tuple(Symbol(n_in + k, f"P{k}", PRE) for k in range(n_pre))
    vocab = tuple(f"w{k}" for k in range(n_vocab))
    return Grammar(symbols, 0, vocab, binary, lexical)
