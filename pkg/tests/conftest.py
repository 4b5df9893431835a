import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pcfg_io import load_grammar, random_grammar  # noqa: E402
from oracles import sparse_grammar  # noqa: E402

G0_TEXT = """\
# deterministic two-word grammar
root ROOT
nonterm ROOT in
nonterm A pre
nonterm B pre
rule ROOT -> A B 1.0
lex A -> a 1.0
lex B -> b 1.0
"""

G1_TEXT = """\
root ROOT
nonterm ROOT in
nonterm X in
nonterm T pre
rule ROOT -> X T 0.6
rule ROOT -> T T 0.4
rule X -> T T 1.0
lex T -> x 0.5
lex T -> y 0.5
"""


@pytest.fixture(scope="session")
def g0():
    return load_grammar(G0_TEXT)


@pytest.fixture(scope="session")
def g1():
    return load_grammar(G1_TEXT)


def oracle_grammars(count: int = 50):
    """Mixed dense and sparse random grammars with |N| <= 6 and |vocab| <= 4."""
    out = []
    for k in range(count):
        n_nt = 2 + k % 5                 # 2..6 symbols
        n_in = 1 + (k // 5) % (n_nt - 1)
        n_pre = n_nt - n_in
        vocab = 2 + k % 3
        g = random_grammar(n_in, n_pre, vocab, 1000 + k, pre_child_bias=2.0)
        if k % 2:
            g = sparse_grammar(g, 5000 + k, keep=0.6)
        out.append(g)
    return out


@pytest.fixture(scope="session")
def oracle_set():
    return oracle_grammars()


# one summary line per acceptance criterion
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
