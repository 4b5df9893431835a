"""Timing of the compiled kernels against the numpy fallback.

    python3 -m pcfg_io.bench --n-in 12 --n-pre 12 --length 30 --repeat 5

Both backends run the same inside-outside computation; the chart tables are
checked to agree before timings are printed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import chart, kernels
from .grammar import random_grammar


@contextmanager
def use_backend(name: str):
    saved = kernels.inside_span, kernels.outside_span
    kernels.inside_span, kernels.outside_span = kernels.backend_functions(name)
    try:
        yield
    finally:
        kernels.inside_span, kernels.outside_span = saved


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        kernels.backend_functions("cython")
    except ImportError:
        return names
    return names + ["cython"]


def run(n_in: int = 12, n_pre: int = 12, vocab: int = 20, length: int = 30,
        sentences: int = 4, repeat: int = 3, seed: int = 0) -> dict:
    g = random_grammar(n_in, n_pre, vocab, seed)
    rng = np.random.default_rng(seed)
    corpus = [[g.vocab[k] for k in rng.integers(0, vocab, size=length)] for _ in range(sentences)]
    results = {}
    charts = {}
    for name in available_backends():
        with use_backend(name):
            charts[name] = [chart.io(g, w, scale_mode="scaled") for w in corpus]
            best = np.inf
            for _ in range(repeat):
                t0 = time.perf_counter()
                for w in corpus:
                    chart.io(g, w, scale_mode="scaled")
                best = min(best, time.perf_counter() - t0)
        results[name] = best / sentences
    agree = None
    if len(charts) == 2:
        agree = max(
            float(np.max(np.abs(np.asarray(x.alpha) - np.asarray(y.alpha))) +
                  np.max(np.abs(np.asarray(x.beta) - np.asarray(y.beta))))
            for x, y in zip(charts["numpy"], charts["cython"])
        )
    out = {"n_in": n_in, "n_pre": n_pre, "length": length, "sentences": sentences,
           "seconds_per_sentence": results, "max_abs_difference": agree,
           "default_backend": kernels.BACKEND}
    if "cython" in results:
        out["speedup"] = results["numpy"] / results["cython"]
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="compare kernel backends")
    ap.add_argument("--n-in", type=int, default=12)
    ap.add_argument("--n-pre", type=int, default=12)
    ap.add_argument("--vocab", type=int, default=20)
    ap.add_argument("--length", type=int, default=30)
    ap.add_argument("--sentences", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    rep = run(a.n_in, a.n_pre, a.vocab, a.length, a.sentences, a.repeat, a.seed)
    sys.stdout.write(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
