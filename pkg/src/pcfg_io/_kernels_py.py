"""Pure-numpy span kernels; the fallback when the compiled core is absent.

Charts passed here use the internal ``(L, L, N)`` layout, 0-based, so
``alpha[i, j, A]`` holds the inside value of ``A`` over tokens ``i..j``.
Every kernel fills all spans of one offset ``ell = j - i`` in place.
"""

from __future__ import annotations

import numpy as np


def inside_span(alpha, rules, ell, split_w, keep):
    """Inside values of every in-terminal over spans of offset ``ell``.

    ``rules`` is ``(n_in, N, N)``; ``split_w[t]`` weights the split whose
    left part has offset ``t``; ``keep`` multiplies the result per in-terminal.
    """
    L, _, N = alpha.shape
    n_in = rules.shape[0]
    n = L - ell
    ii = np.arange(n)[:, None]
    tt = np.arange(ell)[None, :]
    left = alpha[ii, ii + tt]                # (n, ell, N)
    right = alpha[ii + tt + 1, ii + ell]     # (n, ell, N)
    pair = np.einsum("itb,itc,t->ibc", left, right, split_w)
    out = pair.reshape(n, N * N) @ rules.reshape(n_in, N * N).T
    idx = np.arange(n)
    alpha[idx, idx + ell, :n_in] = out * keep


def outside_span(beta, alpha, as_right, as_left, ell, sib_w, keep):
    """Outside values of every symbol over spans of offset ``ell``.

    ``as_right[A, B, C] = Pr[B -> C A]`` and ``as_left[A, B, C] = Pr[B -> A C]``;
    ``sib_w[c - 1]`` weights every term whose sibling covers ``c`` tokens.
    """
    L, _, N = alpha.shape
    n_in = as_right.shape[1]
    n = L - ell
    from_left = np.zeros((n, n_in, N))
    from_right = np.zeros((n, n_in, N))
    for c in range(1, L - ell):
        w = sib_w[c - 1]
        # sibling (i-c .. i-1) on the left, parent (i-c .. j)
        i = np.arange(c, n)
        if i.size:
            from_left[i] += w * np.einsum(
                "sb,sc->sbc", beta[i - c, i + ell, :n_in], alpha[i - c, i - 1])
        # sibling (j+1 .. j+c) on the right, parent (i .. j+c)
        i = np.arange(0, n - c)
        if i.size:
            j = i + ell
            from_right[i] += w * np.einsum(
                "sb,sc->sbc", beta[i, j + c, :n_in], alpha[j + 1, j + c])
    out = from_left.reshape(n, n_in * N) @ as_right.reshape(N, n_in * N).T
    out += from_right.reshape(n, n_in * N) @ as_left.reshape(N, n_in * N).T
    idx = np.arange(n)
    beta[idx, idx + ell] = out * keep
