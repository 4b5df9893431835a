"""Inside-Outside charts over one sentence.

The driver walks span offsets in increasing order for the inside pass and
in decreasing order for the outside pass; every offset is one kernel call
(see :mod:`pcfg_io.kernels`).  Between offsets the driver may zero
excluded symbols, apply a projection hook and rescale.

Two numeric modes are offered.  ``raw`` stores plain probabilities.
``scaled`` divides every span length by its largest entry and keeps the
log of that factor, so that long sentences do not underflow; stored values
are then ``alpha_hat = alpha * exp(-e[len])`` and ``beta_hat = beta *
exp(-f[len])``.

Time is O(|N|^2 |I| L^3) and space O(|N| L^2) per sentence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .grammar import Grammar

FORMAT_VERSION = 1
SCALE_MODES = ("raw", "scaled")
MASK_TOKEN = "[MASK]"

# hook(kind, ell, block) -> block; kind is "inside" or "outside", block is (n, n_in)
ProjectHook = Callable[[str, int, np.ndarray], np.ndarray]


class ChartError(ValueError):
    pass


class OOVError(ChartError):
    def __init__(self, token: str, position: int):
        self.token = token
        self.position = position
        super().__init__(f"token {token!r} at position {position} is not in the vocabulary")


@dataclass(frozen=True, eq=False)
class IOChart:
    """Inside/outside tables of one sentence.

    ``alpha`` and ``beta`` are ``(N, L, L)`` arrays indexed ``[A, i-1, j-1]``;
    in scaled mode they hold the rescaled values and ``log_scale`` maps
    ``"inside"``/``"outside"`` to the per-length log factors (index len-1).
    """

    L: int
    alpha: np.ndarray
    beta: np.ndarray | None
    mask: int | None = None
    scale_mode: str = "raw"
    log_scale: dict | None = None
    root: int = 0
    n_in: int = 0
    min_before_clamp: float | None = field(default=None)

    @property
    def root_value(self) -> float:
        """Stored α(ROOT,1,L); unscaled only in raw mode."""
        return float(self.alpha[self.root, 0, self.L - 1])

    @property
    def logprob(self) -> float:
        v = self.root_value
        if v <= 0.0:
            return -math.inf
        return math.log(v) + self._e(self.L)

    def _e(self, length: int) -> float:
        return 0.0 if self.log_scale is None else float(self.log_scale["inside"][length - 1])

    def _f(self, length: int) -> float:
        return 0.0 if self.log_scale is None else float(self.log_scale["outside"][length - 1])

    def inside_prob(self, a: int, i: int, j: int) -> float:
        """Unscaled α(a, i, j) with 1-based inclusive positions."""
        return float(self.alpha[a, i - 1, j - 1]) * math.exp(self._e(j - i + 1))

    def outside_prob(self, a: int, i: int, j: int) -> float:
        if self.beta is None:
            raise ChartError("outside pass not run")
        return float(self.beta[a, i - 1, j - 1]) * math.exp(self._f(j - i + 1))

    def _factors(self, key: str) -> np.ndarray:
        """(L, L) matrix of exp(log factor of span length)."""
        if self.log_scale is None:
            return np.ones((self.L, self.L))
        logs = np.asarray(self.log_scale[key])
        i, j = np.indices((self.L, self.L))
        length = np.clip(j - i, 0, None)
        return np.where(j >= i, np.exp(logs[length]), 0.0)

    def unscaled_alpha(self) -> np.ndarray:
        return self.alpha * self._factors("inside")[None]

    def unscaled_beta(self) -> np.ndarray:
        if self.beta is None:
            raise ChartError("outside pass not run")
        return self.beta * self._factors("outside")[None]

    def to_dict(self, g: Grammar | None = None) -> dict:
        out = {
            "format_version": FORMAT_VERSION,
            "L": self.L,
            "mask": self.mask,
            "scale_mode": self.scale_mode,
            "log_scale": None if self.log_scale is None else
            {k: [float(x) for x in v] for k, v in self.log_scale.items()},
            "alpha": self.alpha.tolist(),
            "beta": None if self.beta is None else self.beta.tolist(),
        }
        if g is not None:
            out["symbols"] = list(g.names)
        return out

    def to_json(self, g: Grammar | None = None) -> str:
        return json.dumps(self.to_dict(g), sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# driver


def word_ids(g: Grammar, words: Sequence[str], mask: int | None = None) -> list[int]:
    """Vocabulary ids; the masked position gets -1."""
    if len(words) == 0:
        raise ChartError("empty sentence")
    if mask is not None and not 1 <= mask <= len(words):
        raise ChartError(f"mask position {mask} outside 1..{len(words)}")
    ids = []
    for p, w in enumerate(words, start=1):
        if p == mask:
            ids.append(-1)
            continue
        if not g.has_word(w):
            raise OOVError(w, p)
        ids.append(g.word_id(w))
    return ids


def _normalize(block: np.ndarray, log_base: float) -> tuple[np.ndarray, float]:
    m = float(block.max()) if block.size else 0.0
    if m <= 0.0:
        return block, 0.0
    return block / m, log_base + math.log(m)


def _inside_pass(g, ids, scaled, keep_in, project):
    L, N, n_in = len(ids), g.n_nt, g.n_in
    a = np.zeros((L, L, N))
    lex = g.lexical
    for p, w in enumerate(ids):
        a[p, p, n_in:] = 1.0 if w < 0 else lex[:, w]
    e = np.zeros(L)
    idx = np.arange(L)
    if scaled:
        block, e[0] = _normalize(a[idx, idx, n_in:], 0.0)
        a[idx, idx, n_in:] = block
    rules = g.binary
    keep = np.ones(n_in) if keep_in is None else np.asarray(keep_in, dtype=float)
    min_seen = math.inf
    for ell in range(1, L):
        if scaled:
            logs = np.array([e[t] + e[ell - t - 1] for t in range(ell)])
            top = logs.max()
            w = np.exp(logs - top)
        else:
            top = 0.0
            w = np.ones(ell)
        kernels.inside_span(a, rules, ell, w, keep)
        n = L - ell
        if project is not None:
            sel = (idx[:n], idx[:n] + ell)
            block, low = project("inside", ell, a[sel[0], sel[1], :n_in])
            a[sel[0], sel[1], :n_in] = block
            min_seen = min(min_seen, low)
        if scaled:
            sel = (idx[:n], idx[:n] + ell)
            block, e[ell] = _normalize(a[sel[0], sel[1], :n_in], top)
            a[sel[0], sel[1], :n_in] = block
    return a, e, min_seen


def _outside_pass(g, a, e, scaled, keep_long, keep_leaf, project):
    L, _, N = a.shape
    n_in = g.n_in
    b = np.zeros((L, L, N))
    b[0, L - 1, g.root] = 1.0
    f = np.zeros(L)
    as_right = g.as_right_child
    as_left = g.as_left_child
    k_long = np.ones(N) if keep_long is None else np.asarray(keep_long, dtype=float)
    k_leaf = np.ones(N) if keep_leaf is None else np.asarray(keep_leaf, dtype=float)
    idx = np.arange(L)
    min_seen = math.inf
    for ell in range(L - 2, -1, -1):
        s = ell + 1
        if scaled:
            logs = np.array([f[s + c - 1] + e[c - 1] for c in range(1, L - ell)] + [-math.inf] * ell)
            top = logs[: L - s].max()
            w = np.exp(logs - top)
        else:
            top = 0.0
            w = np.ones(L)
        kernels.outside_span(b, a, as_right, as_left, ell, w, k_leaf if ell == 0 else k_long)
        n = L - ell
        if project is not None and ell >= 1:
            sel = (idx[:n], idx[:n] + ell)
            block, low = project("outside", ell, b[sel[0], sel[1], :n_in])
            b[sel[0], sel[1], :n_in] = block
            min_seen = min(min_seen, low)
        if scaled:
            sel = (idx[:n], idx[:n] + ell)
            block, f[ell] = _normalize(b[sel[0], sel[1]], top)
            b[sel[0], sel[1]] = block
    return b, f, min_seen


def run_io(g: Grammar, words: Sequence[str], *, mask: int | None = None,
           scale_mode: str = "raw", outside: bool = True,
           keep_in=None, keep_long=None, keep_leaf=None,
           project=None) -> IOChart:
    """Shared inside/outside driver.

    ``keep_in`` (length ``n_in``) multiplies inside values of spans of two or
    more tokens; ``keep_long`` and ``keep_leaf`` (length ``N``) multiply
    outside values of long spans and of single tokens.  ``project(kind, ell,
    block)`` returns ``(new_block, min_before_clamp)`` and is applied to
    in-terminal vectors after each offset ``ell >= 1``, except the
    whole-sentence outside vector.
    """
    if scale_mode not in SCALE_MODES:
        raise ChartError(f"unknown scale mode {scale_mode!r}")
    scaled = scale_mode == "scaled"
    ids = word_ids(g, words, mask)
    a, e, low_in = _inside_pass(g, ids, scaled, keep_in, project)
    b = f = None
    low_out = math.inf
    if outside:
        b, f, low_out = _outside_pass(g, a, e, scaled, keep_long, keep_leaf, project)
    low = min(low_in, low_out)
    return _wrap(g, a, b, e, f, mask, scale_mode, None if math.isinf(low) else low)


def _wrap(g, a, b, e, f, mask, scale_mode, low):
    a.flags.writeable = False
    alpha = a.transpose(2, 0, 1)
    beta = None
    if b is not None:
        b.flags.writeable = False
        beta = b.transpose(2, 0, 1)
    logs = None
    if scale_mode == "scaled":
        logs = {"inside": e.copy()}
        if f is not None:
            logs["outside"] = f.copy()
    return IOChart(a.shape[0], alpha, beta, mask, scale_mode, logs, g.root, g.n_in, low)


def inside(g: Grammar, words: Sequence[str], mask: int | None = None,
           scale_mode: str = "raw") -> IOChart:
    """Chart with the inside table filled."""
    return run_io(g, words, mask=mask, scale_mode=scale_mode, outside=False)


def outside(g: Grammar, chart: IOChart) -> IOChart:
    """Add the outside table to an inside-only chart."""
    a = np.ascontiguousarray(chart.alpha.transpose(1, 2, 0))
    scaled = chart.scale_mode == "scaled"
    e = np.asarray(chart.log_scale["inside"]) if scaled else np.zeros(chart.L)
    b, f, _ = _outside_pass(g, a, e, scaled, None, None, None)
    return _wrap(g, a, b, e, f, chart.mask, chart.scale_mode, chart.min_before_clamp)


def io(g: Grammar, words: Sequence[str], mask: int | None = None,
       scale_mode: str = "raw") -> IOChart:
    """Both passes."""
    return run_io(g, words, mask=mask, scale_mode=scale_mode)


def marginals(g: Grammar, chart: IOChart) -> np.ndarray:
    """μ = αβ as an (N, L, L) array.

    Scaled charts return ``alpha_hat * beta_hat * exp(e[len] + f[len] - e[L])``,
    so that dividing by the stored root value gives the exact posterior.
    """
    if chart.beta is None:
        raise ChartError("outside pass not run")
    mu = chart.alpha * chart.beta
    if chart.scale_mode == "scaled":
        e = np.asarray(chart.log_scale["inside"])
        f = np.asarray(chart.log_scale["outside"])
        L = chart.L
        i, j = np.indices((L, L))
        length = np.clip(j - i, 0, None)
        corr = np.where(j >= i, np.exp(e[length] + f[length] - e[L - 1]), 0.0)
        mu = mu * corr[None]
    return mu


def posteriors(g: Grammar, chart: IOChart) -> np.ndarray:
    """μ(A,i,j) / α(ROOT,1,L); all zeros for an underivable sentence."""
    z = chart.root_value
    mu = marginals(g, chart)
    if z <= 0.0:
        return np.zeros_like(mu)
    return mu / z


def sentence_logprob(g: Grammar, words: Sequence[str], scale_mode: str = "raw") -> float:
    return inside(g, words, scale_mode=scale_mode).logprob
