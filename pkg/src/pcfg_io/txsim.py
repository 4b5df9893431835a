"""ReLU-attention networks whose forward pass computes Inside-Outside.

Two weight constructions are materialized.  The hard-attention model uses
width ``(4N+1)L``: inside values indexed by span start and by span end,
outside values likewise, and one-hot positions that gate attention to a
single key.  The relative-position model uses width ``2NL+1``: inside
values by span end, outside values by span start, and a constant-one
coordinate; relative key offsets and per-layer biases select the keys.

Layers 1..L-1 fill inside values of offsets 1..L-1, layer L seeds the
whole-sentence outside value and shifts the inside block by one position,
and layers L+1..2L-1 fill outside values of offsets L-2..0.

Weights are scipy CSR matrices.  The executor is shared by both modes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import chart
from .grammar import Grammar

FORMAT_VERSION = 1
MEMORY_BUDGET = 2 * 1024 ** 3
TOLERANCE = 1e-9


class ModelError(ValueError):
    pass


class MemoryBudgetError(ModelError):
    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"construction needs {required} bytes of dense weights; budget is {budget}")


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class CoordinateLayout:
    """Maps (quantity, symbol, span offset) or positions to coordinates."""

    mode: str
    N: int
    L: int

    @property
    def d(self) -> int:
        return (4 * self.N + 1) * self.L if self.mode == "hard" else 2 * self.N * self.L + 1

    @property
    def blocks(self) -> dict[str, tuple[int, int]]:
        NL = self.N * self.L
        if self.mode == "hard":
            return {"inside_start": (0, NL), "inside_end": (NL, 2 * NL),
                    "outside_start": (2 * NL, 3 * NL), "outside_end": (3 * NL, 4 * NL),
                    "position": (4 * NL, 4 * NL + self.L)}
        return {"inside_end": (0, NL), "outside_start": (NL, 2 * NL), "const": (2 * NL, 2 * NL + 1)}

    def coord(self, block: str, a: int = 0, k: int = 0) -> int:
        lo, hi = self.blocks[block]
        if block == "position":
            c = lo + a
        elif block == "const":
            c = lo
        else:
            if not (0 <= a < self.N and 0 <= k < self.L):
                raise IndexError(f"({a}, {k}) outside the layout")
            c = lo + self.N * k + a
        if not lo <= c < hi:
            raise IndexError(f"coordinate {c} outside block {block}")
        return c

    def to_dict(self) -> dict:
        return {"mode": self.mode, "N": self.N, "L": self.L, "d": self.d,
                "blocks": {k: list(v) for k, v in self.blocks.items()}}


# ---------------------------------------------------------------------------
# model


@dataclass
class Head:
    K: sp.csr_matrix
    Q: sp.csr_matrix
    V: sp.csr_matrix
    name: str = ""


@dataclass
class LayerSpec:
    """One attention layer.

    ``bias`` (relative mode) has ``2L+1`` entries indexed by ``t + L`` for key
    offset ``t = j - i``; ``use_positions`` says whether the shared relative
    vectors are added to keys.  ``post_add`` maps a sentence length to
    ``(position, coordinate, value)`` triples added after the heads;
    ``write_mask`` lists the coordinates cleared before the residual add.
    """

    index: int
    kind: str
    ell: int
    heads: list[Head]
    bias: np.ndarray | None = None
    use_positions: bool = True
    post_add: dict[int, list[tuple[int, int, float]]] = field(default_factory=dict)
    write_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass
class TransformerModel:
    mode: str
    L: int
    layout: CoordinateLayout
    layers: list[LayerSpec]
    zeta: float
    pos_vectors: np.ndarray | None = None  # (2L+1, d), row t + L

    @property
    def d(self) -> int:
        return self.layout.d

    def heads_per_layer(self) -> list[int]:
        return [len(layer.heads) for layer in self.layers]

    def structure(self) -> dict:
        return {"mode": self.mode, "L": self.L, "d": self.d, "layers": len(self.layers),
                "heads_per_layer": self.heads_per_layer(), "zeta": self.zeta}


def _sparse(d: int, entries: dict[tuple[int, int], float]) -> sp.csr_matrix:
    if not entries:
        return sp.csr_matrix((d, d))
    rows, cols = zip(*entries)
    return sp.csr_matrix((list(entries.values()), (rows, cols)), shape=(d, d))


def _add(entries, r, c, v):
    if v != 0.0:
        entries[(r, c)] = entries.get((r, c), 0.0) + float(v)


def dense_bytes(d: int, heads_per_layer: Sequence[int]) -> int:
    """Bytes of the K, Q, V matrices if stored densely in float64."""
    return 3 * d * d * 8 * int(sum(heads_per_layer))


def _guard(d: int, heads: Sequence[int], budget: int):
    need = dense_bytes(d, heads)
    if need > budget:
        raise MemoryBudgetError(need, budget)


def zeta_for(g: Grammar, L: int) -> float:
    return float(g.n_nt ** 2 * L + 1)


def hard_head_counts(N: int, L: int) -> list[int]:
    return [2 * N] * (L - 1) + [2] + [4 * N] * (L - 1)


def relative_head_counts(N: int, L: int) -> list[int]:
    return [N] * (L - 1) + [1] + [N] * (L - 1)


# ---------------------------------------------------------------------------
# hard-attention construction


def build_hard_model(g: Grammar, L: int, memory_budget: int = MEMORY_BUDGET) -> TransformerModel:
    """Hard-attention construction: width (4N+1)L, 2L-1 layers.

    Keys are the raw embeddings (K = I); each query matrix pairs one block
    of the query position with one block of the key position and adds
    ``-zeta`` on every position pair other than the intended key.  Values
    read the position one-hot, so each head deposits its attention sum.
    """
    if L < 1:
        raise ModelError("L must be positive")
    N, n_in = g.n_nt, g.n_in
    lay = CoordinateLayout("hard", N, L)
    d = lay.d
    _guard(d, hard_head_counts(N, L), memory_budget)
    zeta = zeta_for(g, L)
    ident = sp.identity(d, format="csr")
    P = g.binary
    IS = lambda a, k: lay.coord("inside_start", a, k)  # noqa: E731
    IE = lambda a, k: lay.coord("inside_end", a, k)  # noqa: E731
    OS = lambda a, k: lay.coord("outside_start", a, k)  # noqa: E731
    OE = lambda a, k: lay.coord("outside_end", a, k)  # noqa: E731
    POS = lambda p: lay.coord("position", p)  # noqa: E731

    def gate(entries, delta):
        for qi in range(L):
            for kj in range(L):
                if kj != qi + delta:
                    entries[(POS(kj), POS(qi))] = -zeta

    def deposit(target):
        return _sparse(d, {(target, POS(p)): 1.0 for p in range(L)})

    layers: list[LayerSpec] = []
    for ell in range(1, L):
        heads = []
        for a in range(N):
            start: dict = {}
            end: dict = {}
            if a < n_in:
                for l1 in range(ell):
                    l2 = ell - 1 - l1
                    for b in range(N):
                        for c in range(N):
                            _add(start, IE(c, l2), IS(b, l1), P[a, b, c])
                            _add(end, IS(b, l1), IE(c, l2), P[a, b, c])
            gate(start, ell)
            gate(end, -ell)
            heads.append(Head(ident, _sparse(d, start), deposit(IS(a, ell)), f"start:{g.names[a]}"))
            heads.append(Head(ident, _sparse(d, end), deposit(IE(a, ell)), f"end:{g.names[a]}"))
        layers.append(LayerSpec(ell, "inside", ell, heads))

    # layer L: seed β(ROOT,1,L') and shift both inside blocks by one position
    NL = N * L
    move_s = _sparse(d, {(POS(kj), POS(kj - 1)): 1.0 for kj in range(1, L)})
    move_e = _sparse(d, {(POS(kj), POS(kj + 1)): 1.0 for kj in range(L - 1)})
    copy_s = _sparse(d, {(c, c): 1.0 for c in range(0, NL)})
    copy_e = _sparse(d, {(c, c): 1.0 for c in range(NL, 2 * NL)})
    post = {n: [(1, OS(g.root, n - 1), 1.0), (n, OE(g.root, n - 1), 1.0)] for n in range(1, L + 1)}
    layers.append(LayerSpec(L, "init", L - 1,
                            [Head(ident, move_s, copy_s, "shift:start"),
                             Head(ident, move_e, copy_e, "shift:end")],
                            post_add=post, write_mask=np.arange(0, 2 * NL)))

    for r in range(L - 1):
        ell = L - 2 - r
        heads = []
        for a in range(N):
            h = [dict() for _ in range(4)]
            for m in range(L):
                mm = ell + 1 + m
                if mm >= L:
                    break
                for b in range(n_in):
                    for c in range(N):
                        _add(h[0], OE(b, mm), IE(c, m), P[b, c, a])
                        _add(h[1], IS(c, m), OS(b, mm), P[b, a, c])
                        _add(h[2], IE(c, m), OE(b, mm), P[b, c, a])
                        _add(h[3], OS(b, mm), IS(c, m), P[b, a, c])
            gate(h[0], ell)
            gate(h[1], ell)
            gate(h[2], -ell)
            gate(h[3], -ell)
            name = g.names[a]
            heads.append(Head(ident, _sparse(d, h[0]), deposit(OS(a, ell)), f"start-left:{name}"))
            heads.append(Head(ident, _sparse(d, h[1]), deposit(OS(a, ell)), f"start-right:{name}"))
            heads.append(Head(ident, _sparse(d, h[2]), deposit(OE(a, ell)), f"end-left:{name}"))
            heads.append(Head(ident, _sparse(d, h[3]), deposit(OE(a, ell)), f"end-right:{name}"))
        layers.append(LayerSpec(L + 1 + r, "outside", ell, heads))
    return TransformerModel("hard", L, lay, layers, zeta)


# ---------------------------------------------------------------------------
# relative-position construction


def build_relative_model(g: Grammar, L: int, memory_budget: int = MEMORY_BUDGET) -> TransformerModel:
    """Relative-position construction: width 2NL+1, 2L-1 layers, N heads per layer.

    The relative vector for offset ``t < 0`` lights inside block ``-t-1``
    and for ``t > 0`` outside block ``t-1``; with bias 1 inside the window
    this keeps exactly the key block aligned with the offset and clears the
    rest through the ReLU.  Bias ``zeta`` closes the window elsewhere.
    """
    if L < 1:
        raise ModelError("L must be positive")
    N, n_in = g.n_nt, g.n_in
    lay = CoordinateLayout("relative", N, L)
    d = lay.d
    _guard(d, relative_head_counts(N, L), memory_budget)
    zeta = zeta_for(g, L)
    P = g.binary
    NL = N * L
    IN = lambda a, k: lay.coord("inside_end", a, k)  # noqa: E731
    OUT = lambda a, k: lay.coord("outside_start", a, k)  # noqa: E731
    ONE = lay.coord("const")

    pos = np.zeros((2 * L + 1, d))
    for t in range(-L, L + 1):
        if t < 0:
            pos[t + L, N * (-t - 1): N * (-t)] = 1.0
        elif t > 0:
            pos[t + L, NL + N * (t - 1): NL + N * t] = 1.0
    offsets = np.arange(-L, L + 1)

    layers: list[LayerSpec] = []
    for ell in range(1, L):
        bias = np.where((offsets >= -ell) & (offsets <= -1), 1.0, zeta)
        kk = {}
        for blk in range(ell):
            for b in range(N):
                kk[(IN(b, blk), IN(b, ell - 1 - blk))] = 1.0
        K = _sparse(d, kk)
        heads = []
        for a in range(N):
            q: dict = {}
            if a < n_in:
                for blk in range(ell):
                    for b in range(N):
                        for c in range(N):
                            _add(q, IN(b, blk), IN(c, blk), P[a, b, c])
            heads.append(Head(K, _sparse(d, q), _sparse(d, {(IN(a, ell), ONE): 1.0}), g.names[a]))
        layers.append(LayerSpec(ell, "inside", ell, heads, bias))

    bias = np.where(offsets == -1, 0.0, zeta)
    one = _sparse(d, {(ONE, ONE): 1.0})
    move_v = _sparse(d, {(c, c): 1.0 for c in range(NL)})
    post = {n: [(1, OUT(g.root, n - 1), 1.0)] for n in range(1, L + 1)}
    layers.append(LayerSpec(L, "init", L - 1, [Head(one, one, move_v, "shift")], bias,
                            use_positions=False, post_add=post, write_mask=np.arange(NL)))

    for r in range(L - 1):
        ell = L - 2 - r
        bias = np.where((offsets >= 0) & (offsets <= ell + 1), zeta, 1.0)
        kk = {}
        for blk in range(L):
            if blk + ell + 1 < L:
                for b in range(N):
                    kk[(IN(b, blk), OUT(b, blk + ell + 1))] = 1.0
            if blk >= ell + 1:
                for c in range(N):
                    kk[(OUT(c, blk), IN(c, blk - ell - 1))] = 1.0
        K = _sparse(d, kk)
        heads = []
        for a in range(N):
            q: dict = {}
            for blk in range(L):
                for b in range(n_in):
                    for c in range(N):
                        _add(q, IN(b, blk), IN(c, blk), P[b, c, a])
                        if blk >= ell + 1:
                            _add(q, OUT(c, blk), OUT(b, blk), P[b, a, c])
            heads.append(Head(K, _sparse(d, q), _sparse(d, {(OUT(a, ell), ONE): 1.0}), g.names[a]))
        layers.append(LayerSpec(L + 1 + r, "outside", ell, heads, bias))
    return TransformerModel("relative", L, lay, layers, zeta, pos)


def build_model(g: Grammar, L: int, mode: str, memory_budget: int = MEMORY_BUDGET) -> TransformerModel:
    if mode == "hard":
        return build_hard_model(g, L, memory_budget)
    if mode == "relative":
        return build_relative_model(g, L, memory_budget)
    raise ModelError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# executor


@dataclass
class Trajectory:
    """Embeddings after every layer (index 0 is the input) and attention maps.

    ``attention[layer][head]`` is the post-ReLU score matrix with rows
    indexed by query position.  Relative-mode arrays have one extra row for
    the trailing slot.
    """

    embeddings: list[np.ndarray]
    attention: list[list[np.ndarray]]
    max_score: float

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION,
                "embeddings": [e.tolist() for e in self.embeddings]}


def initial_embeddings(model: TransformerModel, g: Grammar, words: Sequence[str],
                       mask: int | None = None) -> np.ndarray:
    ids = chart.word_ids(g, words, mask)
    n = len(ids)
    if n > model.L:
        raise ModelError(f"sentence of length {n} exceeds model length {model.L}")
    lay = model.layout
    # relative mode carries one trailing slot holding only the constant
    # coordinate, so the shifted inside value of a span ending at the last
    # word has a position to live in
    extra = 1 if lay.mode == "relative" else 0
    e = np.zeros((n + extra, model.d))
    if extra:
        e[n, lay.coord("const")] = 1.0
    for p, w in enumerate(ids):
        col = np.ones(g.n_pre) if w < 0 else g.lexical[:, w]
        for a in range(g.n_in, g.n_nt):
            v = col[a - g.n_in]
            if lay.mode == "hard":
                e[p, lay.coord("inside_start", a, 0)] = v
                e[p, lay.coord("inside_end", a, 0)] = v
            else:
                e[p, lay.coord("inside_end", a, 0)] = v
        if lay.mode == "hard":
            e[p, lay.coord("position", p)] = 1.0
        else:
            e[p, lay.coord("const")] = 1.0
    return e


def _scores(model: TransformerModel, layer: LayerSpec, head: Head, e: np.ndarray) -> np.ndarray:
    """Pre-ReLU (hard) or post-key-ReLU (relative) scores, rows = queries."""
    ke = (head.K @ e.T).T
    qe = (head.Q @ e.T).T
    if model.mode == "hard":
        return qe @ ke.T
    n = e.shape[0]
    L = model.L
    shift = -layer.bias[:, None]
    if layer.use_positions:
        shift = model.pos_vectors - layer.bias[:, None]  # subtract before adding to keys
    else:
        shift = np.broadcast_to(shift, (2 * L + 1, model.d))
    t = np.arange(n)[None, :] - np.arange(n)[:, None]       # t[i, j] = j - i
    z = np.maximum(ke[None, :, :] + shift[t + L], 0.0)       # (i, j, d)
    return np.einsum("ijd,id->ij", z, qe)


def forward(model: TransformerModel, g: Grammar, words: Sequence[str],
            mask: int | None = None, keep_attention: bool = False) -> Trajectory:
    e = initial_embeddings(model, g, words, mask)
    n = len(words)
    traj = [e]
    attn: list[list[np.ndarray]] = []
    top = 0.0
    for layer in model.layers:
        total = np.zeros_like(e)
        maps = []
        for head in layer.heads:
            s = _scores(model, layer, head, e)
            if s.size:
                top = max(top, float(s.max()))
            a = np.maximum(s, 0.0)
            total += a @ (head.V @ e.T).T
            if keep_attention:
                maps.append(a)
        new = e.copy()
        if layer.write_mask.size:
            new[:, layer.write_mask] = 0.0
        new += total
        for p, c, v in layer.post_add.get(n, ()):
            new[p - 1, c] += v
        e = new
        traj.append(e)
        attn.append(maps)
    return Trajectory(traj, attn, top)


def extract_chart(model: TransformerModel, trajectory: Trajectory, g: Grammar | None = None,
                  end_blocks: bool = False) -> chart.IOChart:
    """Read α (after the last inside layer) and β (final layer) into a chart.

    With ``end_blocks`` the hard model's end-indexed copies are read instead.
    """
    lay = model.layout
    N, L = lay.N, model.L
    inner = trajectory.embeddings[L - 1]
    final = trajectory.embeddings[-1]
    n = inner.shape[0] - (1 if lay.mode == "relative" else 0)
    a = np.zeros((n, n, N))
    b = np.zeros((n, n, N))
    for k in range(n):
        for i in range(n - k):
            j = i + k
            if lay.mode == "hard" and not end_blocks:
                a[i, j] = inner[i, lay.coord("inside_start", 0, k):lay.coord("inside_start", 0, k) + N]
                b[i, j] = final[i, lay.coord("outside_start", 0, k):lay.coord("outside_start", 0, k) + N]
            elif lay.mode == "hard":
                a[i, j] = inner[j, lay.coord("inside_end", 0, k):lay.coord("inside_end", 0, k) + N]
                b[i, j] = final[j, lay.coord("outside_end", 0, k):lay.coord("outside_end", 0, k) + N]
            else:
                a[i, j] = inner[j, lay.coord("inside_end", 0, k):lay.coord("inside_end", 0, k) + N]
                b[i, j] = final[i, lay.coord("outside_start", 0, k):lay.coord("outside_start", 0, k) + N]
    root = 0 if g is None else g.root
    n_in = 0 if g is None else g.n_in
    return chart.IOChart(n, a.transpose(2, 0, 1), b.transpose(2, 0, 1), None, "raw", None, root, n_in)


# ---------------------------------------------------------------------------
# verification


def _deviation(got: np.ndarray, ref: np.ndarray) -> dict:
    diff = np.abs(got - ref)
    nz = ref != 0
    rel = float((diff[nz] / np.abs(ref[nz])).max()) if nz.any() else 0.0
    zero_abs = float(diff[~nz].max()) if (~nz).any() else 0.0
    return {"max_abs": float(diff.max()) if diff.size else 0.0, "max_rel": rel,
            "max_abs_where_zero": zero_abs}


def expected_structure(mode: str, N: int, L: int) -> dict:
    if mode == "hard":
        return {"d": (4 * N + 1) * L, "layers": 2 * L - 1, "heads_per_layer": hard_head_counts(N, L)}
    return {"d": 2 * N * L + 1, "layers": 2 * L - 1, "heads_per_layer": relative_head_counts(N, L)}


def verify(g: Grammar, words: Sequence[str], L: int | None = None,
           modes: Sequence[str] = ("hard", "relative"), tol: float = TOLERANCE,
           memory_budget: int = MEMORY_BUDGET) -> dict:
    """Run the constructions, compare with the direct chart, report deviations."""
    L = len(words) if L is None else L
    ref = chart.io(g, words)
    ra, rb = np.asarray(ref.alpha), np.asarray(ref.beta)
    report = {"format_version": FORMAT_VERSION, "sentence": list(words), "L": L,
              "tolerance": tol, "modes": {}}
    ok_all = True
    for mode in modes:
        entry: dict = {}
        try:
            model = build_model(g, L, mode, memory_budget)
        except ModelError as exc:
            entry = {"error": str(exc), "pass": False}
            if isinstance(exc, MemoryBudgetError):
                entry["required_bytes"] = exc.required
            report["modes"][mode] = entry
            ok_all = False
            continue
        traj = forward(model, g, words)
        got = extract_chart(model, traj, g)
        entry["alpha"] = _deviation(np.asarray(got.alpha), ra)
        entry["beta"] = _deviation(np.asarray(got.beta), rb)
        if mode == "hard":
            end = extract_chart(model, traj, g, end_blocks=True)
            entry["alpha_end"] = _deviation(np.asarray(end.alpha), ra)
            entry["beta_end"] = _deviation(np.asarray(end.beta), rb)
        struct = model.structure()
        want = expected_structure(mode, g.n_nt, L)
        entry["structure"] = struct
        entry["structure_ok"] = all(struct[k] == v for k, v in want.items())
        entry["max_score"] = traj.max_score
        entry["zeta"] = model.zeta
        entry["zeta_ok"] = traj.max_score <= model.zeta / 2
        scale = max(float(np.abs(ra).max()), float(np.abs(rb).max()), 1.0)
        numeric = all(
            entry[q]["max_rel"] <= tol and entry[q]["max_abs_where_zero"] <= tol * scale
            for q in ("alpha", "beta", "alpha_end", "beta_end") if q in entry
        )
        entry["pass"] = bool(numeric and entry["structure_ok"] and entry["zeta_ok"])
        ok_all = ok_all and entry["pass"]
        report["modes"][mode] = entry
    report["pass"] = ok_all
    return report


def report_json(report: dict, config: dict | None = None) -> str:
    out = dict(report)
    if config is not None:
        out["config"] = config
    return json.dumps(out, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# attended distance


def averaged_attended_distance(model: TransformerModel, g: Grammar,
                               corpus: Sequence[Sequence[str]],
                               normalization: str = "active") -> list[list[float]]:
    """Mass-weighted mean |i - j| per head, averaged over sentences.

    Each attention row is normalized to sum to 1.  With ``"active"`` a
    sentence's value divides by its number of rows carrying mass, and only
    sentences with such rows enter the average; ``"length"`` divides by the
    sentence length and averages over all sentences.  A head that never
    attends scores 0.  Returns ``[layer][head]``.
    """
    if normalization not in ("active", "length"):
        raise ModelError(f"unknown normalization {normalization!r}")
    sums = [[0.0] * len(layer.heads) for layer in model.layers]
    counts = [[0] * len(layer.heads) for layer in model.layers]
    for words in corpus:
        traj = forward(model, g, words, keep_attention=True)
        n = len(words)
        rows = traj.embeddings[0].shape[0]
        dist = np.abs(np.arange(rows)[:, None] - np.arange(rows)[None, :])
        for li, maps in enumerate(traj.attention):
            for hi, a in enumerate(maps):
                mass = a.sum(axis=1)
                active = mass > 0
                if normalization == "active" and not active.any():
                    continue
                norm = np.zeros_like(a)
                norm[active] = a[active] / mass[active, None]
                total = float((norm * dist).sum())
                denom = int(active.sum()) if normalization == "active" else n
                sums[li][hi] += total / denom
                counts[li][hi] += 1
    return [[s / c if c else 0.0 for s, c in zip(srow, crow)] for srow, crow in zip(sums, counts)]
