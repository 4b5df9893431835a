"""Command-line entry point: ``pcfg-io <subcommand> [flags]``.

Every run parameter is a flag; ``--config file.json`` supplies defaults for
any of them (keys use underscores).  Flags win over the config file, which
wins over built-in defaults.  JSON artifacts embed the merged config and a
format version; text artifacts get a ``<path>.meta.json`` sidecar.

Exit status: 0 on success, 1 on bad input, 2 when an internal check fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import traceback
import warnings
from typing import Any, Sequence

import numpy as np

from . import approx, chart, kernels, mlm, parse_eval, sampler, txsim
from .grammar import GrammarError, load_grammar
from .parallel import pmap, thread_pool
from .trees import TreeError, bracket_spans, format_tree, read_corpus, read_trees

FORMAT_VERSION = 1


class InputError(Exception):
    pass


class InvariantError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def write_atomic(path: str, text: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: str | None, obj: dict) -> None:
    text = dump_json(obj)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        write_atomic(path, text)


def write_lines(path: str, lines: Sequence[str], config: dict, kind: str) -> None:
    write_atomic(path, "".join(line + "\n" for line in lines))
    meta = {"format_version": FORMAT_VERSION, "kind": kind, "lines": len(lines), "config": config}
    write_atomic(path + ".meta.json", dump_json(meta))


def read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def need_file(path: str | None, flag: str) -> str:
    if path is None:
        raise InputError(f"{flag} is required")
    if not os.path.isfile(path):
        raise InputError(f"{flag}: no such file {path}")
    return path


def need_out(path: str | None, flag: str) -> str | None:
    if path is None or path == "-":
        return path
    folder = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(folder):
        raise InputError(f"{flag}: directory {folder} does not exist")
    return path


def grammar_from(cfg: dict):
    text = read_text(need_file(cfg.get("grammar"), "--grammar"))
    return load_grammar(text, renormalize=bool(cfg.get("renormalize")))


def corpus_from(path: str | None, flag: str = "--corpus") -> list[list[str]]:
    return read_corpus(read_text(need_file(path, flag)).splitlines())


# ---------------------------------------------------------------------------
# restriction helpers


def restriction_from(cfg: dict, g, trees=None):
    """RestrictionSpec from --in-size/--pre-size over a frequency table, or None."""
    k_in, k_pre = cfg.get("in_size"), cfg.get("pre_size")
    if k_in is None and k_pre is None:
        return None
    freq = frequency_from(cfg, g, trees)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return approx.select_subsets(freq, k_in or g.n_in, k_pre or g.n_pre, g.root)


def frequency_from(cfg: dict, g, trees=None):
    if cfg.get("freq"):
        d = json.loads(read_text(need_file(cfg["freq"], "--freq")))
        counts = d.get("counts", d)
        arr = np.array([int(counts.get(n, 0)) for n in g.names], dtype=np.int64)
        return approx.FrequencyTable(g.names, g.n_in, arr)
    if trees is None:
        path = cfg.get("freq_trees") or cfg.get("trees")
        if path is None:
            raise InputError("restriction needs --freq or --freq-trees")
        _, trees = read_trees(g, read_text(need_file(path, "--freq-trees")).splitlines())
    return approx.span_frequencies(trees, g)


def bank_from(cfg: dict, g, r):
    if not cfg.get("bank"):
        return None
    bank = approx.TransformBank.from_json(g, read_text(need_file(cfg["bank"], "--bank")))
    if r is None:
        raise InputError("--bank needs the restriction it was trained for (--in-size/--pre-size)")
    if tuple(bank.in_subset) != tuple(r.in_subset):
        raise InputError("--bank was trained for a different in-terminal subset")
    return bank


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    out = need_out(cfg.get("out"), "--out")
    trees_out = need_out(cfg.get("trees"), "--trees")
    if out is None:
        raise InputError("--out is required")
    count = int(cfg["count"])
    if count < 0:
        raise InputError("--count must be non-negative")
    words, trees = sampler.sample_corpus(g, count, int(cfg["seed"]), int(cfg["max_len"]), pool)
    write_lines(out, [" ".join(w) for w in words], echo(cfg), "corpus")
    if trees_out:
        write_lines(trees_out, [format_tree(g, w, t) for w, t in zip(words, trees)], echo(cfg), "trees")
    return 0


def _parse_sentence(g, words, io_fn):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return parse_eval.labelled_recall(g, words, io_fn)
        except chart.ChartError as exc:
            return parse_eval._right_branching_tree(g, len(words), str(exc))


def cmd_parse(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    corpus = corpus_from(cfg.get("corpus"))
    out = need_out(cfg.get("out"), "--out")
    if out is None:
        raise InputError("--out is required")
    r = restriction_from(cfg, g)
    bank = bank_from(cfg, g, r)
    mode = cfg["scale_mode"]
    if r is None:
        io_fn = lambda gg, w: chart.io(gg, w, scale_mode=mode)  # noqa: E731
    elif bank is None:
        io_fn = lambda gg, w: approx.restricted_io(gg, w, r, scale_mode=mode)  # noqa: E731
    else:
        io_fn = lambda gg, w: approx.approx_io(gg, w, r, bank, scale_mode=mode)  # noqa: E731
    trees = pmap(lambda w: _parse_sentence(g, w, io_fn), corpus, pool)
    write_lines(out, [format_tree(g, w, t) for w, t in zip(corpus, trees)], echo(cfg), "trees")
    fallbacks = sum(1 for t in trees if t.warning)
    if fallbacks:
        print(f"parse: {fallbacks} sentences fell back to right branching", file=sys.stderr)
    return 0


def _span_sets(path: str, flag: str) -> list[parse_eval.SpanSet]:
    out = []
    for n, line in enumerate(read_text(need_file(path, flag)).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            L, spans = bracket_spans(line)
        except TreeError as exc:
            raise InputError(f"{path}:{n}: {exc}") from None
        out.append(parse_eval.SpanSet(L, frozenset(spans)))
    return out


def cmd_eval_f1(cfg: dict, pool) -> int:
    gold = _span_sets(cfg.get("gold"), "--gold")
    pred = _span_sets(cfg.get("pred"), "--pred")
    out = need_out(cfg.get("out"), "--out")
    policy = parse_eval.EvalPolicy(not cfg["keep_singletons"], not cfg["keep_whole"],
                                   float(cfg["empty_f1"]))
    rep = parse_eval.evaluate(gold, pred, cfg["mode"], policy)
    write_json(out, {"format_version": FORMAT_VERSION, **rep.to_dict(), "config": echo(cfg)})
    return 0


def cmd_mlm_ppl(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    corpus = corpus_from(cfg.get("corpus"))
    out = need_out(cfg.get("out"), "--out")
    r = restriction_from(cfg, g)
    bank = bank_from(cfg, g, r)
    rep = mlm.one_mask_perplexity(g, corpus, r, bank, pool=pool)
    doc = {"format_version": FORMAT_VERSION, **rep.to_dict(), "config": echo(cfg),
           "restriction": None if r is None else {"in_size": len(r.in_subset), "pre_size": len(r.pre_subset)},
           "transform_ranks": None if bank is None else {str(k): v for k, v in bank.ranks().items()}}
    write_json(out, doc)
    return 0


def cmd_freq(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    _, trees = read_trees(g, read_text(need_file(cfg.get("trees"), "--trees")).splitlines())
    out = need_out(cfg.get("out"), "--out")
    f = approx.span_frequencies(trees, g)
    write_json(out, json.loads(f.to_json(echo(cfg))))
    return 0


def _ranks(cfg: dict):
    if cfg.get("ranks"):
        spec = cfg["ranks"]
        val = json.loads(spec) if isinstance(spec, str) else spec
        if isinstance(val, dict):
            return {int(k): int(v) for k, v in val.items()}
        return int(val)
    return None if cfg.get("rank") is None else int(cfg["rank"])


def cmd_learn_w(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    corpus = corpus_from(cfg.get("corpus"))
    out = need_out(cfg.get("out"), "--out")
    r = restriction_from(cfg, g) or approx.full_restriction(g)
    bank = approx.learn_transforms(g, corpus, r, _ranks(cfg), source=cfg["source"], pool=pool)
    doc = bank.to_dict()
    doc["config"] = echo(cfg)
    doc["skipped_sentences"] = bank.skipped
    doc["reconstruction_error"] = {str(k): bank.reconstruction_error(k) for k in sorted(bank.transforms)}
    write_json(out, doc)
    return 0


def cmd_sim_verify(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    if cfg.get("sentence") is None:
        raise InputError("--sentence is required")
    words = cfg["sentence"].split()
    out = need_out(cfg.get("out"), "--out")
    modes = ("hard", "relative") if cfg["mode"] == "both" else (cfg["mode"],)
    L = cfg.get("L") or len(words)
    rep = txsim.verify(g, words, L, modes, float(cfg["tol"]), int(cfg["memory_budget"]))
    for m, entry in rep["modes"].items():
        if "required_bytes" in entry:
            raise InputError(entry["error"])
    rep["config"] = echo(cfg)
    write_json(out, rep)
    if not rep["pass"]:
        raise InvariantError("construction output deviates from the chart")
    return 0


def cmd_attend_dist(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    corpus = corpus_from(cfg.get("corpus"))
    out = need_out(cfg.get("out"), "--out")
    L = cfg.get("L") or max((len(w) for w in corpus), default=1)
    model = txsim.build_model(g, L, cfg["mode"], int(cfg["memory_budget"]))
    corpus = [w for w in corpus if len(w) <= L]
    ad = txsim.averaged_attended_distance(model, g, corpus, cfg["normalization"])
    layers = [{"layer": spec.index, "kind": spec.kind, "offset": spec.ell,
               "heads": {h.name: v for h, v in zip(spec.heads, row)}}
              for spec, row in zip(model.layers, ad)]
    write_json(out, {"format_version": FORMAT_VERSION, "config": echo(cfg), "sentences": len(corpus),
                     "layers": layers})
    return 0


DEFAULT_CONFIGS = [
    {"name": "exact"},
    {"name": "top-half", "in_frac": 0.5, "pre_frac": 0.5},
    {"name": "top-half-half-rank", "in_frac": 0.5, "pre_frac": 0.5, "rank_frac": 0.5},
]


def _size(spec: dict, key: str, frac_key: str, full: int) -> int | None:
    if spec.get(key) is not None:
        return int(spec[key])
    if spec.get(frac_key) is not None:
        return max(1, int(round(float(spec[frac_key]) * full)))
    return None


def build_configs(g, specs, freq, train_corpus, pool) -> list[approx.ApproxConfig]:
    out = []
    for spec in specs:
        name = spec.get("name") or f"config{len(out)}"
        k_in = _size(spec, "in_size", "in_frac", g.n_in)
        k_pre = _size(spec, "pre_size", "pre_frac", g.n_pre)
        if k_in is None and k_pre is None and spec.get("rank") is None and spec.get("rank_frac") is None:
            out.append(approx.ApproxConfig(name))
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = approx.select_subsets(freq, k_in or g.n_in, k_pre or g.n_pre, g.root)
        bank = None
        rank = _size(spec, "rank", "rank_frac", len(r.in_subset))
        if rank is not None:
            bank = approx.learn_transforms(g, train_corpus, r, rank, pool=pool)
        out.append(approx.ApproxConfig(name, r, bank))
    return out


def cmd_degrade(cfg: dict, pool) -> int:
    g = grammar_from(cfg)
    corpus = corpus_from(cfg.get("corpus"))
    _, gold = read_trees(g, read_text(need_file(cfg.get("trees"), "--trees")).splitlines())
    if len(gold) != len(corpus):
        raise InputError("--corpus and --trees differ in sentence count")
    out = need_out(cfg.get("out"), "--out")
    specs = cfg.get("configs") or DEFAULT_CONFIGS
    if isinstance(specs, str):
        specs = json.loads(read_text(specs) if os.path.isfile(specs) else specs)
    freq = frequency_from(cfg, g, gold if not (cfg.get("freq") or cfg.get("freq_trees")) else None)
    train = corpus_from(cfg["train_corpus"], "--train-corpus") if cfg.get("train_corpus") else corpus
    ppl_corpus = corpus[: int(cfg["ppl_sentences"])] if cfg.get("ppl_sentences") else corpus
    configs = build_configs(g, specs, freq, train, pool)
    policy = parse_eval.EvalPolicy(not cfg["keep_singletons"], not cfg["keep_whole"],
                                   float(cfg["empty_f1"]))
    rows = approx.degradation_report(g, corpus, gold, configs, policy, ppl_corpus, pool)
    write_json(out, {"format_version": FORMAT_VERSION, "config": echo(cfg), "rows": rows})
    return 0


# ---------------------------------------------------------------------------
# parser


COMMON_DEFAULTS = {"threads": None, "renormalize": False}


COMMANDS = {
    "gen": (cmd_gen, {"count": 1, "seed": 0, "max_len": sampler.DEFAULT_MAX_LEN}),
    "parse": (cmd_parse, {"scale_mode": "raw"}),
    "eval-f1": (cmd_eval_f1, {"mode": "sentence", "keep_singletons": False, "keep_whole": False,
                              "empty_f1": 1.0}),
    "mlm-ppl": (cmd_mlm_ppl, {}),
    "freq": (cmd_freq, {}),
    "learn-w": (cmd_learn_w, {"source": "restricted"}),
    "sim-verify": (cmd_sim_verify, {"mode": "both", "tol": txsim.TOLERANCE,
                                    "memory_budget": txsim.MEMORY_BUDGET}),
    "attend-dist": (cmd_attend_dist, {"mode": "relative", "normalization": "active",
                                      "memory_budget": txsim.MEMORY_BUDGET}),
    "degrade": (cmd_degrade, {"keep_singletons": False, "keep_whole": False, "empty_f1": 1.0}),
}


def _flag(p, *names, **kw):
    p.add_argument(*names, default=argparse.SUPPRESS, **kw)


def _restriction_flags(p):
    _flag(p, "--in-size", type=int, help="number of in-terminals kept (root included)")
    _flag(p, "--pre-size", type=int, help="number of pre-terminals kept")
    _flag(p, "--freq", help="frequency table JSON from the freq subcommand")
    _flag(p, "--freq-trees", help="gold trees used to rank symbols")


def _policy_flags(p):
    _flag(p, "--keep-singletons", action="store_true")
    _flag(p, "--keep-whole", action="store_true", help="score the whole-sentence span")
    _flag(p, "--empty-f1", type=float, help="per-sentence F1 when both span sets are empty")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcfg-io", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _flag(p, "--config", help="JSON file with default flag values")
        _flag(p, "--threads", type=int, help="worker threads (1 = reproducibility profile)")
        if name != "eval-f1":
            _flag(p, "--grammar", help="grammar file")
            _flag(p, "--renormalize", action="store_true",
                  help="renormalize rule rows that are off by less than 1e-3")
        _flag(p, "--out", help="output path (JSON subcommands default to stdout)")
        if name == "gen":
            _flag(p, "--count", type=int)
            _flag(p, "--seed", type=int)
            _flag(p, "--max-len", type=int)
            _flag(p, "--trees", help="gold tree output path")
        if name in ("parse", "mlm-ppl", "learn-w", "attend-dist", "degrade"):
            _flag(p, "--corpus", help="one sentence per line")
        if name in ("parse", "mlm-ppl", "learn-w", "degrade"):
            _restriction_flags(p)
        if name in ("parse", "mlm-ppl"):
            _flag(p, "--bank", help="transform bank JSON from learn-w")
        if name == "parse":
            _flag(p, "--scale-mode", choices=chart.SCALE_MODES)
        if name == "eval-f1":
            _flag(p, "--gold")
            _flag(p, "--pred")
            _flag(p, "--mode", choices=("sentence", "corpus"))
        if name in ("eval-f1", "degrade"):
            _policy_flags(p)
        if name == "freq":
            _flag(p, "--trees")
        if name == "learn-w":
            _flag(p, "--rank", type=int, help="rank for every span offset")
            _flag(p, "--ranks", help="JSON offset->rank map or single int")
            _flag(p, "--source", choices=("restricted", "exact"),
                  help="which charts supply the training marginals")
        if name in ("sim-verify", "attend-dist"):
            _flag(p, "--L", type=int, help="model length (default: sentence or corpus maximum)")
            _flag(p, "--memory-budget", type=int, help="bytes of dense weights allowed")
        if name == "sim-verify":
            _flag(p, "--sentence")
            _flag(p, "--mode", choices=("hard", "relative", "both"))
            _flag(p, "--tol", type=float)
        if name == "attend-dist":
            _flag(p, "--mode", choices=("hard", "relative"))
            _flag(p, "--normalization", choices=("active", "length"))
        if name == "degrade":
            _flag(p, "--trees", help="gold trees aligned with --corpus")
            _flag(p, "--configs", help="JSON list (or file) of {name, in_size|in_frac, "
                                       "pre_size|pre_frac, rank|rank_frac}")
            _flag(p, "--train-corpus", help="corpus for learning transforms (default --corpus)")
            _flag(p, "--ppl-sentences", type=int, help="score perplexity on the first N sentences")
    return ap


def merge_config(command: str, given: dict) -> dict:
    cfg = {**COMMON_DEFAULTS, **COMMANDS[command][1]}
    if "config" in given:
        path = given["config"]
        try:
            with open(path, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"--config {path}: {exc}") from None
        if not isinstance(from_file, dict):
            raise InputError("--config must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in from_file.items()})
    cfg.update({k: v for k, v in given.items() if k != "config"})
    cfg["command"] = command
    return dict(sorted(cfg.items()))


def echo(cfg: dict) -> dict:
    """Config as recorded in artifacts; thread count is left out so outputs
    do not depend on it."""
    return {k: v for k, v in cfg.items() if k != "threads"}


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = vars(ap.parse_args(argv))
    command = args.pop("command")
    fn = COMMANDS[command][0]
    try:
        cfg = merge_config(command, args)
        with thread_pool(cfg.get("threads")) as pool:
            return fn(cfg, pool)
    except InvariantError as exc:
        print(f"pcfg-io {command}: invariant failure: {exc}", file=sys.stderr)
        return 2
    except (InputError, GrammarError, TreeError, chart.ChartError, parse_eval.EvalError,
            approx.ApproxError, txsim.ModelError, sampler.SamplingError, mlm.UndefinedConditional,
            ValueError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"pcfg-io {command}: {msg}", file=sys.stderr)
        return 1
    except Exception:  # pragma: no cover - reported as an internal failure
        traceback.print_exc()
        return 2


def backend() -> str:
    return kernels.BACKEND


if __name__ == "__main__":
    sys.exit(main())
