import json
import os
import subprocess
import sys

import pytest

from conftest import G0_TEXT, G1_TEXT
from pcfg_io import cli


@pytest.fixture
def work(tmp_path):
    (tmp_path / "g0.txt").write_text(G0_TEXT)
    (tmp_path / "g1.txt").write_text(G1_TEXT)
    old = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(old)


def run(*argv):
    return cli.main(list(argv))


def load(path):
    with open(path) as fh:
        return json.load(fh)


def test_gen_g0(work):
    assert run("gen", "--grammar", "g0.txt", "--count", "3", "--seed", "0",
               "--out", "c.txt", "--trees", "t.txt") == 0
    assert (work / "c.txt").read_text() == "a b\n" * 3
    assert (work / "t.txt").read_text() == "(ROOT (A a) (B b))\n" * 3
    meta = load("c.txt.meta.json")
    assert meta["lines"] == 3 and meta["kind"] == "corpus" and meta["format_version"] == 1
    assert meta["config"]["seed"] == 0 and "threads" not in meta["config"]
    assert not [p for p in os.listdir(work) if p.startswith(".tmp-")]


def test_eval_f1_self(work):
    run("gen", "--grammar", "g1.txt", "--count", "50", "--seed", "3", "--out", "c.txt", "--trees", "t.txt")
    for mode in ("sentence", "corpus"):
        assert run("eval-f1", "--gold", "t.txt", "--pred", "t.txt", "--mode", mode, "--out", "f.json") == 0
        d = load("f.json")
        assert d["f1"] == 1.0 and d["config"]["mode"] == mode


def test_parse_then_eval(work):
    run("gen", "--grammar", "g1.txt", "--count", "30", "--seed", "1", "--out", "c.txt", "--trees", "t.txt")
    assert run("parse", "--grammar", "g1.txt", "--corpus", "c.txt", "--out", "p.txt") == 0
    assert run("eval-f1", "--gold", "t.txt", "--pred", "p.txt", "--keep-singletons",
               "--keep-whole", "--out", "f.json") == 0
    assert load("f.json")["f1"] == 1.0       # leaves and root always match


def test_sim_verify_g1(work):
    assert run("sim-verify", "--grammar", "g1.txt", "--sentence", "x x y", "--mode", "relative",
               "--out", "v.json") == 0
    d = load("v.json")
    assert d["pass"] and d["modes"]["relative"]["alpha"]["max_abs"] <= 1e-9


def test_sim_verify_failure_is_exit_two(work):
    assert run("sim-verify", "--grammar", "g1.txt", "--sentence", "x x y", "--tol", "-1",
               "--out", "v.json") == 2


def test_sim_verify_memory_guard_is_input_error(work, capsys):
    assert run("sim-verify", "--grammar", "g1.txt", "--sentence", "x x y", "--memory-budget", "10",
               "--out", "v.json") == 1
    assert "bytes" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ("gen", "--grammar", "missing.txt", "--out", "c.txt"),
    ("gen", "--grammar", "g0.txt", "--out", "nodir/c.txt"),
    ("gen", "--grammar", "g0.txt", "--count", "-1", "--out", "c.txt"),
    ("eval-f1", "--gold", "missing.txt", "--pred", "missing.txt"),
    ("sim-verify", "--grammar", "g1.txt"),
])
def test_input_errors_exit_one(work, argv):
    assert run(*argv) == 1


def test_oov_and_bad_grammar(work, capsys):
    # corpus parsing keeps going past an OOV sentence; a single sentence does not
    (work / "c.txt").write_text("x q\nx y\n")
    assert run("parse", "--grammar", "g1.txt", "--corpus", "c.txt", "--out", "p.txt") == 0
    assert "1 sentences fell back" in capsys.readouterr().err
    assert run("sim-verify", "--grammar", "g1.txt", "--sentence", "x q") == 1
    (work / "bad.txt").write_text(G1_TEXT.replace("0.4", "0.3"))
    assert run("gen", "--grammar", "bad.txt", "--out", "c.txt") == 1


def test_config_precedence(work):
    (work / "cfg.json").write_text(json.dumps({"grammar": "g1.txt", "count": 4, "seed": 9}))
    assert run("gen", "--config", "cfg.json", "--count", "7", "--out", "c.txt") == 0
    meta = load("c.txt.meta.json")["config"]
    assert meta["count"] == 7 and meta["seed"] == 9 and meta["max_len"] == 64
    assert len((work / "c.txt").read_text().splitlines()) == 7
    (work / "bad.json").write_text("[1]")
    assert run("gen", "--config", "bad.json", "--out", "c.txt") == 1


def test_outputs_ignore_thread_count(work):
    for t in ("1", "4"):
        run("gen", "--grammar", "g1.txt", "--count", "200", "--seed", "5", "--threads", t,
            "--out", f"c{t}.txt", "--trees", "t.txt")
        run("mlm-ppl", "--grammar", "g1.txt", "--corpus", f"c{t}.txt", "--threads", t, "--out", f"m{t}.json")
    assert (work / "c1.txt").read_bytes() == (work / "c4.txt").read_bytes()
    a, b = load("m1.json"), load("m4.json")
    assert a["ppl"] == b["ppl"] and a["tokens_scored"] == b["tokens_scored"]


def test_freq_learn_and_approximate_ppl(work):
    run("gen", "--grammar", "g1.txt", "--count", "100", "--seed", "2", "--out", "c.txt", "--trees", "t.txt")
    assert run("freq", "--grammar", "g1.txt", "--trees", "t.txt", "--out", "f.json") == 0
    f = load("f.json")
    assert f["counts"]["ROOT"] == 100 and f["format_version"] == 1
    assert run("learn-w", "--grammar", "g1.txt", "--corpus", "c.txt", "--in-size", "2", "--pre-size", "1",
               "--freq", "f.json", "--rank", "1", "--out", "w.json") == 0
    w = load("w.json")
    assert set(w["lengths"]) == {"1", "2"} and all(v["k"] == 1 for v in w["lengths"].values())
    assert set(w["reconstruction_error"]) == {"1", "2"}
    assert run("mlm-ppl", "--grammar", "g1.txt", "--corpus", "c.txt", "--in-size", "2", "--pre-size", "1",
               "--freq", "f.json", "--bank", "w.json", "--out", "m.json") == 0
    m = load("m.json")
    assert m["transform_ranks"] == {"1": 1, "2": 1} and m["restriction"] == {"in_size": 2, "pre_size": 1}
    # a bank without its restriction is rejected
    assert run("mlm-ppl", "--grammar", "g1.txt", "--corpus", "c.txt", "--bank", "w.json") == 1


def test_attend_dist(work):
    (work / "c.txt").write_text("x x y\nx y\n")
    assert run("attend-dist", "--grammar", "g1.txt", "--corpus", "c.txt", "--out", "a.json") == 0
    d = load("a.json")
    assert d["config"]["normalization"] == "active"


def test_degrade(work):
    run("gen", "--grammar", "g1.txt", "--count", "60", "--seed", "4", "--out", "c.txt", "--trees", "t.txt")
    assert run("degrade", "--grammar", "g1.txt", "--corpus", "c.txt", "--trees", "t.txt", "--out", "d.json") == 0
    rows = load("d.json")["rows"]
    assert [r["name"] for r in rows] == ["exact", "top-half", "top-half-half-rank"]
    assert rows[0]["in_size"] == 2


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "pcfg_io.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sim-verify" in out.stdout
