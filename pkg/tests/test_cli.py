import json
import os
import random
import subprocess
import sys
import time

import pytest

from sqe import cli
from sqe.cli import RunConfig, UnsupportedFragment, cmd_compile, cmd_decide, decide, main
from sqe.interp import parse_interp, serialize_interp
from sqe.kb import parse_kb
from sqe.mosaic import ENTAILED, NOT_ENTAILED, UNKNOWN, InstanceVerdict
from sqe.query import parse_query_file

from conftest import DATA

CURATED = DATA / "curated"


def curated_cases():
    out = []
    for line in (CURATED / "verdicts.txt").read_text().splitlines():
        body = line.split("#")[0].split()
        if body:
            name, expect, answers = body
            out.append((name, expect, tuple(a for a in answers.split(",") if a != "-")))
    return out


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "sqe.cli", *args], capture_output=True, text=True, cwd=cwd)


# ---------------------------------------------------------------- decide

def test_entailed_answer(tmp_path):
    kb = write(tmp_path, "k.kb", "assert A(a)\n")
    q = write(tmp_path, "q.q", "query q(x): A(x)\n")
    assert cmd_decide(kb, q, ("a",)).status == ENTAILED


def test_not_entailed_with_certificate(tmp_path):
    kb = write(tmp_path, "k.kb", "assert A(a)\n")
    q = write(tmp_path, "q.q", "query q(): B(x)\n")
    out = tmp_path / "cert"
    v = cmd_decide(kb, q, (), RunConfig(out=str(out)))
    assert v.status == NOT_ENTAILED and v.certificate == str(out)
    info = json.loads((out / "verdict.json").read_text())
    assert info["status"] == NOT_ENTAILED and info["individuals"] == ["a"]
    assert (out / "individuals.interp").exists()
    # a fresh process re-verifies the emitted mosaic
    r = run_cli("mosaic-verify", str(out / "mosaic_a"))
    assert r.returncode == 0 and r.stdout.strip().endswith("pass")


@pytest.mark.parametrize("name,expect,answers", curated_cases())
def test_curated_suite(name, expect, answers):
    v = cmd_decide(str(CURATED / f"{name}.kb"), str(CURATED / f"{name}.q"), answers)
    assert v.status == expect


def test_curated_suite_size():
    assert len(curated_cases()) >= 20
    for name, _, _ in curated_cases():
        kb = parse_kb((CURATED / f"{name}.kb").read_text())
        assert len(kb.tbox.concept_names()) <= 2


def test_transitive_forall_counterexample(tmp_path):
    # A ⊑ ∀t.B must reach the anonymous t-successor of b through a -t-> b
    kb = write(tmp_path, "k.kb", "trans t\nci A <= (all t B)\nci B2 <= (some t C)\nci (and B C) <= D\n"
                                 "assert A(a)\nassert t(a,b)\nassert B2(b)\n")
    q = write(tmp_path, "q.q", "trans t\nquery q(): D(y)\n")
    assert cmd_decide(kb, q).status == ENTAILED


def test_two_transitive_roles_in_boolean_query_rejected(tmp_path):
    kb = write(tmp_path, "k.kb", "trans t1 t2\nassert A(a)\n")
    q = write(tmp_path, "q.q", "trans t1 t2\nquery q(): t1(x,y), t2(y,z)\n")
    with pytest.raises(UnsupportedFragment, match="2ExpTime"):
        cmd_decide(kb, q)
    assert main(["decide", kb, q]) == 1


def test_answer_arity_checked(tmp_path):
    kb = write(tmp_path, "k.kb", "assert A(a)\n")
    q = write(tmp_path, "q.q", "query q(x): A(x)\n")
    with pytest.raises(UnsupportedFragment):
        cmd_decide(kb, q, ())
    with pytest.raises(ValueError):
        cmd_decide(kb, q, ("zz",))


def test_role_declaration_conflict(tmp_path):
    kb = write(tmp_path, "k.kb", "trans t\nassert A(a)\n")
    q = write(tmp_path, "q.q", "role t\nquery q(): t(x,y)\n")
    assert main(["decide", kb, q]) == 1


def test_unknown_is_exit_code_2(tmp_path, monkeypatch, capsys):
    kb = write(tmp_path, "k.kb", "assert A(a)\n")
    q = write(tmp_path, "q.q", "query q(): B(x)\n")
    monkeypatch.setattr(cli, "decide_instance", lambda *a, **k: InstanceVerdict(UNKNOWN))
    assert main(["decide", kb, q]) == 2
    assert capsys.readouterr().out.strip() == UNKNOWN


def test_budget_exhaustion_gives_unknown(monkeypatch):
    real = cli.decide_instance

    def slow(*a, **k):
        time.sleep(0.05)
        return real(*a, **k)

    monkeypatch.setattr(cli, "decide_instance", slow)
    name = "across_individuals_no"
    v = cmd_decide(str(CURATED / f"{name}.kb"), str(CURATED / f"{name}.q"), (), RunConfig(budget_ms=20))
    assert v.status == UNKNOWN and v.stats.get("budget_exhausted")


@pytest.mark.parametrize("kw", [{"tile_cap": 0}, {"depth": 0}, {"jobs": 0}, {"budget_ms": 0}])
def test_run_config_positive_caps(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)


def test_parse_error_exit_code(tmp_path, capsys):
    kb = write(tmp_path, "k.kb", "ci A <=\n")
    q = write(tmp_path, "q.q", "query q(): A(x)\n")
    assert main(["decide", kb, q]) == 1
    assert "error" in capsys.readouterr().err


def test_decide_is_deterministic(tmp_path):
    kb = str(CURATED / "mixed_roles_rooted_no.kb")
    q = str(CURATED / "mixed_roles_rooted_no.q")
    outs = []
    for k in range(2):
        out = tmp_path / f"c{k}"
        assert main(["decide", kb, q, "--answers", "a", "--out", str(out)]) == 0
        outs.append({p: (out / p).read_bytes() for p in sorted(os.listdir(out)) if (out / p).is_file()})
        for sub in sorted(os.listdir(out)):
            if (out / sub).is_dir():
                for f in sorted(os.listdir(out / sub)):
                    outs[-1][f"{sub}/{f}"] = (out / sub / f).read_bytes()
    assert outs[0] == outs[1]


# ---------------------------------------------------------------- compile

def test_compile_four_clusters(tmp_path):
    files = cmd_compile(str(DATA / "four_clusters.q"))
    ptq = parse_query_file(files["ptq.q"])
    sub = parse_query_file(files["subptq.q"])
    assert len(ptq.queries) == 1 and len(sub.queries) == 4
    assert "tq.q" not in files
    assert main(["compile", str(DATA / "four_clusters.q"), "--out", str(tmp_path / "o")]) == 0
    assert sorted(os.listdir(tmp_path / "o")) == ["ptq.q", "subptq.q"]


def test_compile_two_transitive_has_no_ptq():
    files = cmd_compile(str(DATA / "two_transitive.q"))
    assert parse_query_file(files["ptq.q"]).queries == []
    assert "no pseudo-tree query" in files["ptq.q"]


def test_compile_unary_writes_tree_queries(tmp_path):
    q = write(tmp_path, "q.q", "trans t\nquery q(x): t(x,y), t(y,z), A(z)\n")
    files = cmd_compile(q)
    assert parse_query_file(files["tq.q"]).queries
    assert all(p.answer for p in parse_query_file(files["ptq.q"]).queries)


# ---------------------------------------------------------------- shrink

def test_shrink_random_60_node_countermodel(tmp_path):
    from sqe.crosscheck import random_shrink_instance
    from sqe.kb import KnowledgeBase, serialize_kb
    from sqe.query import serialize_queries

    rng = random.Random(7)
    while True:
        i, T, Q = random_shrink_instance(rng, 60)
        if len(i.domain) >= 40:
            break
    ip = write(tmp_path, "i.interp", serialize_interp(i))
    kb = write(tmp_path, "k.kb", serialize_kb(KnowledgeBase(T, transitive=frozenset({"t"}))))
    qp = write(tmp_path, "q.q", serialize_queries(Q, ["t"]))
    out = tmp_path / "j.interp"
    assert main(["shrink", ip, kb, qp, "--out", str(out)]) == 0
    text = out.read_text()
    assert "FAIL" not in text and "# check size: pass" in text
    j = parse_interp("\n".join(l for l in text.splitlines() if not l.startswith("#")))
    assert len(j.domain) <= 24


# ---------------------------------------------------------------- gen-hardness

def test_gen_hardness(tmp_path, capsys):
    out = tmp_path / "h"
    assert main(["gen-hardness", str(DATA / "atm" / "accept_now.atm"), "a", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["kb.txt", "manifest.json", "query.txt"]
    assert json.loads((out / "manifest.json").read_text())["n"] == 1
    assert main(["gen-hardness", str(DATA / "atm" / "accept_now.atm"), "a"]) == 1  # needs --out
    assert main(["gen-hardness", str(DATA / "atm" / "accept_now.atm"), "z", "--out", str(out)]) == 1


def test_gen_hardness_output_outside_engine_fragment(tmp_path):
    out = tmp_path / "h"
    main(["gen-hardness", str(DATA / "atm" / "accept_now.atm"), "a", "--out", str(out)])
    with pytest.raises(UnsupportedFragment):
        cmd_decide(str(out / "kb.txt"), str(out / "query.txt"))


# ---------------------------------------------------------------- crosscheck

def test_crosscheck_small_run(tmp_path):
    out = tmp_path / "r.json"
    args = ["crosscheck", "--queries", "30", "--interps", "5", "--split-cases", "40", "--shrink-cases", "5",
            "--out", str(out)]
    assert main(args) == 0
    rep = json.loads(out.read_text())
    assert rep["ok"]
    by = {s["suite"]: s for s in rep["suites"]}
    assert by["ptq-boolean"]["compiled"] == 30 and by["ptq-boolean"]["discrepancies"] == 0
    assert by["ptq-boolean"]["interpretations"] == 30 * 5
    assert by["split"]["cases"] == 40 and by["shrink"]["cases"] == 5
    # same seed, same bytes
    out2 = tmp_path / "r2.json"
    assert main(args[:-1] + [str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_crosscheck_fault_is_reported(capsys):
    code = main(["crosscheck", "--fault", "--queries", "30", "--interps", "10", "--split-cases", "5",
                 "--shrink-cases", "2"])
    rep = json.loads(capsys.readouterr().out)
    assert code == 1 and not rep["ok"]
    s = rep["suites"][0]
    assert s["discrepancies"] > 0 and "interpretation" in s["witness"]
