"""Command-line driver: decide, compile, shrink, mosaic-verify,
gen-hardness and crosscheck."""

from __future__ import annotations

import argparse
import itertools
import json
import os
import shutil
import sys
import time
from dataclasses import dataclass, field

from .kb import KnowledgeBase, ParseError, parse_kb, propagate_transitive_foralls
from .mosaic import (ENTAILED, NOT_ENTAILED, UNKNOWN, EntailmentInstance, InstanceVerdict, Mosaic, _atomic_write,
                     decide_instance, read_mosaic, verify_mosaic, write_mosaic)
from .query import CQ, components, format_cq, parse_query_file


class UnsupportedFragment(ValueError):
    pass


class OutOfBudget(Exception):
    pass


@dataclass
class RunConfig:
    tile_cap: int = 3
    depth: int = 3
    seed: int = 0
    jobs: int = 1
    budget_ms: int | None = None
    out: str | None = None

    def __post_init__(self):
        for name in ("tile_cap", "depth", "jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.budget_ms is not None and self.budget_ms <= 0:
            raise ValueError("budget_ms must be positive")


@dataclass
class Verdict:
    status: str
    certificate: str | None = None
    caps: dict = field(default_factory=dict)
    seconds: float = 0.0
    mosaics: dict = field(default_factory=dict)  # individual -> (Mosaic, EntailmentInstance)
    j0: object = None
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# decision pipeline


def _fragment(kb: KnowledgeBase, Q: list[CQ], answers: tuple) -> str:
    if not Q:
        raise UnsupportedFragment("empty UCQ")
    if all(q.answer for q in Q):
        if len(answers) != len(Q[0].answer):
            raise UnsupportedFragment("answer tuple length does not match the query")
        if any(len(components(q)) != 1 for q in Q):
            raise UnsupportedFragment("rooted queries must be connected")
        return "rooted"
    if any(q.answer for q in Q):
        raise UnsupportedFragment("mixed Boolean and non-Boolean queries")
    used = set().union(*(q.roles for q in Q)) & set(kb.transitive)
    if len(used) > 1:
        raise UnsupportedFragment("Boolean UCQs with more than one transitive role are outside the supported "
                                  "fragment (that case is 2ExpTime-complete and not implemented)")
    return "single"


def prepare_kb(kb: KnowledgeBase) -> tuple[KnowledgeBase, object]:
    nt = propagate_transitive_foralls(kb.normal_tbox(), kb.transitive)
    kb2 = KnowledgeBase(nt.to_tbox(), kb.abox, kb.transitive, kb.plain)
    return kb2, kb2.normal_tbox()


def decide(kb: KnowledgeBase, Q: list[CQ], answers: tuple = (), cfg: RunConfig | None = None) -> Verdict:
    from .decompose import _check_rooted, engine_signature, guess_i0, rooted_plan, single_trans_plan

    cfg = cfg or RunConfig()
    t0 = time.monotonic()
    deadline = t0 + cfg.budget_ms / 1000 if cfg.budget_ms else None
    kind = _fragment(kb, Q, tuple(answers))
    if kind == "rooted":
        _check_rooted(Q, answers, kb)
    kb2, nt = prepare_kb(kb)
    trans = frozenset(kb.transitive)
    concepts, roles = engine_signature(kb2)
    roles = sorted(set(roles) | {r for q in Q for r in q.roles})
    memo: dict = {}
    stats = {"plans": 0, "leaves": 0, "instances": 0}

    def check_time():
        if deadline is not None and time.monotonic() > deadline:
            raise OutOfBudget

    def verdict(tp, q0, q1) -> InstanceVerdict:
        inst = EntailmentInstance(nt, tp, tuple(q0), tuple(q1), trans, tuple(concepts), tuple(roles))
        if inst.key not in memo:
            check_time()
            stats["instances"] += 1
            memo[inst.key] = (decide_instance(inst, cfg.tile_cap, cfg.depth), inst)
        return memo[inst.key]

    def dfs(plan, idx, q0, q1):
        check_time()
        if idx == len(plan.obligations):
            stats["leaves"] += 1
            res = {a: verdict(plan.types[a], q0[a], q1[a]) for a in plan.individuals}
            if all(v.status == NOT_ENTAILED for v, _ in res.values()):
                return NOT_ENTAILED, res
            if any(v.status == ENTAILED for v, _ in res.values()):
                return ENTAILED, None
            return UNKNOWN, None
        opts = []
        for alt in plan.obligations[idx].alternatives:
            for picks in itertools.product(*alt.groups):
                opts.append((alt.individual, picks))
        for a, picks in opts:
            if all(c.query in (q0 if c.kind == "q0" else q1)[a] for c in picks):
                return dfs(plan, idx + 1, q0, q1)
        opts.sort(key=lambda o: (len(o[1]), o[0]))
        unknown = False
        for a, picks in opts:
            n0, n1 = dict(q0), dict(q1)
            n0[a] = q0[a] | {c.query for c in picks if c.kind == "q0"}
            n1[a] = q1[a] | {c.query for c in picks if c.kind == "q1"}
            if verdict(plan.types[a], n0[a], n1[a])[0].status == ENTAILED:
                continue
            st, res = dfs(plan, idx + 1, n0, n1)
            if st == NOT_ENTAILED:
                return st, res
            unknown |= st == UNKNOWN
        return (UNKNOWN if unknown else ENTAILED), None

    status, found, j0_found = ENTAILED, None, None
    try:
        for j0 in guess_i0(kb2):
            plan = rooted_plan(kb2, Q, answers, j0) if kind == "rooted" else single_trans_plan(kb2, Q, j0)
            stats["plans"] += 1
            empty = {a: frozenset() for a in plan.individuals}
            st, res = dfs(plan, 0, dict(empty), dict(empty))
            if st == NOT_ENTAILED:
                status, found, j0_found = st, res, j0
                break
            if st == UNKNOWN:
                status = UNKNOWN
    except OutOfBudget:
        status = UNKNOWN
        stats["budget_exhausted"] = True
    v = Verdict(status, None, {"tile_cap": cfg.tile_cap, "depth": cfg.depth, "budget_ms": cfg.budget_ms},
                time.monotonic() - t0, stats=stats, j0=j0_found)
    if found:
        v.mosaics = {a: (iv.mosaic, inst) for a, (iv, inst) in found.items()}
    return v


def write_certificate(v: Verdict, path: str) -> str:
    """Certificate directory: verdict, the guessed individual layer and one
    mosaic per individual. Built aside and renamed into place."""
    from .interp import serialize_interp

    tmp = path.rstrip("/") + ".partial"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    info = {"status": v.status, "caps": v.caps, "individuals": sorted(v.mosaics)}
    _atomic_write(os.path.join(tmp, "verdict.json"), json.dumps(info, indent=2, sort_keys=True) + "\n")
    if v.j0 is not None:
        _atomic_write(os.path.join(tmp, "individuals.interp"), serialize_interp(v.j0))
    for a, (m, inst) in sorted(v.mosaics.items()):
        write_mosaic(m, inst, os.path.join(tmp, f"mosaic_{a}"))
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)
    v.certificate = path
    return path


def load_inputs(kb_file: str, query_file: str) -> tuple[KnowledgeBase, list[CQ]]:
    with open(kb_file) as fh:
        kb = parse_kb(fh.read())
    with open(query_file) as fh:
        qf = parse_query_file(fh.read())
    clash = (qf.transitive & kb.plain) | (qf.plain & kb.transitive)
    if clash:
        raise ParseError(f"role {sorted(clash)[0]} is declared differently in the KB and the query file")
    kb = KnowledgeBase(kb.tbox, kb.abox, kb.transitive | qf.transitive, kb.plain | (qf.plain - kb.transitive))
    return kb, qf.queries


def cmd_decide(kb_file: str, query_file: str, answers: tuple = (), cfg: RunConfig | None = None) -> Verdict:
    cfg = cfg or RunConfig()
    kb, Q = load_inputs(kb_file, query_file)
    v = decide(kb, Q, tuple(answers), cfg)
    if cfg.out and v.status == NOT_ENTAILED:
        write_certificate(v, cfg.out)
    return v


# ---------------------------------------------------------------------------
# other commands


def cmd_compile(query_file: str) -> dict[str, str]:
    """Query files keyed by name: ptq.q holds the PTQs of every input query
    (<q>_ptq<k>), subptq.q their subPTQs (<q>_sub<k>_<j>) and, for unary
    input, tq.q the tree-shaped rewritings (<q>_tq<k>). Queries without a
    PTQ are listed as comments in ptq.q."""
    from .ptq import compile_boolean_ptq, compile_unary_ptqs, subptqs, treeify

    with open(query_file) as fh:
        qf = parse_query_file(fh.read())
    trans = set(qf.transitive)
    head = [f"trans {r}" for r in sorted(trans)] + [f"role {r}" for r in sorted(qf.plain)]
    ptq, sub, tq = list(head), list(head), list(head)
    for q in qf.queries:
        ptq.append(f"# input {format_cq(q)}")
        if q.answer:
            parts = compile_unary_ptqs(q, trans)
        else:
            # several transitive roles: run the steps and report absence
            p = compile_boolean_ptq(q, trans, allow_multiple_transitive=True)
            parts = None if p is None else [p]
        if parts is None:
            ptq.append(f"# {q.name}: no pseudo-tree query")
            continue
        for k, p in enumerate(parts):
            ptq.append(format_cq(p.query, f"{q.name}_ptq{k}"))
            subs = subptqs(p, trans)
            sub.append(f"# {q.name}_ptq{k}: {len(subs)} subPTQs")
            for j, s in enumerate(subs):
                sub.append(format_cq(s.query, f"{q.name}_sub{k}_{j}"))
        if q.answer and len(q.roles & trans) <= 1:
            for k, t in enumerate(treeify(q, trans)):
                tq.append(format_cq(t, f"{q.name}_tq{k}"))
    out = {"ptq.q": ptq, "subptq.q": sub}
    if any(q.answer for q in qf.queries):
        out["tq.q"] = tq
    return {name: "\n".join(lines) + "\n" for name, lines in out.items()}


def cmd_shrink(interp_file: str, kb_file: str, query_file: str) -> tuple[str, dict]:
    from .countermodel import shrink_transitive_tree
    from .interp import parse_interp, serialize_interp

    with open(interp_file) as fh:
        i = parse_interp(fh.read())
    kb, Q = load_inputs(kb_file, query_file)
    if i.transitive != kb.transitive and kb.transitive:
        i = i.replace(transitive=frozenset(kb.transitive))
    sm = shrink_transitive_tree(i, kb.normal_tbox(), Q)
    head = [f"# check {k}: {'pass' if v else 'FAIL'}" for k, v in sorted(sm.checks.items())]
    head.append(f"# root {sm.root}")
    head += [f"# origin {e} {sm.origin[e]}" for e in sorted(sm.origin)]
    return "\n".join(head) + "\n" + serialize_interp(sm.interp), sm.checks


def cmd_verify_mosaic(path: str, instance_file: str | None = None) -> list:
    from .mosaic import parse_instance

    m, inst, _ = read_mosaic(path)
    if instance_file:
        with open(instance_file) as fh:
            inst = parse_instance(fh.read())
    return verify_mosaic(m, inst)


def cmd_gen_hardness(atm_file: str, word: str, out: str) -> list[str]:
    from .hardness import parse_atm, gen_instance, write_instance

    with open(atm_file) as fh:
        m = parse_atm(fh.read())
    inst = gen_instance(m, word)
    return write_instance(inst, out)


def cmd_crosscheck(cfg: RunConfig, fault: bool = False, queries: int = 200, interps: int = 20,
                   split_cases: int = 300, shrink_cases: int = 60) -> dict:
    from .crosscheck import CrosscheckConfig, run_all

    return run_all(CrosscheckConfig(cfg.seed, queries, interps, split_cases, shrink_cases, fault))


# ---------------------------------------------------------------------------
# argument parsing


def _config(ns) -> RunConfig:
    return RunConfig(ns.tile_cap, ns.depth, ns.seed, ns.jobs, ns.budget_ms, ns.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tile-cap", type=int, default=3, help="largest tile size searched")
    common.add_argument("--depth", type=int, default=3, help="chase / assembly depth")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="parallelism degree (accepted; work runs in-process)")
    common.add_argument("--budget-ms", type=int, default=None, help="time budget for the decision phase")
    common.add_argument("--out", default=None, help="output file or directory")

    p = argparse.ArgumentParser(prog="sqe", description="Query entailment for the description logic S.")
    sub = p.add_subparsers(dest="cmd", required=True)
    d = sub.add_parser("decide", parents=[common], help="decide KB ⊨ Q")
    d.add_argument("kb")
    d.add_argument("queries")
    d.add_argument("--answers", default="", help="comma-separated individuals for rooted queries")
    c = sub.add_parser("compile", parents=[common], help="compile queries to PTQs")
    c.add_argument("queries")
    s = sub.add_parser("shrink", parents=[common], help="shrink a transitive-tree countermodel")
    s.add_argument("interp")
    s.add_argument("kb")
    s.add_argument("queries")
    v = sub.add_parser("mosaic-verify", parents=[common], help="re-verify an emitted mosaic")
    v.add_argument("dir")
    v.add_argument("--instance", default=None)
    g = sub.add_parser("gen-hardness", parents=[common], help="generate a hardness instance from an ATM")
    g.add_argument("atm")
    g.add_argument("word")
    x = sub.add_parser("crosscheck", parents=[common], help="run the randomized agreement suites")
    x.add_argument("--fault", action="store_true", help="corrupt one compiled PTQ on purpose")
    x.add_argument("--queries", type=int, default=200)
    x.add_argument("--interps", type=int, default=20)
    x.add_argument("--split-cases", type=int, default=300)
    x.add_argument("--shrink-cases", type=int, default=60)
    return p


def _emit(text: str, out: str | None):
    if out:
        _atomic_write(out, text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    p = build_parser()
    ns = p.parse_args(argv)
    try:
        cfg = _config(ns)
        if ns.cmd == "decide":
            answers = tuple(a for a in ns.answers.split(",") if a)
            v = cmd_decide(ns.kb, ns.queries, answers, cfg)
            line = v.status + (f" certificate={v.certificate}" if v.certificate else "")
            print(line)
            print(f"seconds={v.seconds:.3f} instances={v.stats.get('instances', 0)}", file=sys.stderr)
            return 2 if v.status == UNKNOWN else 0
        if ns.cmd == "compile":
            files = cmd_compile(ns.queries)
            if cfg.out:
                os.makedirs(cfg.out, exist_ok=True)
                for name, text in files.items():
                    _atomic_write(os.path.join(cfg.out, name), text)
            else:
                sys.stdout.write("".join(f"# file {n}\n{t}" for n, t in files.items()))
            return 0
        if ns.cmd == "shrink":
            text, checks = cmd_shrink(ns.interp, ns.kb, ns.queries)
            _emit(text, cfg.out)
            return 0 if all(checks.values()) else 1
        if ns.cmd == "mosaic-verify":
            bad = cmd_verify_mosaic(ns.dir, ns.instance)
            for b in bad:
                print(b)
            print("pass" if not bad else f"fail ({len(bad)} violations)")
            return 0 if not bad else 1
        if ns.cmd == "gen-hardness":
            if not cfg.out:
                raise ValueError("gen-hardness needs --out DIR")
            for f in cmd_gen_hardness(ns.atm, ns.word, cfg.out):
                print(f)
            return 0
        if ns.cmd == "crosscheck":
            rep = cmd_crosscheck(cfg, ns.fault, ns.queries, ns.interps, ns.split_cases, ns.shrink_cases)
            text = json.dumps(rep, indent=2, sort_keys=True) + "\n"
            _emit(text, cfg.out)
            return 0 if rep["ok"] else 1
    except (ParseError, UnsupportedFragment, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
