"""Randomized agreement suites: PTQ compilation, the split equivalence and the
transitive-tree shrinking construction. Each suite returns a plain dict so
the CLI can print it as JSON."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .interp import check_model, classify_shape, has_match, serialize_interp
from .kb import CI, And, Exists, Forall, Name, TBox, normalize
from .ptq import compile_boolean_ptq, compile_unary_ptqs
from .query import CQ, format_cq, is_acyclic, tree_matchable
from .randgen import (linearized_model, perturbed_tree, random_connected_cq, random_cq, random_forest,
                      random_tree)

ROLES = ["t", "r", "s"]
NAMES = ["A", "B"]


def _trees_for(rng, q, n):
    base = linearized_model(q, ["t"])
    for j in range(n):
        if base is not None and j % 2 == 0:
            yield perturbed_tree(rng, base, ROLES, NAMES)
        else:
            yield random_tree(rng, rng.randint(1, 12), ROLES, NAMES, ["t"])


def _corrupt(q: CQ) -> CQ:
    """Drop one atom (a deliberately wrong compilation result)."""
    atoms = sorted(q.atoms)
    victim = next((a for a in atoms if len(a) == 2), atoms[-1])
    rest = frozenset(a for a in atoms if a != victim)
    return CQ(rest or frozenset({("_fault", "x")}), q.answer, q.name)


def _witness(q, p, i) -> dict:
    return {"query": format_cq(q), "compiled": format_cq(p), "interpretation": serialize_interp(i)}


def suite_ptq_boolean(seed: int = 0, n_queries: int = 1000, n_interps: int = 50, fault: bool = False) -> dict:
    """Sample connected Boolean CQs until n_queries of them compile; each
    compiled one is compared with its PTQ on n_interps transitive trees."""
    rng = random.Random(seed)
    out = {"suite": "ptq-boolean", "queries": 0, "interpretations": 0, "compiled": 0,
           "compile_mismatch": 0, "discrepancies": 0, "max_nodes": 0, "witness": None}
    faulted = False
    while out["compiled"] < n_queries:
        q = random_connected_cq(rng, 6, ROLES, NAMES)
        out["queries"] += 1
        p = compile_boolean_ptq(q, ["t"])
        if (p is not None) != tree_matchable(q, ["t"]):
            out["compile_mismatch"] += 1
        if p is None:
            continue
        out["compiled"] += 1
        pq = p.query
        if fault and not faulted:
            pq = _corrupt(pq)
        caught = False
        for i in _trees_for(rng, q, n_interps):
            out["interpretations"] += 1
            out["max_nodes"] = max(out["max_nodes"], len(i.domain))
            if has_match(q, i) != has_match(pq, i):
                out["discrepancies"] += 1
                caught = True
                if out["witness"] is None:
                    out["witness"] = _witness(q, pq, i)
        if fault and not faulted and caught:
            faulted = True
    out["ok"] = out["discrepancies"] == 0 and out["compile_mismatch"] == 0
    out["per_query"] = n_interps
    return out


def suite_ptq_unary(seed: int = 0, n_queries: int = 1000, n_interps: int = 50) -> dict:
    rng = random.Random(seed)
    out = {"suite": "ptq-unary", "queries": 0, "interpretations": 0, "compiled": 0, "discrepancies": 0,
           "max_nodes": 0, "witness": None}
    while out["queries"] < n_queries:
        q = random_connected_cq(rng, 6, ROLES, NAMES, answer=1)
        out["queries"] += 1
        parts = compile_unary_ptqs(q, ["t"])
        if parts is not None:
            out["compiled"] += 1
        for i in _trees_for(rng, q, n_interps):
            out["interpretations"] += 1
            out["max_nodes"] = max(out["max_nodes"], len(i.domain))
            root = classify_shape(i).root
            a = has_match(q, i, {q.answer[0]: root})
            b = parts is not None and all(has_match(p.query, i, {p.answer[0]: root}) for p in parts)
            if a != b:
                out["discrepancies"] += 1
                if out["witness"] is None:
                    out["witness"] = {"query": format_cq(q), "interpretation": serialize_interp(i)}
    out["ok"] = out["discrepancies"] == 0
    return out


def random_split_case(rng):
    th = ["a", "b"][: rng.randint(1, 2)]
    i = random_forest(rng, th, rng.randint(2, 10), ["t", "s"], NAMES, ["t"])
    rooted = rng.random() < 0.5
    q = random_cq(rng, rng.randint(1, 5), ["t", "s"], NAMES, answer=rooted,
                  connected=rooted or rng.random() < 0.7)
    ans = [rng.choice(th)] if rooted else None
    return i, q, ans


def suite_split(seed: int = 0, n: int = 1000) -> dict:
    from .decompose import split_equivalence_check

    rng = random.Random(seed)
    out = {"suite": "split", "cases": 0, "positives": 0, "discrepancies": 0, "max_nodes": 0, "max_vars": 0,
           "witness": None}
    for _ in range(n):
        i, q, ans = random_split_case(rng)
        out["max_nodes"] = max(out["max_nodes"], len(i.domain))
        out["max_vars"] = max(out["max_vars"], len(q.vars))
        direct, via = split_equivalence_check(i, q, ans)
        out["cases"] += 1
        out["positives"] += direct
        if direct != via:
            out["discrepancies"] += 1
            if out["witness"] is None:
                out["witness"] = {"query": format_cq(q), "answers": ans, "interpretation": serialize_interp(i)}
    out["ok"] = out["discrepancies"] == 0
    return out


SHRINK_NAMES = "ABC"


def _satisfied_tbox(rng, i, k=8) -> TBox:
    cands = ([CI(Name(a), Exists("t", Name(b))) for a in SHRINK_NAMES for b in SHRINK_NAMES]
             + [CI(Name(a), Forall("t", Name(b))) for a in SHRINK_NAMES for b in SHRINK_NAMES]
             + [CI(And(Name(a), Name(b)), Name(c)) for a in SHRINK_NAMES for b in SHRINK_NAMES
                for c in SHRINK_NAMES if a < b])
    return TBox(tuple(c for c in rng.sample(cands, k) if not check_model(i, normalize(TBox((c,))))))


def random_shrink_instance(rng, max_nodes: int = 60):
    """(tree, TBox, Q) with the tree a model of the TBox and not of Q."""
    while True:
        i = random_tree(rng, rng.randint(1, max_nodes), ["t"], list(SHRINK_NAMES), ["t"],
                        p_label=rng.choice([0.15, 0.3]))
        Q = []
        for _ in range(rng.randint(1, 3)):
            q = random_cq(rng, rng.randint(1, 4), ["t"], list(SHRINK_NAMES), n_unary=rng.randint(1, 4))
            if is_acyclic(q) and not has_match(q, i):
                Q.append(q)
        if Q:
            return i, _satisfied_tbox(rng, i), Q


def suite_shrink(seed: int = 0, n: int = 200, max_nodes: int = 60) -> dict:
    from .countermodel import shrink_transitive_tree

    rng = random.Random(seed)
    out = {"suite": "shrink", "cases": 0, "failures": 0, "max_size": 0, "size_bound_violations": 0,
           "max_input": 0, "witness": None}
    for _ in range(n):
        i, T, Q = random_shrink_instance(rng, max_nodes)
        out["max_input"] = max(out["max_input"], len(i.domain))
        sm = shrink_transitive_tree(i, T, Q)
        out["cases"] += 1
        size = len(sm.interp.domain)
        out["max_size"] = max(out["max_size"], size)
        if not sm.ok:
            out["failures"] += 1
            if out["witness"] is None:
                out["witness"] = {"checks": {k: v for k, v in sm.checks.items()},
                                  "interpretation": serialize_interp(i)}
        if not sm.checks.get("size", False):
            out["size_bound_violations"] += 1
    out["ok"] = out["failures"] == 0
    return out


@dataclass
class CrosscheckConfig:
    seed: int = 0
    queries: int = 200
    interps: int = 20
    split_cases: int = 300
    shrink_cases: int = 60
    fault: bool = False


def run_all(cfg: CrosscheckConfig) -> dict:
    suites = [
        suite_ptq_boolean(cfg.seed, cfg.queries, cfg.interps, cfg.fault),
        suite_ptq_unary(cfg.seed + 1, cfg.queries, cfg.interps),
        suite_split(cfg.seed + 2, cfg.split_cases),
        suite_shrink(cfg.seed + 3, cfg.shrink_cases),
    ]
    return {"seed": cfg.seed, "suites": suites, "ok": all(s["ok"] for s in suites)}
