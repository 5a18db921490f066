import math
import random
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from sqe.countermodel import (InvariantError, PreconditionError, forbidden_assignment, shrink_transitive_tree,
                              visible_concepts, _make_view)
from sqe.interp import Interpretation, check_model, has_match, transitive_closure, unravel_paths
from sqe.kb import CI, And, Exists, Forall, Name, TBox, normalize
from sqe.query import CQ, initial_vars, is_acyclic
from sqe.randgen import random_cq, random_tree

NAMES = "ABC"


def closed(labels, edges):
    return transitive_closure(Interpretation({e: frozenset(l) for e, l in labels.items()},
                                             frozenset(("t", a, b) for a, b in edges), {}, frozenset({"t"})))


def satisfied_tbox(rng, i, k=8):
    cands = ([CI(Name(a), Exists("t", Name(b))) for a in NAMES for b in NAMES]
             + [CI(Name(a), Forall("t", Name(b))) for a in NAMES for b in NAMES]
             + [CI(And(Name(a), Name(b)), Name(c)) for a in NAMES for b in NAMES for c in NAMES if a < b])
    return TBox(tuple(c for c in rng.sample(cands, k) if not check_model(i, normalize(TBox((c,))))))


def random_instance(rng, max_nodes=60):
    """(tree, TBox, Q) with the tree a model of the TBox and not of Q."""
    while True:
        i = random_tree(rng, rng.randint(1, max_nodes), ["t"], list(NAMES), ["t"], p_label=rng.choice([0.15, 0.3]))
        Q = []
        for _ in range(rng.randint(1, 3)):
            q = random_cq(rng, rng.randint(1, 4), ["t"], list(NAMES), n_unary=rng.randint(1, 4))
            if is_acyclic(q) and not has_match(q, i):
                Q.append(q)
        if Q:
            return i, satisfied_tbox(rng, i), Q


def reach_bfs(i, a):
    seen, todo = set(), deque([a])
    while todo:
        x = todo.popleft()
        for _, p, c in i.edges:
            if p == x and c not in seen:
                seen.add(c)
                todo.append(c)
    return seen


# ---------------------------------------------------------------- visible concepts

def test_vc_of_leaf_is_empty():
    i = closed({0: "A", 1: "B"}, [(0, 1)])
    assert visible_concepts(i, 1, "AB") == set()


def test_vc_of_chain_root():
    i = closed({0: "", 1: "A", 2: "A"}, [(0, 1), (1, 2)])
    assert visible_concepts(i, 0, "AB") == {"A"}


def test_vc_matches_bfs_and_is_antimonotone():
    rng = random.Random(1)
    for _ in range(100):
        i = random_tree(rng, rng.randint(1, 25), ["t"], list(NAMES), ["t"])
        for a in i.domain:
            want = set().union(*(i.labels[b] for b in reach_bfs(i, a))) if reach_bfs(i, a) else set()
            assert visible_concepts(i, a, NAMES) == want & set(NAMES)
        for _, a, b in i.edges:
            assert visible_concepts(i, b, NAMES) <= visible_concepts(i, a, NAMES)


# ---------------------------------------------------------------- forbidden assignment

def test_leaf_only_root_assignment():
    i = closed({0: "A"}, [])
    q = CQ(frozenset({("B", "x")}))
    fa = forbidden_assignment(i, [q], role="t")
    assert fa == {0: (q,)}


def test_empty_x_keeps_query():
    # B never holds at the root, so no initial variable matches there
    i = closed({0: "", 1: "A", 2: ""}, [(0, 1), (0, 2)])
    q = CQ(frozenset({("B", "x"), ("t", "x", "y")}))
    fa = forbidden_assignment(i, [q])
    assert fa[1] == (q,) and fa[2] == (q,)


def test_matched_initial_variable_is_dropped():
    i = closed({0: "A", 1: "", 2: ""}, [(0, 1), (1, 2)])
    q = CQ(frozenset({("A", "x"), ("t", "x", "y"), ("B", "y")}))
    fa = forbidden_assignment(i, [q])
    assert fa[1] == (CQ(frozenset({("B", "y")})),)


def test_assignment_invariants_random():
    rng = random.Random(7)
    for _ in range(120):
        i, T, Q = random_instance(rng, 25)
        fa = forbidden_assignment(i, Q)
        sh_edges = {(a, b) for _, a, b in i.edges}
        for e, qbar in fa.items():
            sub = i.restrict({e} | i.succ("t", e))
            for q in qbar:
                if q is not None:
                    assert not has_match(q, sub)
        for a, b in sh_edges:
            for qa, qb in zip(fa[a], fa[b]):
                assert qb is None or (qa is not None and qb.atoms <= qa.atoms)


def test_chosen_component_has_no_match_in_strict_subtrees():
    rng = random.Random(8)
    checked = 0
    for _ in range(80):
        i, T, Q = random_instance(rng, 20)
        fa = forbidden_assignment(i, Q)
        for e in i.domain:
            for b in i.succ("t", e):
                for qb in fa[b]:
                    if qb is None:
                        continue
                    assert not has_match(qb, i.restrict({b} | i.succ("t", b)))
                    checked += 1
    assert checked > 50


def test_assignment_refuses_a_model_of_q():
    i = closed({0: "A"}, [])
    with pytest.raises(InvariantError):
        forbidden_assignment(i, [CQ(frozenset({("A", "x")}))], role="t")


# ---------------------------------------------------------------- shrinking

def test_single_node_is_returned_unchanged():
    i = closed({0: "A"}, [])
    sm = shrink_transitive_tree(i, TBox(()), [CQ(frozenset({("B", "x")}))], role="t")
    assert len(sm.interp.domain) == 1 and not sm.interp.edges
    assert sm.ok


def test_two_names_bound_six():
    # a long A/B chain shrinks to at most 3! elements
    n = 31
    labels = {e: ("A" if e % 2 else "B") for e in range(n)}
    i = closed(labels, [(e, e + 1) for e in range(n - 1)])
    T = TBox((CI(Name("A"), Exists("t", Name("B"))),))
    q = CQ(frozenset({("A", "x"), ("t", "x", "y"), ("C", "y")}))
    sm = shrink_transitive_tree(i, T, [q])
    assert sm.ok
    assert len(sm.interp.domain) <= math.factorial(3)


def test_theorem_suite_tree_mode():
    rng = random.Random(2025)
    seen_nontrivial = 0
    for _ in range(200):
        i, T, Q = random_instance(rng)
        sm = shrink_transitive_tree(i, T, Q)
        assert sm.ok, sm.checks
        assert set(sm.origin.values()) <= set(i.domain)
        seen_nontrivial += len(sm.interp.domain) > 1
    assert seen_nontrivial > 50


def _random_closed_graph(rng, k):
    labels = {e: "".join(c for c in NAMES if rng.random() < 0.4) for e in range(k)}
    edges = {(rng.randrange(e), e) for e in range(1, k)}
    for _ in range(rng.randint(0, 4)):
        edges.add((rng.randrange(k), rng.randrange(k)))
    return closed(labels, edges)


def test_graph_mode_matches_agree_with_unraveling():
    rng = random.Random(4)
    for _ in range(150):
        i = _random_closed_graph(rng, rng.randint(1, 4))
        qs = [q for q in (random_cq(rng, rng.randint(1, 3), ["t"], list(NAMES)) for _ in range(2)) if is_acyclic(q)]
        if not qs:
            continue
        v = _make_view(i, qs, None, "t", 0, "graph")
        u, _ = unravel_paths(i, 0, 2 * max(len(q.vars) for q in qs) + 1)
        u = transitive_closure(u)
        for q in qs:
            assert v.matches_below(q, 0) == has_match(q, u)


def test_theorem_suite_graph_mode():
    rng = random.Random(5)
    cases = set()
    done = 0
    while done < 150:
        i = _random_closed_graph(rng, rng.randint(1, 5))
        T = satisfied_tbox(rng, i)
        qs = [q for q in (random_cq(rng, rng.randint(1, 3), ["t"], list(NAMES)) for _ in range(3)) if is_acyclic(q)]
        if not qs:
            continue
        v = _make_view(i, qs, None, "t", 0, "graph")
        Q = [q for q in qs if not v.matches_below(q, 0)]
        if not Q:
            continue
        sm = shrink_transitive_tree(i, T, Q, root=0, mode="graph")
        assert sm.ok, sm.checks
        cases |= {c for _, c in sm.cases}
        done += 1
    assert {"case1", "case2", "base"} <= cases


def test_cycle_becomes_case_two():
    # 0 -> 1 <-> 2 with A on 1, B on 2: every element of α_M sees another
    i = closed({0: "", 1: "A", 2: "B"}, [(0, 1), (1, 2), (2, 1)])
    T = TBox((CI(Name("A"), Exists("t", Name("B"))), CI(Name("B"), Exists("t", Name("A")))))
    q = CQ(frozenset({("A", "x"), ("t", "x", "y"), ("C", "y")}))
    sm = shrink_transitive_tree(i, T, [q], root=0, mode="graph")
    assert sm.ok
    assert any(c == "case2" for _, c in sm.cases)


def test_preconditions():
    i = closed({0: "A", 1: "B"}, [(0, 1)])
    with pytest.raises(PreconditionError):
        shrink_transitive_tree(i, TBox(()), [CQ(frozenset({("B", "x")}))])
    with pytest.raises(PreconditionError):
        shrink_transitive_tree(i, TBox((CI(Name("B"), Exists("t", Name("A"))),)), [CQ(frozenset({("C", "x")}))])
    with pytest.raises(PreconditionError):
        shrink_transitive_tree(i, TBox(()), [CQ(frozenset({("t", "x", "y"), ("t", "y", "x"), ("C", "x")}))])
    with pytest.raises(PreconditionError):
        shrink_transitive_tree(i, TBox(()), [CQ(frozenset({("C", "x")}), ("x",))])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_shrink_property(seed):
    i, T, Q = random_instance(random.Random(seed), 30)
    sm = shrink_transitive_tree(i, T, Q)
    assert sm.ok
    for e in sm.interp.domain:
        assert sm.interp.labels[e] == i.labels[sm.origin[e]]
