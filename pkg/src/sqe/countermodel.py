"""Finite countermodels from transitive-tree countermodels over one
transitive role: forbidden-query assignment, visible concepts and the
two-case shrinking construction.

Two input modes share one implementation over *virtual nodes* (element,
q̄): ``tree`` mode walks the underlying tree of a finite transitive tree;
``graph`` mode walks the unraveling of a finite closed relation (for
instance a tile), which is infinite but has finitely many virtual nodes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .interp import Interpretation, check_model, classify_shape, has_match, transitive_closure
from .kb import NormalTBox, TBox, normalize
from .ptq import CompileError, treeify
from .query import CQ, components, format_cq, initial_vars, is_acyclic


class PreconditionError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


@dataclass
class ShrunkModel:
    interp: Interpretation  # transitively closed
    root: int
    origin: dict  # element of J -> element of the input
    cases: list = field(default_factory=list)  # (virtual node, case) in construction order
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


# ---------------------------------------------------------------------------
# input views


class _View:
    def __init__(self, i: Interpretation, role: str, root: int, mode: str, names: set[str]):
        self.i, self.t, self.root, self.mode, self.names = i, role, root, mode, names
        self._desc = {e: frozenset(i.succ(role, e)) for e in i.domain}
        if mode == "tree":
            sh = classify_shape(i)
            base = sh.underlying
            self._kids = {e: sorted(base.succ(role, e)) for e in i.domain}
        else:
            self._kids = {e: sorted(self._desc[e]) for e in i.domain}
        self._match: dict = {}

    def children(self, e) -> list:
        return self._kids[e]

    def desc(self, e) -> frozenset:
        return self._desc[e]

    def vc(self, e) -> frozenset:
        out = set()
        for d in self._desc[e]:
            out |= self.i.labels[d]
        return frozenset(out & self.names)

    def matches_below(self, q: CQ, f) -> bool:
        """Does q match in the subtree rooted at f (f included)?"""
        key = (q, f)
        if key not in self._match:
            self._match[key] = all(self._component_below(q.restrict(c, answer=()), f) for c in components(q))
        return self._match[key]

    def _component_below(self, q: CQ, f) -> bool:
        reach = {f} | self._desc[f]
        sub = self.i.restrict(reach)
        if self.mode == "tree":
            return has_match(q, sub)
        # the topmost image of a connected match in a transitive tree is the
        # image of some variable; tree-shaped images lift to the unraveling
        for x in sorted(q.vars):
            try:
                tqs = treeify(q.with_answer((x,)), {self.t})
            except CompileError:
                continue
            if any(has_match(tq.with_answer(()), sub) for tq in tqs):
                return True
        return False


def _canon_key(q: CQ | None) -> str:
    return "" if q is None else format_cq(q, "q")


# ---------------------------------------------------------------------------
# forbidden-query assignment


def _derive(view: _View, e, qbar: tuple) -> tuple:
    """The tuple handed to every direct successor of e."""
    kids = view.children(e)
    tp = view.i.labels[e]
    out = []
    for k, q in enumerate(qbar):
        if q is None:
            out.append(None)
            continue
        X = {x for x in initial_vars(q) if all(A in tp for A, y in q.unary if y == x)}
        rest_vars = q.vars - X
        if not rest_vars:
            raise InvariantError(f"q[{k}] matches at element {e}")
        rest = CQ(frozenset(a for a in q.atoms if not (set(a[1:]) & X)), (), q.name)
        comps = []
        for c in components(CQ(rest.atoms, (), q.name)):
            comps.append(rest.restrict(c, answer=()))
        chosen = None
        for comp in sorted(comps, key=_canon_key):
            if not any(view.matches_below(comp, f) for f in kids):
                chosen = comp
                break
        if chosen is None and kids:
            raise InvariantError(f"no forbidden component for q[{k}] at element {e}")
        out.append(chosen)
    return tuple(out)


def _node_graph(view: _View, Q: Sequence[CQ]):
    """Virtual nodes reachable from (root, Q) and their children."""
    start = (view.root, tuple(Q))
    kids: dict = {}
    order = [start]
    todo = deque([start])
    seen = {start}
    while todo:
        node = todo.popleft()
        e, qbar = node
        cs = view.children(e)
        sub = _derive(view, e, qbar) if cs else qbar
        kids[node] = [(f, sub) for f in cs]
        for c in kids[node]:
            if c not in seen:
                seen.add(c)
                order.append(c)
                todo.append(c)
    return start, kids, order


def _subquery(a: CQ | None, b: CQ | None) -> bool:
    if a is None:
        return True
    return b is not None and a.atoms <= b.atoms


def _prec(qa: tuple, qb: tuple) -> bool:
    """qa ⪯ qb componentwise."""
    return all(_subquery(x, y) for x, y in zip(qa, qb))


def forbidden_assignment(i: Interpretation, Q: Sequence[CQ], role: str | None = None, root: int | None = None,
                         mode: str = "auto") -> dict:
    """Map element -> tuple of forbidden CQs (tree mode), or virtual node ->
    tuple (graph mode). Asserts the invariant and anti-monotonicity."""
    view = _make_view(i, Q, None, role, root, mode)
    start, kids, order = _node_graph(view, Q)
    for node in order:
        e, qbar = node
        for k, q in enumerate(qbar):
            if q is not None and view.matches_below(q, e):
                raise InvariantError(f"invariant fails at {e} for q[{k}]")
        for c in kids[node]:
            if not _prec(c[1], qbar):
                raise InvariantError("assignment is not anti-monotone")
    if view.mode == "tree":
        return {e: qbar for e, qbar in order}
    return {node: node[1] for node in order}


# ---------------------------------------------------------------------------
# visible concepts


def visible_concepts(i: Interpretation, a: int, names: Iterable[str] | None = None, role: str | None = None) -> set:
    role = role or _single_role(i)
    names = set(names) if names is not None else set().union(*i.labels.values()) if i.labels else set()
    out = set()
    for b in i.succ(role, a):
        out |= i.labels[b] & names
    return out


# ---------------------------------------------------------------------------
# construction


def _single_role(i: Interpretation) -> str:
    roles = {r for r, _, _ in i.edges} | set(i.transitive)
    if len(roles) != 1:
        raise PreconditionError("expected exactly one (transitive) role")
    return roles.pop()


def _make_view(i, Q, tbox, role, root, mode) -> _View:
    role = role or _single_role(i)
    if role not in i.transitive:
        raise PreconditionError(f"role {role} is not transitive")
    if any(r != role for r, _, _ in i.edges):
        raise PreconditionError("interpretation uses roles other than the transitive one")
    for q in Q:
        if q.answer:
            raise PreconditionError("queries must be Boolean")
        if any(r != role for r in q.roles):
            raise PreconditionError(f"query {q.name} uses another role")
        if not is_acyclic(q):
            raise PreconditionError(f"query {q.name} is cyclic")
    if transitive_closure(i).edges != i.edges:
        raise PreconditionError("role is not transitively closed")
    sh = classify_shape(i)
    if mode == "auto":
        mode = "tree" if sh.is_transitive_tree and (root is None or root == sh.root) else "graph"
    if mode == "tree":
        if not sh.is_transitive_tree:
            raise PreconditionError("not a transitive-tree interpretation")
        root = sh.root
    else:
        if root is None:
            raise PreconditionError("graph mode needs a root")
        if set(i.domain) - {root} - i.succ(role, root):
            raise PreconditionError("root does not reach every element")
    names = set(tbox.concept_names()) if tbox is not None else set().union(*i.labels.values())
    return _View(i, role, root, mode, names)


class _Builder:
    def __init__(self, view: _View, kids: dict, order: list):
        self.view, self.kids = view, kids
        self.rank = {n: k for k, n in enumerate(order)}
        self.labels: dict = {}
        self.edges: set = set()
        self.origin: dict = {}
        self.cases: list = []
        self._desc: dict = {}
        self.used: set = set()

    def desc(self, node) -> list:
        """Virtual nodes reachable in ≥1 step, in BFS order."""
        if node not in self._desc:
            seen, out = set(), []
            todo = deque(self.kids[node])
            while todo:
                n = todo.popleft()
                if n in seen:
                    continue
                seen.add(n)
                out.append(n)
                todo.extend(self.kids[n])
            self._desc[node] = out
        return self._desc[node]

    def vc(self, node) -> frozenset:
        return self.view.vc(node[0])

    def copy(self, node) -> int:
        e = node[0]
        nid = e if e not in self.used else max(set(self.view.i.domain) | self.used) + 1
        self.used.add(nid)
        self.labels[nid] = self.view.i.labels[e]
        self.origin[nid] = e
        return nid

    def edge(self, a: int, b: int):
        self.edges.add((self.view.t, a, b))

    def witnesses(self, within: list, M: frozenset) -> list:
        out = []
        for A in sorted(M):
            for n in within:
                if A in self.view.i.labels[n[0]]:
                    if n not in out:
                        out.append(n)
                    break
        return out

    def build(self, a) -> int:
        M = self.vc(a)
        root = self.copy(a)
        if not M:
            self.cases.append((a, "base"))
            return root
        da = self.desc(a)
        dset = set(da)
        alpha = [a] + [b for b in da if b != a and self.vc(b) == M]
        aset = set(alpha)
        case1 = [b for b in alpha if not (set(self.desc(b)) & aset)]
        if case1:
            b = case1[0]
            cs = self.witnesses(self.desc(b), M)
            self.cases.append((a, "case1"))
            for c in cs:
                assert self.vc(c) < M
                self.edge(root, self.build(c))
            return root
        # case 2: b0 in a bottom strongly connected part of α_M
        b0 = None
        for b in alpha:
            if all(b in set(self.desc(y)) for y in self.desc(b) if y in aset):
                b0 = b
                break
        assert b0 is not None
        below = [y for y in self.desc(b0) if y in aset]
        qbar = below[0][1]
        if any(y[1] != qbar for y in below):
            raise InvariantError("q̄ not stable below the chosen b0")
        ds = self.witnesses(self.desc(b0), M)
        bs = [d for d in ds if self.vc(d) == M]
        cs = [d for d in ds if self.vc(d) != M]
        if not bs:
            # every witness already sees less: the case-1 shape suffices
            self.cases.append((a, "case2-flat"))
            for c in cs:
                self.edge(root, self.build(c))
            return root
        self.cases.append((a, "case2"))
        ids = [self.copy(b) for b in bs]
        prev = root
        for nid in ids:
            self.edge(prev, nid)
            prev = nid
        self.edge(ids[-1], ids[0])
        for c in cs:
            self.edge(ids[-1], self.build(c))
        return root


def shrink_transitive_tree(i: Interpretation, T: TBox | NormalTBox, Q: Sequence[CQ], root: int | None = None,
                           mode: str = "auto", role: str | None = None) -> ShrunkModel:
    """Finite J with types inherited from i, J ⊨ T and J ⊭ Q; the five
    properties are re-checked on the result (``ShrunkModel.checks``)."""
    tb = T if isinstance(T, NormalTBox) else normalize(T)
    view = _make_view(i, Q, tb, role, root, mode)
    bad = check_model(i, tb)
    if bad:
        raise PreconditionError(f"input violates the TBox: {bad[0]}")
    for k, q in enumerate(Q):
        if view.matches_below(q, view.root):
            raise PreconditionError(f"input matches query {q.name}")
    start, kids, order = _node_graph(view, Q)
    b = _Builder(view, kids, order)
    r = b.build(start)
    j = transitive_closure(Interpretation(dict(b.labels), frozenset(b.edges), {}, frozenset({view.t})))
    sm = ShrunkModel(j, r, b.origin, b.cases)
    sm.checks = verify_shrunk(sm, i, tb, Q, view.root, view.vc(view.root))
    return sm


def verify_shrunk(sm: ShrunkModel, i: Interpretation, T: NormalTBox, Q: Sequence[CQ], root: int,
                  root_vc: Iterable[str] | None = None) -> dict:
    j = sm.interp
    n = len(T.concept_names())
    checks = {
        "types": all(sm.origin[e] in i.labels and j.labels[e] == i.labels[sm.origin[e]] for e in j.domain),
        "size": len(j.domain) <= math.factorial(n + 1),
        "root": sm.origin.get(sm.root) == root,
        "model": not check_model(j, T),
        "no_match": not any(has_match(q, j) for q in Q),
    }
    if root_vc is not None:
        checks["size_vc"] = len(j.domain) <= math.factorial(len(set(root_vc)) + 1)
    return checks
