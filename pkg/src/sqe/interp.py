"""Finite interpretations: closure, model checking, CQ matching, shape
classification and unraveling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from .kb import (ABox, And, Bottom, CI, Concept, Exists, Forall, Name, NormalTBox, Not, Or, ParseError,
                 PropCI, ExistsCI, ForallCI, TBox, Top, declare_role, strip_comment)
from .query import CQ


@dataclass(frozen=True)
class Interpretation:
    labels: Mapping  # element id -> frozenset of concept names
    edges: frozenset = frozenset()  # (role, a, b)
    named: Mapping = field(default_factory=dict)  # individual -> element
    transitive: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "labels", {int(e): frozenset(t) for e, t in self.labels.items()})
        object.__setattr__(self, "edges", frozenset(self.edges))
        object.__setattr__(self, "transitive", frozenset(self.transitive))
        object.__setattr__(self, "named", dict(self.named))
        for _, a, b in self.edges:
            if a not in self.labels or b not in self.labels:
                raise ValueError(f"edge endpoint outside the domain: {a}, {b}")

    __hash__ = None

    @property
    def domain(self) -> list[int]:
        return sorted(self.labels)

    def tp(self, e: int) -> frozenset:
        return self.labels[e]

    @cached_property
    def _succ(self) -> dict:
        out: dict = {}
        for r, a, b in self.edges:
            out.setdefault(r, {}).setdefault(a, set()).add(b)
        return out

    @cached_property
    def _pred(self) -> dict:
        out: dict = {}
        for r, a, b in self.edges:
            out.setdefault(r, {}).setdefault(b, set()).add(a)
        return out

    @cached_property
    def _ext(self) -> dict:
        out: dict = {}
        for e, t in self.labels.items():
            for a in t:
                out.setdefault(a, set()).add(e)
        return out

    def succ(self, r: str, e: int) -> set:
        return self._succ.get(r, {}).get(e, set())

    def pred(self, r: str, e: int) -> set:
        return self._pred.get(r, {}).get(e, set())

    def ext(self, a: str) -> set:
        return self._ext.get(a, set())

    def role_ext(self, r: str) -> set:
        return {(a, b) for s, a, b in self.edges if s == r}

    @property
    def roles(self) -> set[str]:
        return {r for r, _, _ in self.edges}

    @property
    def concepts(self) -> set[str]:
        return set(self._ext)

    def all_succ(self, e: int) -> set:
        return {b for m in self._succ.values() for b in m.get(e, ())}

    def replace(self, **kw) -> "Interpretation":
        d = dict(labels=self.labels, edges=self.edges, named=self.named, transitive=self.transitive)
        d.update(kw)
        return Interpretation(**d)

    def restrict(self, elems: Iterable[int]) -> "Interpretation":
        s = set(elems)
        return Interpretation({e: self.labels[e] for e in s},
                              frozenset(x for x in self.edges if x[1] in s and x[2] in s),
                              {k: v for k, v in self.named.items() if v in s}, self.transitive)

    def __len__(self):
        return len(self.labels)


def closure_pairs(pairs: Iterable[tuple[int, int]]) -> set[tuple[int, int]]:
    succ: dict[int, set[int]] = {}
    for a, b in pairs:
        succ.setdefault(a, set()).add(b)
    out = set()
    for s in list(succ):
        seen, todo = set(), list(succ[s])
        while todo:
            v = todo.pop()
            if v in seen:
                continue
            seen.add(v)
            todo.extend(succ.get(v, ()))
        out.update((s, v) for v in seen)
    return out


def transitive_closure(i: Interpretation) -> Interpretation:
    edges = {x for x in i.edges if x[0] not in i.transitive}
    for t in i.transitive:
        edges.update((t, a, b) for a, b in closure_pairs(i.role_ext(t)))
    return i.replace(edges=frozenset(edges))


def is_closed(i: Interpretation) -> bool:
    return all(closure_pairs(i.role_ext(t)) == i.role_ext(t) for t in i.transitive)


# ---------------------------------------------------------------------------
# model checking


@dataclass(frozen=True)
class Violation:
    kind: str  # "ci", "transitivity", "abox"
    detail: str
    element: int | None = None

    def __str__(self):
        at = f" at {self.element}" if self.element is not None else ""
        return f"{self.kind}: {self.detail}{at}"


def holds_at(i: Interpretation, e: int, c: Concept) -> bool:
    if isinstance(c, Top):
        return True
    if isinstance(c, Bottom):
        return False
    if isinstance(c, Name):
        return c.name in i.labels[e]
    if isinstance(c, Not):
        return not holds_at(i, e, c.arg)
    if isinstance(c, And):
        return holds_at(i, e, c.left) and holds_at(i, e, c.right)
    if isinstance(c, Or):
        return holds_at(i, e, c.left) or holds_at(i, e, c.right)
    if isinstance(c, Exists):
        return any(holds_at(i, f, c.filler) for f in i.succ(c.role, e))
    if isinstance(c, Forall):
        return all(holds_at(i, f, c.filler) for f in i.succ(c.role, e))
    raise TypeError(c)


def normal_ci_holds(i: Interpretation, e: int, c) -> bool:
    t = i.labels[e]
    if isinstance(c, PropCI):
        return not c.lhs <= t or bool(c.rhs & t)
    if c.lhs is not None and c.lhs not in t:
        return True
    if isinstance(c, ExistsCI):
        return any(c.filler in i.labels[f] for f in i.succ(c.role, e))
    return all(c.filler in i.labels[f] for f in i.succ(c.role, e))


def _ci_violations(i: Interpretation, e: int, tbox) -> list[Violation]:
    out = []
    if isinstance(tbox, NormalTBox):
        for c in tbox.cis:
            if not normal_ci_holds(i, e, c):
                out.append(Violation("ci", str(c.as_ci()), e))
    else:
        for c in tbox.cis:
            if holds_at(i, e, c.left) and not holds_at(i, e, c.right):
                out.append(Violation("ci", str(c), e))
    return out


def check_model(i: Interpretation, tbox: TBox | NormalTBox) -> list[Violation]:
    out = []
    for t in sorted(i.transitive):
        ext = i.role_ext(t)
        missing = sorted(closure_pairs(ext) - ext)
        if missing:
            out.append(Violation("transitivity", f"{t} lacks {missing[0]}"))
    for e in i.domain:
        out.extend(_ci_violations(i, e, tbox))
    return out


def check_model_abox(i: Interpretation, abox: ABox) -> list[Violation]:
    out = []
    for ind in sorted(abox.individuals()):
        if ind not in i.named:
            out.append(Violation("abox", f"individual {ind} not interpreted"))
    for a, x in sorted(abox.concepts):
        if x in i.named and a not in i.labels[i.named[x]]:
            out.append(Violation("abox", f"{a}({x})", i.named[x]))
    for r, x, y in sorted(abox.roles):
        if x in i.named and y in i.named and (r, i.named[x], i.named[y]) not in i.edges:
            out.append(Violation("abox", f"{r}({x},{y})", i.named[x]))
    return out


def check_local(i: Interpretation, a: int, tbox_r) -> list[Violation]:
    if a not in i.labels:
        raise ValueError(f"element {a} not in domain")
    return _ci_violations(i, a, tbox_r)


# ---------------------------------------------------------------------------
# matching


def _var_order(q: CQ, bound: set[str]) -> list[str]:
    nbrs: dict[str, set[str]] = {v: set() for v in q.vars}
    deg: dict[str, int] = {v: 0 for v in q.vars}
    for a in q.atoms:
        for v in a[1:]:
            deg[v] += 1
        if len(a) == 3:
            nbrs[a[1]].add(a[2])
            nbrs[a[2]].add(a[1])
    order, done = [], set(bound)
    rest = sorted(q.vars - done)
    while rest:
        best = max(rest, key=lambda v: (len(nbrs[v] & done), deg[v], [-ord(c) for c in v]))
        order.append(best)
        done.add(best)
        rest.remove(best)
    return order


def find_matches(q: CQ, i: Interpretation, seed: Mapping | None = None,
                 limit: int | None = None) -> list[dict]:
    return list(iter_matches(q, i, seed, limit))


def iter_matches(q: CQ, i: Interpretation, seed: Mapping | None = None,
                 limit: int | None = None) -> Iterator[dict]:
    """Backtracking homomorphism search; most-constrained variable first,
    candidates in element-id order."""
    seed = dict(seed or {})
    extra = set(seed) - q.vars
    if extra:
        raise ValueError(f"seed binds a variable not in the query: {sorted(extra)[0]}")
    if not i.labels:
        return
    labels = {v: set() for v in q.vars}
    for a in q.unary:
        labels[a[1]].add(a[0])
    binary = q.binary
    for v, e in seed.items():
        if e not in i.labels or not labels[v] <= i.labels[e]:
            return
    for r, x, y in binary:
        if x in seed and y in seed and (r, seed[x], seed[y]) not in i.edges:
            return
    order = _var_order(q, set(seed))
    pos = {v: k for k, v in enumerate(order)}
    # atoms checked when their later variable is assigned
    checks: dict[str, list] = {v: [] for v in order}
    for r, x, y in binary:
        px, py = pos.get(x, -1), pos.get(y, -1)
        if px < 0 and py < 0:
            continue
        checks[order[max(px, py)]].append((r, x, y))
    domain = i.domain
    found = 0
    delta = dict(seed)

    def cands(v):
        best = None
        for r, x, y in checks[v]:
            if x == v and y == v:
                continue
            if x == v:
                s = i.pred(r, delta[y])
            else:
                s = i.succ(r, delta[x])
            if best is None or len(s) < len(best):
                best = s
        if best is None:
            if labels[v]:
                sets = sorted((i.ext(a) for a in labels[v]), key=len)
                best = sets[0]
            else:
                return domain
        return sorted(best)

    def ok(v, e):
        if not labels[v] <= i.labels[e]:
            return False
        for r, x, y in checks[v]:
            if (r, delta[x], delta[y]) not in i.edges:
                return False
        return True

    def rec(k):
        nonlocal found
        if k == len(order):
            found += 1
            yield dict(delta)
            return
        v = order[k]
        for e in cands(v):
            delta[v] = e
            if ok(v, e):
                yield from rec(k + 1)
                if limit is not None and found >= limit:
                    del delta[v]
                    return
            del delta[v]

    yield from rec(0)


def has_match(q: CQ, i: Interpretation, seed: Mapping | None = None) -> bool:
    for _ in iter_matches(q, i, seed, 1):
        return True
    return False


def entails_on(i: Interpretation, Q: Iterable[CQ], answers: tuple = ()) -> bool:
    ans = tuple(i.named[a] if isinstance(a, str) else a for a in answers)
    for q in Q:
        if len(q.answer) != len(ans):
            raise ValueError(f"answer arity {len(q.answer)} does not match tuple of length {len(ans)}")
        seed = {}
        consistent = True
        for v, e in zip(q.answer, ans):
            if seed.setdefault(v, e) != e:
                consistent = False
        if consistent and has_match(q, i, seed):
            return True
    return False


# ---------------------------------------------------------------------------
# shapes


def tree_root(i: Interpretation) -> int | None:
    """Root of G_I when it is a tree (no parallel edges), else None."""
    indeg: dict[int, int] = {e: 0 for e in i.labels}
    pairs = set()
    for _, a, b in i.edges:
        if (a, b) in pairs:
            return None
        pairs.add((a, b))
        indeg[b] += 1
    roots = [e for e, d in indeg.items() if d == 0]
    if len(roots) != 1 or any(d > 1 for d in indeg.values()):
        return None
    seen, todo = {roots[0]}, [roots[0]]
    while todo:
        v = todo.pop()
        for w in i.all_succ(v):
            if w in seen:
                return None
            seen.add(w)
            todo.append(w)
    return roots[0] if len(seen) == len(i.labels) else None


def _forest_candidate(i: Interpretation, theta: set[int]) -> Interpretation | None:
    """The only possible underlying structure: edges inside theta plus, for
    every other element, its unique closest incoming edge."""
    edges = {x for x in i.edges if x[1] in theta and x[2] in theta}
    for e in i.domain:
        if e in theta:
            continue
        inc = [(r, a) for r, a, b in i.edges if b == e and a != e]
        if not inc:
            return None
        plain = [x for x in inc if x[0] not in i.transitive]
        if plain:
            if len(inc) != 1:
                return None
            edges.add((plain[0][0], plain[0][1], e))
            continue
        roles = {r for r, _ in inc}
        if len(roles) != 1:
            return None
        t = roles.pop()
        preds = {a for _, a in inc}
        parent = [d for d in preds if preds - {d} <= i.pred(t, d)]
        if len(parent) > 1 and set(parent) <= theta:
            # a transitive cycle inside theta; any member works, take the least
            parent = [min(parent)]
        if len(parent) != 1:
            return None
        edges.add((t, parent[0], e))
    return i.replace(edges=frozenset(edges))


@dataclass
class Shape:
    kind: str  # "tree" | "transitive-tree" | "theta-forest" | "other"
    root: int | None = None
    underlying: Interpretation | None = None  # tree whose closure is i
    trees: dict | None = None  # theta element -> element set of its tree

    @property
    def is_transitive_tree(self) -> bool:
        return self.underlying is not None


def _as_transitive_tree(i: Interpretation):
    roots = [e for e in i.domain if not any(b == e for _, _, b in i.edges)]
    if len(roots) != 1:
        return None
    base = _forest_candidate(i, {roots[0]})
    if base is None or tree_root(base) != roots[0]:
        return None
    if transitive_closure(base).edges != i.edges:
        return None
    return roots[0], base


def classify_shape(i: Interpretation, theta: Iterable | None = None) -> Shape:
    tt = _as_transitive_tree(i)
    if tree_root(i) is not None:
        r = tree_root(i)
        return Shape("tree", r, tt[1] if tt else None)
    if tt:
        return Shape("transitive-tree", tt[0], tt[1])
    if theta is not None:
        th = {i.named[a] if isinstance(a, str) else a for a in theta}
        trees = theta_trees(i, th)
        if trees is not None:
            return Shape("theta-forest", trees=trees)
    return Shape("other")


def theta_trees(i: Interpretation, theta: set[int]) -> dict | None:
    """Element sets of the trees induced by a Θ-forest, or None."""
    if not theta <= set(i.labels):
        return None
    base = _forest_candidate(i, theta)
    if base is None:
        return None
    tree_edges = {x for x in base.edges if not (x[1] in theta and x[2] in theta)}
    parent = {b: a for _, a, b in tree_edges}
    if len(parent) != len(tree_edges):
        return None
    owner = {}
    for e in i.domain:
        path, v = [], e
        while v not in theta:
            path.append(v)
            v = parent.get(v)
            if v is None or len(path) > len(i.labels):
                return None
        owner[e] = v
    trees = {a: {e for e in i.domain if owner[e] == a} for a in theta}
    # tree edges may not connect different trees
    if any(owner[a] != owner[b] for _, a, b in tree_edges):
        return None
    closed = transitive_closure(base.replace(edges=frozenset(base.edges)))
    if closed.edges != i.edges:
        return None
    return trees


# ---------------------------------------------------------------------------
# unraveling


def unravel_paths(i: Interpretation, root: int, depth_cap: int) -> tuple[Interpretation, dict]:
    """Unraveling from root up to depth_cap; returns (tree, node -> path).

    A path is (root, (r1, e1), (r2, e2), ...)."""
    if root not in i.labels:
        raise ValueError(f"root {root} not in domain")
    paths = {0: (root,)}
    labels = {0: i.labels[root]}
    edges = set()
    q = deque([(0, root, 0)])
    nxt = 1
    out_edges = sorted(i.edges)
    by_src: dict[int, list] = {}
    for r, a, b in out_edges:
        by_src.setdefault(a, []).append((r, b))
    while q:
        node, end, d = q.popleft()
        if d >= depth_cap:
            continue
        for r, b in by_src.get(end, ()):
            paths[nxt] = paths[node] + ((r, b),)
            labels[nxt] = i.labels[b]
            edges.add((r, node, nxt))
            q.append((nxt, b, d + 1))
            nxt += 1
    named = {k: 0 for k, v in i.named.items() if v == root}
    return Interpretation(labels, frozenset(edges), named, i.transitive), paths


def unravel(i: Interpretation, root: int, depth_cap: int) -> Interpretation:
    return unravel_paths(i, root, depth_cap)[0]


def path_end(p: tuple) -> int:
    return p[-1][1] if len(p) > 1 else p[0]


# ---------------------------------------------------------------------------
# text format


def parse_interp(text: str) -> Interpretation:
    roles: dict[str, bool] = {}
    labels, edges, named = {}, set(), {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = strip_comment(raw).strip()
        if not line:
            continue
        kw = line.split()[0]
        rest = line[len(kw):].strip()
        try:
            if kw in ("trans", "role"):
                for n in rest.split():
                    declare_role(roles, n, kw == "trans", lineno, raw.find(n) + 1)
            elif kw == "elem":
                ident, _, lab = rest.partition(" ")
                lab = lab.strip()
                if lab and not (lab.startswith("{") and lab.endswith("}")):
                    raise ParseError("expected {A,B,...}", lineno, raw.find(lab) + 1)
                names = [x.strip() for x in lab[1:-1].split(",") if x.strip()] if lab else []
                labels[int(ident)] = frozenset(names)
            elif kw == "edge":
                r, a, b = rest.split()
                edges.add((r, int(a), int(b)))
            elif kw == "named":
                ind, e = rest.split()
                named[ind] = int(e)
            else:
                raise ParseError(f"unknown statement {kw!r}", lineno, 1)
        except ValueError as ex:
            if isinstance(ex, ParseError):
                raise
            raise ParseError(f"malformed {kw} line", lineno, 1) from None
    for r, a, b in edges:
        for e in (a, b):
            labels.setdefault(e, frozenset())
    for e in named.values():
        labels.setdefault(e, frozenset())
    trans = frozenset(r for r, t in roles.items() if t)
    return Interpretation(labels, frozenset(edges), named, trans)


def serialize_interp(i: Interpretation, declare: Iterable[str] = ()) -> str:
    lines = [f"trans {t}" for t in sorted(i.transitive)]
    plain = sorted((i.roles | set(declare)) - i.transitive)
    lines += [f"role {r}" for r in plain]
    for e in i.domain:
        lines.append(f"elem {e} {{{','.join(sorted(i.labels[e]))}}}")
    for r, a, b in sorted(i.edges):
        lines.append(f"edge {r} {a} {b}")
    for k, v in sorted(i.named.items()):
        lines.append(f"named {k} {v}")
    return "\n".join(lines) + "\n"
