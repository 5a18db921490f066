"""Conjunctive queries: text format, graph predicates, clusters, fork
elimination and matchability into transitive-tree interpretations."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .kb import IDENT, ParseError, declare_role, strip_comment


@dataclass(frozen=True)
class CQ:
    """Atoms are ``(A, x)`` (unary) or ``(r, x, y)`` (binary)."""

    atoms: frozenset
    answer: tuple = ()
    name: str = field(default="q", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", frozenset(self.atoms))
        object.__setattr__(self, "answer", tuple(self.answer))
        missing = set(self.answer) - self.vars
        if missing and not (len(self.answer) == 1 and not self.atoms):
            raise ValueError(f"answer variable {sorted(missing)[0]} does not occur in the query")

    @property
    def vars(self) -> set[str]:
        out = set(self.answer)
        for a in self.atoms:
            out.update(a[1:])
        return out

    @property
    def unary(self) -> list[tuple]:
        return sorted(a for a in self.atoms if len(a) == 2)

    @property
    def binary(self) -> list[tuple]:
        return sorted(a for a in self.atoms if len(a) == 3)

    @property
    def roles(self) -> set[str]:
        return {a[0] for a in self.atoms if len(a) == 3}

    @property
    def is_boolean(self) -> bool:
        return not self.answer

    def with_answer(self, answer: Iterable[str]) -> "CQ":
        return CQ(self.atoms, tuple(answer), self.name)

    def rename(self, m: Mapping[str, str]) -> "CQ":
        f = lambda v: m.get(v, v)
        atoms = frozenset((a[0], f(a[1])) if len(a) == 2 else (a[0], f(a[1]), f(a[2])) for a in self.atoms)
        return CQ(atoms, tuple(f(v) for v in self.answer), self.name)

    def restrict(self, vs: Iterable[str], answer: tuple | None = None) -> "CQ":
        vs = set(vs)
        atoms = frozenset(a for a in self.atoms if set(a[1:]) <= vs)
        return CQ(atoms, self.answer if answer is None else answer, self.name)

    def __str__(self):
        return format_cq(self)

    def __len__(self):
        return len(self.atoms)


def format_atom(a: tuple) -> str:
    return f"{a[0]}({','.join(a[1:])})"


def format_cq(q: CQ, name: str | None = None) -> str:
    atoms = ", ".join(format_atom(a) for a in sorted(q.atoms, key=lambda a: (len(a), a)))
    return f"query {name or q.name}({','.join(q.answer)}): {atoms}"


_QLINE = re.compile(r"^query\s+([A-Za-z_][\w']*)\s*(?:\(([^)]*)\))?\s*:(.*)$")
_ATOM = re.compile(r"\s*([A-Za-z_][\w']*)\s*\(([^)]*)\)\s*(,|$)")


def parse_cq(line: str, lineno: int = 1, roles: dict[str, bool] | None = None) -> CQ:
    m = _QLINE.match(line.strip())
    if not m:
        raise ParseError("expected 'query <name>(<vars>): atoms'", lineno, 1)
    name, ans, body = m.group(1), m.group(2) or "", m.group(3)
    answer = tuple(v.strip() for v in ans.split(",") if v.strip())
    for v in answer:
        if not IDENT.match(v):
            raise ParseError(f"bad variable {v!r}", lineno, line.find(v) + 1)
    atoms, pos = set(), 0
    base = line.find(body) if body else len(line)
    while body[pos:].strip():
        am = _ATOM.match(body, pos)
        if not am:
            raise ParseError("malformed atom", lineno, base + pos + len(body[pos:]) - len(body[pos:].lstrip()) + 1)
        pred = am.group(1)
        args = [v.strip() for v in am.group(2).split(",")]
        if not all(IDENT.match(v) for v in args) or len(args) not in (1, 2):
            raise ParseError(f"bad arguments for {pred}", lineno, base + am.start(1) + 1)
        if len(args) == 2 and roles is not None and pred not in roles:
            raise ParseError(f"undeclared role {pred}", lineno, base + am.start(1) + 1)
        atoms.add((pred, *args))
        pos = am.end()
    try:
        return CQ(frozenset(atoms), answer, name)
    except ValueError as e:
        raise ParseError(str(e), lineno, 1) from None


@dataclass
class QueryFile:
    queries: list
    transitive: frozenset = frozenset()
    plain: frozenset = frozenset()


def parse_query_file(text: str) -> QueryFile:
    """Query lines, optionally preceded by ``trans``/``role`` declarations.

    Roles are only checked against declarations when the file declares some."""
    roles: dict[str, bool] = {}
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = strip_comment(raw).rstrip()
        if not line.strip():
            continue
        kw = line.split()[0]
        if kw in ("trans", "role"):
            for n in line.split()[1:]:
                declare_role(roles, n, kw == "trans", lineno, line.find(n) + 1)
        else:
            lines.append((lineno, line))
    qs = [parse_cq(l, n, roles if roles else None) for n, l in lines]
    arities = {len(q.answer) for q in qs}
    if len(arities) > 1:
        raise ParseError("queries in one file must share the answer arity")
    return QueryFile(qs, frozenset(r for r, t in roles.items() if t), frozenset(r for r, t in roles.items() if not t))


def parse_queries(text: str) -> list[CQ]:
    return parse_query_file(text).queries


def serialize_queries(qs: Iterable[CQ], transitive: Iterable[str] = (), plain: Iterable[str] = ()) -> str:
    lines = [f"trans {r}" for r in sorted(transitive)] + [f"role {r}" for r in sorted(plain)]
    for i, q in enumerate(qs):
        lines.append(format_cq(q))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graph structure


def _components(vs: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[set[str]]:
    parent = {v: v for v in vs}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for x, y in edges:
        parent[find(x)] = find(y)
    groups: dict[str, set[str]] = {}
    for v in parent:
        groups.setdefault(find(v), set()).add(v)
    return sorted(groups.values(), key=lambda s: sorted(s))


def components(q: CQ) -> list[set[str]]:
    return _components(q.vars, [(a[1], a[2]) for a in q.binary])


def component_queries(q: CQ) -> list[CQ]:
    return [q.restrict(c, answer=tuple(v for v in q.answer if v in c)) for c in components(q)]


def is_connected(q: CQ) -> bool:
    return len(components(q)) <= 1


def has_directed_cycle(vs: Iterable[str], edges: Iterable[tuple[str, str]]) -> bool:
    succ: dict[str, set[str]] = {v: set() for v in vs}
    for x, y in edges:
        succ.setdefault(x, set()).add(y)
        succ.setdefault(y, set())
    state: dict[str, int] = {}
    for s in sorted(succ):
        if s in state:
            continue
        stack = [(s, iter(sorted(succ[s])))]
        state[s] = 1
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[v] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                return True
            elif nxt not in state:
                state[nxt] = 1
                stack.append((nxt, iter(sorted(succ[nxt]))))
    return False


def is_acyclic(q: CQ) -> bool:
    return not has_directed_cycle(q.vars, [(a[1], a[2]) for a in q.binary])


def initial_vars(q: CQ) -> set[str]:
    targets = {a[2] for a in q.binary}
    return q.vars - targets


@dataclass(frozen=True)
class GraphInfo:
    acyclic: bool
    connected: bool
    rooted: bool
    initial_vars: frozenset


def graph_predicates(q: CQ) -> GraphInfo:
    conn = is_connected(q)
    return GraphInfo(is_acyclic(q), conn, conn and not q.is_boolean, frozenset(initial_vars(q)))


def reachable(q: CQ, start: Iterable[str]) -> set[str]:
    succ: dict[str, set[str]] = {}
    for a in q.binary:
        succ.setdefault(a[1], set()).add(a[2])
    seen = set(start)
    todo = list(seen)
    while todo:
        v = todo.pop()
        for w in succ.get(v, ()):
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


# ---------------------------------------------------------------------------
# clusters


@dataclass(frozen=True)
class Cluster:
    role: str
    atoms: frozenset

    @property
    def vars(self) -> set[str]:
        return {v for a in self.atoms for v in a[1:]}

    @property
    def initial(self) -> set[str]:
        return self.vars - {a[2] for a in self.atoms}

    @property
    def key(self):
        return (self.role, tuple(sorted(self.atoms)))

    def __lt__(self, other):
        return self.key < other.key

    def __str__(self):
        return "{" + ", ".join(format_atom(a) for a in sorted(self.atoms)) + "}"


def clusters(q: CQ, transitive: Iterable[str]) -> list[Cluster]:
    trans = set(transitive)
    out = []
    by_role: dict[str, list[tuple]] = {}
    for a in q.binary:
        by_role.setdefault(a[0], []).append(a)
    for r, atoms in sorted(by_role.items()):
        if r in trans:
            vs = {v for a in atoms for v in a[1:]}
            for comp in _components(vs, [(a[1], a[2]) for a in atoms]):
                out.append(Cluster(r, frozenset(a for a in atoms if a[1] in comp)))
        else:
            src: dict[str, set] = {}
            for a in atoms:
                src.setdefault(a[1], set()).add(a)
            out.extend(Cluster(r, frozenset(s)) for s in src.values())
    return sorted(out)


# ---------------------------------------------------------------------------
# fork elimination


class _UF:
    def __init__(self, vs):
        self.p = {v: v for v in vs}

    def find(self, v):
        while self.p[v] != v:
            self.p[v] = self.p[self.p[v]]
            v = self.p[v]
        return v

    def union(self, a, b) -> bool:
        a, b = self.find(a), self.find(b)
        if a == b:
            return False
        self.p[max(a, b)] = min(a, b)
        return True


def _representatives(uf: _UF, vs: Iterable[str], answer: tuple) -> dict[str, str]:
    classes: dict[str, list[str]] = {}
    for v in vs:
        classes.setdefault(uf.find(v), []).append(v)
    rep = {}
    for members in classes.values():
        r = min(members)
        for a in answer:
            if a in members:
                r = a
                break
        for v in members:
            rep[v] = r
    return rep


@dataclass(frozen=True)
class ForkQuotient:
    rep: Mapping  # var -> representative
    query: CQ

    def cls(self, v: str) -> str:
        return self.rep[v]

    @property
    def classes(self) -> list[frozenset]:
        out: dict[str, set] = {}
        for v, r in self.rep.items():
            out.setdefault(r, set()).add(v)
        return sorted((frozenset(s) for s in out.values()), key=sorted)


def _fork_rounds(q: CQ, transitive: set[str], recompute: bool) -> dict[str, str]:
    vs = sorted(q.vars)
    uf = _UF(vs)
    orig_clusters = [c for c in clusters(q, transitive) if c.role in transitive]
    changed = True
    while changed:
        changed = False
        rep = _representatives(uf, vs, ())
        cur = q.rename(rep)
        # (†): shared target under a non-transitive role
        src_by_target: dict[tuple, list[str]] = {}
        for r, x, z in cur.binary:
            if r not in transitive:
                src_by_target.setdefault((r, z), []).append(x)
        for srcs in src_by_target.values():
            for s in srcs[1:]:
                changed |= uf.union(srcs[0], s)
        # (‡): non-transitive edges ending in the same t-cluster
        tcl = [c for c in clusters(cur, transitive) if c.role in transitive] if recompute else \
            [Cluster(c.role, frozenset((r, rep[x], rep[y]) for r, x, y in c.atoms)) for c in orig_clusters]
        for c in tcl:
            cv = c.vars
            ends = sorted({z for r, x, z in cur.binary if r != c.role and z in cv})
            for z in ends[1:]:
                changed |= uf.union(ends[0], z)
    return _representatives(uf, vs, q.answer)


def fork_eliminate(q: CQ, transitive: Iterable[str], recompute: bool = True,
                   allow_multiple_transitive: bool = False) -> ForkQuotient:
    """Least equivalence closed under the two fork rules, with the quotient query.

    ``recompute`` re-derives t-clusters on each intermediate quotient; with
    False the t-clusters of the input query are used (mapped through ≈)."""
    trans = set(transitive)
    if len(q.roles & trans) > 1 and not allow_multiple_transitive:
        raise ValueError("fork elimination needs at most one transitive role")
    rep = _fork_rounds(q, trans, recompute)
    return ForkQuotient(rep, q.rename(rep))


def naive_fork_partition(q: CQ, transitive: Iterable[str], recompute: bool = True) -> list[frozenset]:
    """Reference fixpoint over all atom pairs (used as a test oracle)."""
    trans = set(transitive)
    vs = sorted(q.vars)
    cls = {v: frozenset([v]) for v in vs}
    base_t = [c for c in clusters(q, trans) if c.role in trans]
    while True:
        changed = False

        def merge(a, b):
            nonlocal changed
            if cls[a] is not cls[b] and cls[a] != cls[b]:
                new = cls[a] | cls[b]
                for v in new:
                    cls[v] = new
                changed = True

        rep = {v: min(cls[v]) for v in vs}
        cur = q.rename(rep)
        atoms = q.binary
        for a in atoms:
            for b in atoms:
                if a[0] == b[0] and a[0] not in trans and rep[a[2]] == rep[b[2]]:
                    merge(a[1], b[1])
        tcl = [c for c in clusters(cur, trans) if c.role in trans] if recompute else \
            [Cluster(c.role, frozenset((r, rep[x], rep[y]) for r, x, y in c.atoms)) for c in base_t]
        for c in tcl:
            cv = c.vars
            for a in atoms:
                for b in atoms:
                    if a[0] != c.role and b[0] != c.role and rep[a[2]] in cv and rep[b[2]] in cv:
                        merge(a[2], b[2])
        if not changed:
            break
    return sorted(set(cls.values()), key=sorted)


# ---------------------------------------------------------------------------
# matchability into transitive-tree interpretations


def rewrite_r1_r2(q: CQ, transitive: Iterable[str]) -> CQ:
    trans = set(transitive)
    cur = q
    while True:
        m = None
        seen: dict[tuple, str] = {}
        for r, x, z in cur.binary:
            if r in trans:
                continue
            if (r, z) in seen and seen[(r, z)] != x:
                m = (seen[(r, z)], x)
                break
            seen[(r, z)] = x
        if m is None:
            for c in clusters(cur, trans):
                if c.role in trans:
                    ini = sorted(c.initial)
                    if len(ini) > 1:
                        m = (ini[0], ini[1])
                        break
        if m is None:
            return cur
        a, b = m
        keep, drop = (a, b) if (a in cur.answer or (b not in cur.answer and a < b)) else (b, a)
        cur = cur.rename({drop: keep})


def tree_match_conditions(q: CQ) -> bool:
    if not is_acyclic(q):
        return False
    into: dict[str, str] = {}
    for r, x, z in q.binary:
        if into.setdefault(z, r) != r:
            return False
    return True


def tree_matchable(q: CQ, transitive: Iterable[str]) -> bool:
    """Whether some transitive-tree interpretation satisfies q (read as Boolean)."""
    if not is_connected(q):
        raise ValueError("tree_matchable needs a connected query")
    return tree_match_conditions(rewrite_r1_r2(q, transitive))
