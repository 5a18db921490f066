"""Cluster trees, pseudo-tree queries (PTQs), compilation of CQs into PTQs,
subPTQs and tree-query expansion of unary CQs."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

from .query import (CQ, Cluster, clusters, components, fork_eliminate, initial_vars, is_acyclic,
                    is_connected, rewrite_r1_r2, tree_match_conditions)


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterTree:
    root: Cluster
    parent: tuple  # ((child, parent), ...)
    entry: tuple  # ((cluster, entry variable), ...)

    @property
    def parent_map(self) -> dict:
        return dict(self.parent)

    @property
    def entry_map(self) -> dict:
        return dict(self.entry)

    @property
    def nodes(self) -> list[Cluster]:
        return [self.root] + [c for c, _ in self.parent]

    def children(self, c: Cluster) -> list[Cluster]:
        return [x for x, p in self.parent if p == c]

    def subtree(self, c: Cluster) -> list[Cluster]:
        out, todo = [], [c]
        while todo:
            d = todo.pop(0)
            out.append(d)
            todo.extend(self.children(d))
        return out

    def restricted(self, c: Cluster) -> "ClusterTree":
        sub = self.subtree(c)
        s = set(sub)
        return ClusterTree(c, tuple((x, p) for x, p in self.parent if x in s and x != c),
                           tuple((x, v) for x, v in self.entry if x in s and x != c))


def _shares(c: Cluster, d: Cluster) -> set[str]:
    return c.vars & d.vars


def validate_cluster_tree(cls: list[Cluster], root: Cluster, parent: dict) -> dict | None:
    """Check conditions (a)-(c); returns entry variables or None."""
    def siblings(c, d):
        return c in parent and d in parent and parent[c] == parent[d]

    for c, d in itertools.combinations(cls, 2):
        sh = _shares(c, d)
        if not sh:
            continue
        if parent.get(c) == d or parent.get(d) == c:
            continue
        if siblings(c, d):
            if not sh <= parent[c].vars:  # (b)
                return None
            continue
        return None  # (a)
    entry = {}
    for c, p in parent.items():
        sh = _shares(c, p)
        if len(sh) != 1:
            return None
        v = next(iter(sh))
        if v not in c.initial:
            return None
        entry[c] = v
    return entry


def cluster_tree_for(q: CQ, root: Cluster, transitive: Iterable[str]) -> ClusterTree | None:
    cls = clusters(q, transitive)
    if root not in cls:
        raise ValueError("root is not a cluster of the query")
    parent: dict = {}
    seen = {root}
    order = deque([root])
    while order:
        c = order.popleft()
        for d in cls:
            if d not in seen and _shares(c, d):
                seen.add(d)
                parent[d] = c
                order.append(d)
    if len(seen) != len(cls):
        return None
    entry = validate_cluster_tree(cls, root, parent)
    if entry is None:
        return None
    rank = {c: k for k, c in enumerate(cls)}
    par = tuple(sorted(parent.items(), key=lambda kv: rank[kv[0]]))
    ent = tuple(sorted(entry.items(), key=lambda kv: rank[kv[0]]))
    return ClusterTree(root, par, ent)


def root_clusters(q: CQ, transitive: Iterable[str]) -> list[Cluster]:
    return [c for c in clusters(q, transitive) if cluster_tree_for(q, c, transitive) is not None]


def _t_clusters_acyclic(q: CQ, transitive) -> bool:
    trans = set(transitive)
    for c in clusters(q, trans):
        if c.role in trans and not is_acyclic(CQ(c.atoms)):
            return False
    return True


def is_boolean_ptq(q: CQ, transitive: Iterable[str]) -> bool:
    trans = set(transitive)
    if not is_connected(q) or not q.vars:
        return False
    if not q.binary:
        return True
    return bool(root_clusters(q, trans)) and _t_clusters_acyclic(q, trans)


def is_unary_ptq(q: CQ, transitive: Iterable[str]) -> bool:
    trans = set(transitive)
    if len(q.answer) != 1 or not is_boolean_ptq(q, trans):
        return False
    x = q.answer[0]
    if not q.binary:
        return True
    if x not in initial_vars(q):
        return False
    mine = [c for c in clusters(q, trans) if x in c.vars]
    return len(mine) == 1 and cluster_tree_for(q, mine[0], trans) is not None


@dataclass(frozen=True)
class PTQ:
    query: CQ
    tree: ClusterTree | None  # None for a query without binary atoms

    @property
    def answer(self) -> tuple:
        return self.query.answer


@dataclass(frozen=True)
class SubPTQ:
    query: CQ  # unary
    tree: ClusterTree

    @property
    def var(self) -> str:
        return self.query.answer[0]


def _check_fragment(q: CQ, trans: set[str], multi: bool = False):
    if len(q.roles & trans) > 1 and not multi:
        raise CompileError("query uses more than one transitive role")
    if not is_connected(q):
        raise CompileError("query is not connected")


def leadsto(q: CQ, trans: set[str]) -> dict:
    cls = clusters(q, trans)
    rel: dict = {c: set() for c in cls}
    for ci, cj in itertools.permutations(cls, 2):
        for v in _shares(ci, cj):
            if v in cj.initial and (ci.role in trans or v not in ci.initial):
                rel[ci].add(cj)
                break
    return rel


def _relation_acyclic(rel: dict) -> bool:
    state: dict = {}

    def dfs(v):
        state[v] = 1
        for w in rel[v]:
            if state.get(w) == 1 or (w not in state and not dfs(w)):
                return False
        state[v] = 2
        return True

    return all(v in state or dfs(v) for v in sorted(rel))


def leadsto_forest_tree(q: CQ, trans: set[str]) -> tuple[Cluster, dict] | None:
    """Child relation (A)-(C) on the leads-to relation, merged into one tree
    under the root of the least-index forest component."""
    rel = leadsto(q, trans)
    cls = sorted(rel)
    parent: dict = {}
    for ci in cls:
        for cj in sorted(rel[ci]):
            ti, tj = ci.role in trans, cj.role in trans
            child = tj or (not ti and not tj) or (
                ti and not tj and not any(d.role not in trans and cj in rel[d] for d in cls))
            if child:
                if cj in parent and parent[cj] != ci:
                    return None
                parent[cj] = ci
    roots = [c for c in cls if c not in parent]
    if not roots:
        return None
    for r in roots[1:]:
        parent[r] = roots[0]
    return roots[0], parent


def _tree_for_answer(q: CQ, trans: set[str]) -> ClusterTree | None:
    x = q.answer[0]
    mine = [c for c in clusters(q, trans) if x in c.vars]
    if len(mine) != 1:
        return None
    return cluster_tree_for(q, mine[0], trans)


def compile_boolean_ptq(q: CQ, transitive: Iterable[str], allow_multiple_transitive: bool = False) -> PTQ | None:
    """Equivalent Boolean PTQ over transitive-tree interpretations, or None
    when q has no match into any of them.

    With ``allow_multiple_transitive`` the same construction runs on queries
    with several transitive roles; None then only means the construction
    failed, not that q is unmatchable."""
    trans = set(transitive)
    q = q.with_answer(())
    _check_fragment(q, trans, allow_multiple_transitive)
    qq = fork_eliminate(q, trans, allow_multiple_transitive=allow_multiple_transitive).query
    if not tree_match_conditions(qq) or not _relation_acyclic(leadsto(qq, trans)):
        return None
    if not qq.binary:
        return PTQ(qq, None)
    built = leadsto_forest_tree(qq, trans)
    if built is None or validate_cluster_tree(clusters(qq, trans), built[0], built[1]) is None:
        raise CompileError("cluster forest construction failed on " + str(qq))
    roots = root_clusters(qq, trans)
    return PTQ(qq, cluster_tree_for(qq, roots[0], trans))


def compile_unary_ptqs(q: CQ, transitive: Iterable[str]) -> list[PTQ] | None:
    """Unary PTQs whose conjunction is equivalent to q(x) at the root of
    transitive-tree interpretations; None when no rooted match exists."""
    trans = set(transitive)
    if len(q.answer) != 1:
        raise CompileError("unary compilation needs exactly one answer variable")
    _check_fragment(q, trans)
    fq = fork_eliminate(q, trans)
    qq = fq.query
    x = qq.answer[0]
    if not tree_match_conditions(qq) or not _relation_acyclic(leadsto(qq, trans)):
        return None
    if x not in initial_vars(qq):
        return None
    # a rooted match also needs x initial after the matchability rewrite
    rw = rewrite_r1_r2(qq, trans)
    if not tree_match_conditions(rw) or rw.answer[0] not in initial_vars(rw):
        return None
    unary_x = frozenset(a for a in qq.atoms if len(a) == 2 and a[1] == x)
    if not qq.binary:
        return [PTQ(qq, None)]
    rest = [a for a in qq.binary if a[1] != x and a[2] != x]
    vs = qq.vars - {x}
    groups = _components_without(vs, rest)
    out = []
    for g in groups:
        atoms = unary_x | frozenset(a for a in qq.atoms if set(a[1:]) <= g | {x} and set(a[1:]) & g)
        sub = CQ(atoms, (x,), q.name)
        tree = _tree_for_answer(sub, trans)
        if tree is None or not _t_clusters_acyclic(sub, trans):
            raise CompileError("unary split is not a PTQ: " + str(sub))
        out.append(PTQ(sub, tree))
    return out


def _components_without(vs: set[str], atoms: list) -> list[set[str]]:
    parent = {v: v for v in vs}

    def find(v):
        while parent[v] != v:
            v = parent[v]
        return v

    for _, a, b in atoms:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict = {}
    for v in vs:
        groups.setdefault(find(v), set()).add(v)
    return sorted(groups.values(), key=sorted)


def ptq_of(q: CQ, transitive: Iterable[str]) -> PTQ:
    """Wrap a query that already is a PTQ, fixing its canonical cluster tree."""
    trans = set(transitive)
    if not q.binary:
        if len(q.vars) > 1:
            raise CompileError("not a PTQ")
        return PTQ(q, None)
    if q.answer:
        if not is_unary_ptq(q, trans):
            raise CompileError("not a unary PTQ: " + str(q))
        return PTQ(q, _tree_for_answer(q, trans))
    if not is_boolean_ptq(q, trans):
        raise CompileError("not a Boolean PTQ: " + str(q))
    return PTQ(q, cluster_tree_for(q, root_clusters(q, trans)[0], trans))


def subtree_query(q: CQ, tree: ClusterTree, c: Cluster) -> SubPTQ:
    sub = tree.subtree(c)
    atoms = set().union(*(d.atoms for d in sub))
    vs = {v for a in atoms for v in a[1:]}
    atoms |= {a for a in q.atoms if len(a) == 2 and a[1] in vs}
    x = tree.entry_map[c]
    return SubPTQ(CQ(frozenset(atoms), (x,), q.name), tree.restricted(c))


def subptqs(p: PTQ | CQ, transitive: Iterable[str]) -> list[SubPTQ]:
    trans = set(transitive)
    if isinstance(p, CQ):
        p = ptq_of(p, trans)
    if p.tree is None:
        return []
    q = p.query
    trees = [p.tree] if q.answer else [cluster_tree_for(q, r, trans) for r in root_clusters(q, trans)]
    out, seen = [], set()
    for t in trees:
        for c in t.nodes[1:]:
            s = subtree_query(q, t, c)
            key = (s.query.atoms, s.query.answer)
            if key not in seen:
                seen.add(key)
                out.append(s)
    return out


# ---------------------------------------------------------------------------
# tree queries


def is_tree_query(q: CQ) -> bool:
    if len(q.answer) != 1:
        return False
    x = q.answer[0]
    indeg = {v: 0 for v in q.vars}
    pairs = set()
    for _, a, b in q.binary:
        if (a, b) in pairs:
            return False
        pairs.add((a, b))
        indeg[b] += 1
    if indeg[x] != 0 or any(d != 1 for v, d in indeg.items() if v != x):
        return False
    return is_acyclic(q) and is_connected(q)


def _set_partitions(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def _canon(node, children, labels, roles):
    kids = sorted(f"{roles[c]}:{_canon(c, children, labels, roles)}" for c in children.get(node, ()))
    return "[" + ",".join(sorted(labels[node])) + "|" + ";".join(kids) + "]"


def _tq_from_tree(root, parent: dict, role: dict, labels: dict, name: str) -> tuple[str, CQ]:
    children: dict = {}
    for c, p in parent.items():
        children.setdefault(p, []).append(c)
    key = _canon(root, children, labels, role)
    # rename in BFS order with the root as x
    order, todo = [], [root]
    while todo:
        v = todo.pop(0)
        order.append(v)
        todo.extend(sorted(children.get(v, ()), key=lambda c: _canon(c, children, labels, role)))
    names = {v: ("x" if k == 0 else f"v{k}") for k, v in enumerate(order)}
    atoms = {(a, names[v]) for v in order for a in labels[v]}
    atoms |= {(role[c], names[p], names[c]) for c, p in parent.items()}
    return key, CQ(frozenset(atoms), ("x",), name)


def _tree_candidates(q: CQ, trans: set[str]):
    """Tree-shaped images of q under variable identification, with minimal labels."""
    x = q.answer[0]
    roles = sorted(q.roles) or []
    vs = sorted(q.vars)
    for part in _set_partitions(vs):
        cls_of = {v: k for k, blk in enumerate(part) for v in blk}
        m = len(part)
        rootc = cls_of[x]
        fixed: dict = {}
        ok = True
        tcons = []
        for r, a, b in q.binary:
            ca, cb = cls_of[a], cls_of[b]
            if ca == cb or cb == rootc:
                ok = False
                break
            if r in trans:
                tcons.append((r, ca, cb))
            else:
                if fixed.setdefault(cb, (ca, r)) != (ca, r):
                    ok = False
                    break
        if not ok:
            continue
        labels = {k: frozenset(a[0] for a in q.unary if cls_of[a[1]] == k) for k in range(m)}
        free = [k for k in range(m) if k != rootc and k not in fixed]
        options = [[(p, r) for p in range(m) if p != k for r in roles] for k in free]
        for choice in itertools.product(*options):
            par = dict(fixed)
            for k, c in zip(free, choice):
                par[k] = c
            # every class must reach the root
            good = True
            for k in range(m):
                seen, v = set(), k
                while v != rootc:
                    if v in seen:
                        good = False
                        break
                    seen.add(v)
                    v = par[v][0]
                if not good:
                    break
            if not good:
                continue
            for r, ca, cb in tcons:
                v = cb
                while v != ca:
                    if v == rootc or par[v][1] != r:
                        good = False
                        break
                    v = par[v][0]
                if not good:
                    break
            if good:
                yield rootc, {k: p for k, (p, _) in par.items()}, {k: r for k, (_, r) in par.items()}, labels


def query_as_interpretation(q: CQ, transitive: Iterable[str]):
    from .interp import Interpretation, transitive_closure

    ids = {v: k for k, v in enumerate(sorted(q.vars))}
    labels = {ids[v]: frozenset(a[0] for a in q.unary if a[1] == v) for v in q.vars}
    edges = frozenset((r, ids[a], ids[b]) for r, a, b in q.binary)
    return transitive_closure(Interpretation(labels, edges, {}, frozenset(transitive))), ids


def _maps_into(p: CQ, target: CQ, trans: set[str]) -> bool:
    from .interp import has_match

    i, ids = query_as_interpretation(target, trans)
    return has_match(p, i, {p.answer[0]: ids[target.answer[0]]})


def minimize_utq(tqs: list[CQ], trans: Iterable[str]) -> list[CQ]:
    """Drop TQs implied by another member (homomorphism into its closure)."""
    trans = set(trans)
    tqs = sorted(tqs, key=lambda t: (len(t.atoms), format_key(t)))
    keep: list[CQ] = []
    for t in tqs:
        if any(_maps_into(k, t, trans) for k in keep):
            continue
        keep = [k for k in keep if not _maps_into(t, k, trans)] + [t]
    return keep


def format_key(q: CQ) -> str:
    return str(sorted(q.atoms))


@lru_cache(maxsize=4096)
def _treeify_cached(q: CQ, trans: frozenset, minimal: bool) -> tuple:
    if not is_connected(q):
        raise CompileError("treeify needs a connected query")
    x = q.answer[0]
    if not q.binary:
        return (CQ(frozenset((a[0], "x") for a in q.unary), ("x",), q.name),)
    found: dict = {}
    for rootc, par, role, labels in _tree_candidates(q, trans):
        key, tq = _tq_from_tree(rootc, par, role, labels, q.name)
        found.setdefault(key, tq)
    tqs = list(found.values())
    if minimal:
        tqs = minimize_utq(tqs, trans)
    return tuple(sorted(tqs, key=lambda t: (len(t.atoms), format_key(t))))


def treeify(q: CQ, transitive: Iterable[str], minimal: bool = True) -> list[CQ]:
    """UTQ equivalent to the unary CQ q at the roots of transitive-tree
    interpretations. Candidates are the tree-shaped images of q; with
    ``minimal`` TQs implied by another candidate are removed."""
    if len(q.answer) != 1:
        raise CompileError("treeify needs a unary query")
    return list(_treeify_cached(q, frozenset(transitive), minimal))


def all_trees(n: int, concepts: list[str], roles: list[str], transitive: Iterable[str]):
    """Every tree interpretation on {0..k-1}, k <= n, rooted at 0 with parents
    of smaller id; closure taken. Used as an exhaustive oracle."""
    from .interp import Interpretation, transitive_closure

    trans = frozenset(transitive)
    label_opts = [frozenset(c) for k in range(len(concepts) + 1) for c in itertools.combinations(concepts, k)]
    for k in range(1, n + 1):
        for parents in itertools.product(*[range(j) for j in range(1, k)]):
            for rs in itertools.product(roles, repeat=k - 1):
                if k > 1 and not roles:
                    continue
                for labs in itertools.product(label_opts, repeat=k):
                    edges = frozenset((rs[j - 1], parents[j - 1], j) for j in range(1, k))
                    yield transitive_closure(Interpretation(dict(enumerate(labs)), edges, {}, trans))
