"""Seeded random generators for queries, tree and forest interpretations."""

from __future__ import annotations

import random
from typing import Sequence

from .interp import Interpretation, transitive_closure
from .query import CQ, is_connected


def random_cq(rng: random.Random, n_vars: int, roles: Sequence[str], concepts: Sequence[str],
              n_binary: int | None = None, n_unary: int | None = None, connected: bool = True,
              answer: int = 0, name: str = "q") -> CQ:
    """Random CQ over v0..v{n-1}; when ``connected`` a random spanning tree
    (with random edge directions) is laid down first."""
    vs = [f"v{k}" for k in range(n_vars)]
    atoms = set()
    if connected and n_vars > 1:
        order = vs[:]
        rng.shuffle(order)
        for k in range(1, n_vars):
            a, b = order[k], rng.choice(order[:k])
            if rng.random() < 0.5:
                a, b = b, a
            atoms.add((rng.choice(roles), a, b))
    nb = n_binary if n_binary is not None else rng.randint(0, n_vars)
    for _ in range(nb):
        a, b = rng.choice(vs), rng.choice(vs)
        if a == b and rng.random() < 0.8:
            continue
        atoms.add((rng.choice(roles), a, b))
    nu = n_unary if n_unary is not None else rng.randint(0, n_vars)
    for _ in range(nu):
        if concepts:
            atoms.add((rng.choice(concepts), rng.choice(vs)))
    used = {v for a in atoms for v in a[1:]}
    if not used:
        atoms.add((concepts[0], vs[0]) if concepts else (roles[0], vs[0], vs[0]))
        used = {vs[0]}
    ans = (rng.choice(sorted(used)),) if answer else ()
    return CQ(frozenset(atoms), ans, name)


def random_tree(rng: random.Random, n_nodes: int, roles: Sequence[str], concepts: Sequence[str],
                transitive: Sequence[str] = (), p_label: float = 0.4, closed: bool = True,
                max_children: int | None = None) -> Interpretation:
    """Random tree on 0..n-1 rooted at 0 (parent ids smaller than child ids)."""
    labels, edges = {}, set()
    kids: dict[int, int] = {}
    for e in range(n_nodes):
        labels[e] = frozenset(c for c in concepts if rng.random() < p_label)
        if e:
            cands = [p for p in range(e) if max_children is None or kids.get(p, 0) < max_children]
            p = rng.choice(cands or list(range(e)))
            kids[p] = kids.get(p, 0) + 1
            edges.add((rng.choice(roles), p, e))
    i = Interpretation(labels, frozenset(edges), {}, frozenset(transitive))
    return transitive_closure(i) if closed else i


def random_forest(rng: random.Random, theta: Sequence[str], n_nodes: int, roles: Sequence[str],
                  concepts: Sequence[str], transitive: Sequence[str] = (), p_label: float = 0.4,
                  p_theta_edge: float = 0.4) -> Interpretation:
    """Random Θ-forest: individuals on 0..k-1, arbitrary edges among them, a
    random tree below each, then the transitive closure."""
    k = len(theta)
    n_nodes = max(n_nodes, k)
    labels = {e: frozenset(c for c in concepts if rng.random() < p_label) for e in range(n_nodes)}
    edges = set()
    for a in range(k):
        for b in range(k):
            for r in roles:
                if rng.random() < p_theta_edge / max(1, len(roles)):
                    edges.add((r, a, b))
    owner = {a: a for a in range(k)}
    for e in range(k, n_nodes):
        p = rng.randrange(e)
        owner[e] = owner[p]
        edges.add((rng.choice(roles), p, e))
    named = {theta[a]: a for a in range(k)}
    return transitive_closure(Interpretation(labels, frozenset(edges), named, frozenset(transitive)))


def random_connected_cq(rng: random.Random, max_vars: int, roles, concepts, **kw) -> CQ:
    while True:
        q = random_cq(rng, rng.randint(1, max_vars), roles, concepts, **kw)
        if is_connected(q):
            return q


def linearized_model(q: CQ, transitive: Sequence[str]) -> Interpretation | None:
    """Tree interpretation satisfying q, built by identifying variables with
    the rewriting rules and laying each transitive cluster out as a chain.
    None when q has no transitive-tree match."""
    from .query import clusters, rewrite_r1_r2, tree_match_conditions

    trans = set(transitive)
    qq = rewrite_r1_r2(q, trans)
    if not tree_match_conditions(qq):
        return None
    node: dict[str, int] = {}
    edges = set()
    nxt = 0
    for c in clusters(qq, trans):
        if c.role not in trans:
            continue
        level = {v: 0 for v in c.vars}
        for _ in range(len(level)):
            for _, a, b in c.atoms:
                level[b] = max(level[b], level[a] + 1)
        chain = list(range(nxt, nxt + max(level.values()) + 1))
        nxt += len(chain)
        for a, b in zip(chain, chain[1:]):
            edges.add((c.role, a, b))
        for v, lv in level.items():
            node[v] = chain[lv]
    for v in sorted(qq.vars):
        if v not in node:
            node[v] = nxt
            nxt += 1
    for r, a, b in qq.binary:
        if r not in trans:
            edges.add((r, node[a], node[b]))
    labels = {e: set() for e in range(nxt)}
    for a, v in qq.unary:
        labels[node[v]].add(a)
    i = Interpretation({e: frozenset(s) for e, s in labels.items()}, frozenset(edges), {}, frozenset(trans))
    return transitive_closure(i)


def perturbed_tree(rng: random.Random, base: Interpretation, roles: Sequence[str], concepts: Sequence[str],
                   extra: int = 4) -> Interpretation:
    """Random variation of a tree interpretation: hang extra nodes, drop or
    add labels, relabel an edge. The result is again a transitive tree."""
    from .interp import classify_shape

    sh = classify_shape(base)
    tree = sh.underlying if sh.underlying is not None else base
    labels = {e: set(t) for e, t in tree.labels.items()}
    edges = set(tree.edges)
    nxt = max(labels) + 1 if labels else 0
    for _ in range(rng.randint(0, extra)):
        p = rng.choice(sorted(labels))
        labels[nxt] = {c for c in concepts if rng.random() < 0.4}
        edges.add((rng.choice(roles), p, nxt))
        nxt += 1
    for e in labels:
        if labels[e] and rng.random() < 0.15:
            labels[e].discard(rng.choice(sorted(labels[e])))
        if rng.random() < 0.1:
            labels[e].add(rng.choice(concepts))
    if edges and rng.random() < 0.3:
        victim = rng.choice(sorted(edges))
        edges.discard(victim)
        edges.add((rng.choice(roles), victim[1], victim[2]))
    i = Interpretation({e: frozenset(s) for e, s in labels.items()}, frozenset(edges), {}, base.transitive)
    return transitive_closure(i)
