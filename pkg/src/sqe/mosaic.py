"""Tiles and mosaics: auxiliary-concept bookkeeping, cluster root queries,
mosaic verification, bounded fixpoint search, tile shrinking, countermodel
assembly and the per-type entailment decision."""

from __future__ import annotations

import itertools
import math
import os
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from .interp import Interpretation, check_local, check_model, has_match, is_closed
from .kb import NormalTBox, PropCI, ExistsCI, ForallCI, restrict_to_role, tbox_size
from .ptq import (Cluster, ClusterTree, PTQ, SubPTQ, cluster_tree_for, root_clusters, subtree_query)
from .query import CQ, clusters, is_connected

AUX_PREFIX = "_Q"
NEG_PREFIX = "_R"
DUMMY_ROLE = "_r"

ENTAILED = "ENTAILED"
NOT_ENTAILED = "NOT_ENTAILED"
UNKNOWN = "UNKNOWN"


def _tkey(t: Iterable[str]) -> tuple:
    return tuple(sorted(t))


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class EntailmentInstance:
    """⟨T, τ⟩ ⊨ Q⁰ ∨ Q¹ over a fixed concept and role signature.

    ``concepts`` defaults to the concept names of T plus τ; ``roles`` to the
    roles of T and of the queries, or a single dummy role when there are none."""

    tbox: NormalTBox
    tau: frozenset
    q0: tuple = ()
    q1: tuple = ()
    transitive: frozenset = frozenset()
    concepts: tuple | None = None
    roles: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "tau", frozenset(self.tau))
        object.__setattr__(self, "q0", tuple(sorted(set(self.q0), key=lambda q: sorted(q.atoms))))
        object.__setattr__(self, "q1", tuple(sorted(set(self.q1), key=lambda q: sorted(q.atoms))))
        object.__setattr__(self, "transitive", frozenset(self.transitive))
        cs = set(self.concepts) if self.concepts is not None else self.tbox.concept_names() | set(self.tau)
        object.__setattr__(self, "concepts", tuple(sorted(cs)))
        if self.roles is None:
            rs = self.tbox.role_names() | {r for q in self.q0 + self.q1 for r in q.roles}
            object.__setattr__(self, "roles", tuple(sorted(rs)) or (DUMMY_ROLE,))
        else:
            object.__setattr__(self, "roles", tuple(sorted(set(self.roles))) or (DUMMY_ROLE,))
        if not self.tau <= set(self.concepts):
            raise ValueError("τ uses names outside the concept signature")
        for q in self.q0:
            if q.answer or not _is_ptq(q, self.transitive):
                raise ValueError(f"not a Boolean PTQ: {q}")
        for q in self.q1:
            if len(q.answer) != 1 or not _is_ptq(q, self.transitive):
                raise ValueError(f"not a unary PTQ: {q}")

    @property
    def key(self) -> tuple:
        return (self.tau, frozenset(self.q0), frozenset(self.q1))

    def is_transitive(self, r: str) -> bool:
        return r in self.transitive

    def max_vars(self) -> int:
        return max([len(q.vars) for q in self.q0 + self.q1] or [0])


def _is_ptq(q: CQ, trans) -> bool:
    from .ptq import is_boolean_ptq, is_unary_ptq

    if not q.binary:
        return len(q.vars) <= 1
    return is_unary_ptq(q, trans) if q.answer else is_boolean_ptq(q, trans)


# ---------------------------------------------------------------------------
# auxiliary names and cluster root queries


@dataclass(frozen=True)
class RootPart:
    """q_C for one root cluster C; ``role`` None marks the pseudo cluster of
    a query without binary atoms (it counts as a root cluster of every role)."""

    role: str | None
    query: CQ

    def applies_to(self, r: str) -> bool:
        return self.role is None or self.role == r


class AuxRegistry:
    """Bijection between subPTQs p(x) and fresh names A_{p(x)}, closed under
    the subPTQs that the cluster root queries of registered queries mention."""

    def __init__(self, transitive: Iterable[str], reserved: Iterable[str] = ()):
        self.transitive = frozenset(transitive)
        self.reserved = set(reserved)
        self.by_key: dict = {}
        self.query_of: dict[str, CQ] = {}
        self.parts: dict[str, list[RootPart]] = {}
        self.q0_parts: dict[CQ, list[RootPart]] = {}
        self.q1_parts: dict[CQ, list[RootPart]] = {}
        self._todo: list[str] = []
        self._count = 0

    @classmethod
    def for_instance(cls, inst: EntailmentInstance) -> "AuxRegistry":
        reg = cls(inst.transitive, inst.concepts)
        for q in inst.q0:
            reg.q0_parts[q] = reg.root_parts(q)
        for q in inst.q1:
            reg.q1_parts[q] = reg.root_parts(q)
        reg.close()
        return reg

    @property
    def names(self) -> list[str]:
        return list(self.query_of)

    def __len__(self):
        return len(self.query_of)

    def name_for(self, q: CQ) -> str:
        key = (q.atoms, q.answer)
        if key not in self.by_key:
            while True:
                self._count += 1
                n = f"{AUX_PREFIX}{self._count}"
                if n not in self.reserved:
                    break
            self.by_key[key] = n
            self.query_of[n] = q
            self._todo.append(n)
        return self.by_key[key]

    def close(self):
        while self._todo:
            n = self._todo.pop(0)
            self.parts[n] = self.root_parts(self.query_of[n])

    def root_parts(self, q: CQ) -> list[RootPart]:
        if not q.binary:
            return [RootPart(None, q)]
        out = []
        for c in root_clusters(q, self.transitive):
            if q.answer and q.answer[0] not in c.vars:
                continue
            out.append(RootPart(c.role, cluster_root_query(q, c, self)))
        return out

    def owner(self, name: str) -> str | None:
        """The single role of all root parts of A_name, or None."""
        roles = {p.role for p in self.parts[name]}
        return roles.pop() if len(roles) == 1 and None not in roles else None

    def order(self) -> list[str]:
        """Names ordered so that every name comes after the names its root
        queries mention."""
        return sorted(self.query_of, key=lambda n: (len(self.query_of[n].atoms), n))

    def describe(self) -> list[str]:
        from .query import format_cq

        return [f"aux {n} {format_cq(self.query_of[n])}" for n in self.query_of]


def cluster_root_query(p: PTQ | SubPTQ | CQ, C: Cluster | None, reg: AuxRegistry) -> CQ:
    """q_C: the atoms of C, the unary atoms over C's variables and one aux
    atom per child subtree of C in the cluster tree rooted at C."""
    q = p if isinstance(p, CQ) else p.query
    if C is None:
        if q.binary:
            raise ValueError("a query with binary atoms needs a real root cluster")
        return q
    if C not in clusters(q, reg.transitive):
        raise ValueError(f"{C} is not a cluster of the query")
    tree = cluster_tree_for(q, C, reg.transitive)
    if tree is None:
        raise ValueError(f"{C} is not a root cluster")
    if q.answer and q.answer[0] not in C.vars:
        raise ValueError(f"{C} does not contain the answer variable")
    atoms = set(C.atoms) | {a for a in q.unary if a[1] in C.vars}
    entry = tree.entry_map
    for child in tree.children(C):
        sub = subtree_query(q, tree, child)
        atoms.add((reg.name_for(sub.query), entry[child]))
    return CQ(frozenset(atoms), q.answer, q.name)


# ---------------------------------------------------------------------------
# tiles and mosaics


@dataclass(frozen=True)
class Tile:
    interp: Interpretation
    root: int
    role: str

    @cached_property
    def key(self) -> tuple:
        return canonical_key(self.interp, self.root, self.role)

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, Tile) and self.key == other.key

    @property
    def root_type(self) -> frozenset:
        return self.interp.tp(self.root)

    def context_complete(self, e: int, transitive: bool) -> bool:
        """Whether all role successors of e in an assembled model lie here."""
        return transitive or e == self.root


def canonical_key(i: Interpretation, root: int, role: str) -> tuple:
    others = [e for e in i.domain if e != root]
    best = None
    for perm in itertools.permutations(range(1, len(others) + 1)):
        ren = {root: 0, **dict(zip(others, perm))}
        types = tuple(_tkey(i.labels[e]) for e in sorted(i.domain, key=lambda e: ren[e]))
        edges = tuple(sorted((ren[a], ren[b]) for _, a, b in i.edges))
        cand = (types, edges)
        if best is None or cand < best:
            best = cand
    return (role, len(i.domain)) + best


@dataclass
class Mosaic:
    tiles: list
    initial: dict  # role -> tile index

    def tile_for(self, tp: frozenset, role: str) -> int | None:
        for k, t in enumerate(self.tiles):
            if t.role == role and t.root_type == tp:
                return k
        return None

    def __len__(self):
        return len(self.tiles)


@dataclass(frozen=True)
class MosaicViolation:
    condition: str  # "tile", "1", "2", "3", "4"
    tile: int | None
    element: int | None
    role: str | None
    detail: str

    def __str__(self):
        where = []
        if self.tile is not None:
            where.append(f"tile {self.tile}")
        if self.element is not None:
            where.append(f"element {self.element}")
        if self.role is not None:
            where.append(f"role {self.role}")
        return f"condition {self.condition} ({', '.join(where)}): {self.detail}"


def tile_violations(tile: Tile, inst: EntailmentInstance, signature: set | None = None) -> list[str]:
    """Problems with the tile itself: foreign roles, closure, local TBox."""
    i, r = tile.interp, tile.role
    out = []
    if tile.root not in i.labels:
        return ["root outside the domain"]
    if any(s != r for s, _, _ in i.edges):
        out.append("uses a role other than its own")
    if signature is not None:
        extra = set().union(*i.labels.values()) - signature if i.labels else set()
        if extra:
            out.append(f"label outside the signature: {sorted(extra)[0]}")
    tr = restrict_to_role(inst.tbox, r)
    if inst.is_transitive(r):
        if not is_closed(i.replace(transitive=frozenset({r}))):
            out.append("transitive role extent is not closed")
        out += [str(v) for v in check_model(i, tr)]
    else:
        out += [str(v) for v in check_local(i, tile.root, tr)]
    return out


def _forced(tile: Tile, reg: AuxRegistry, e: int) -> set[str]:
    out = set()
    for n, parts in reg.parts.items():
        for p in parts:
            if p.applies_to(tile.role) and has_match(p.query, tile.interp, {p.query.answer[0]: e}):
                out.add(n)
                break
    return out


def condition1_holds(tile: Tile, reg: AuxRegistry) -> bool:
    return not any(p.applies_to(tile.role) and has_match(p.query, tile.interp)
                   for parts in reg.q0_parts.values() for p in parts)


def refuted_q1(tile: Tile, reg: AuxRegistry) -> frozenset:
    """Members of Q¹ refuted at the root by some root cluster of this role."""
    out = set()
    for q, parts in reg.q1_parts.items():
        for p in parts:
            if p.applies_to(tile.role) and not has_match(p.query, tile.interp, {p.query.answer[0]: tile.root}):
                out.add(q)
                break
    return frozenset(out)


def requirements(tile: Tile, inst: EntailmentInstance) -> set:
    """(type, role) pairs that condition 4 asks for."""
    out = set()
    trans = inst.is_transitive(tile.role)
    for e in tile.interp.domain:
        for s in inst.roles:
            if s != tile.role or (not trans and e != tile.root):
                out.add((tile.interp.tp(e), s))
    return out


def verify_mosaic(m: Mosaic, inst: EntailmentInstance, reg: AuxRegistry | None = None) -> list[MosaicViolation]:
    reg = reg or AuxRegistry.for_instance(inst)
    sig = set(inst.concepts) | set(reg.names)
    out = []
    for k, t in enumerate(m.tiles):
        for msg in tile_violations(t, inst, sig):
            out.append(MosaicViolation("tile", k, None, t.role, msg))
    if out:
        return out
    for k, t in enumerate(m.tiles):
        for q, parts in reg.q0_parts.items():
            for p in parts:
                if p.applies_to(t.role) and has_match(p.query, t.interp):
                    out.append(MosaicViolation("1", k, None, t.role, f"matches {p.query}"))
        for e in t.interp.domain:
            missing = _forced(t, reg, e) - t.interp.tp(e)
            for n in sorted(missing):
                out.append(MosaicViolation("2", k, e, t.role, f"{n} absent but its root query matches"))
    # condition 3
    fam = m.initial
    if set(fam) != set(inst.roles) or any(not (0 <= v < len(m.tiles)) for v in fam.values()):
        out.append(MosaicViolation("3", None, None, None, "initial family does not cover every role"))
    else:
        tiles = {r: m.tiles[v] for r, v in fam.items()}
        for r, t in tiles.items():
            if t.role != r:
                out.append(MosaicViolation("3", fam[r], None, r, "initial tile has the wrong role"))
            if t.root_type & set(inst.concepts) != inst.tau:
                out.append(MosaicViolation("3", fam[r], t.root, r, "root type differs from τ"))
        if len({t.root_type for t in tiles.values()}) > 1:
            out.append(MosaicViolation("3", None, None, None, "initial roots have different types"))
        covered = frozenset().union(*(refuted_q1(t, reg) for r, t in tiles.items() if t.role == r))
        for q in reg.q1_parts:
            if q not in covered:
                out.append(MosaicViolation("3", None, None, None, f"{q} is not refuted at the root"))
    # condition 4
    avail = {(t.root_type, t.role) for t in m.tiles}
    for k, t in enumerate(m.tiles):
        trans = inst.is_transitive(t.role)
        for e in t.interp.domain:
            for s in inst.roles:
                if s != t.role or (not trans and e != t.root):
                    if (t.interp.tp(e), s) not in avail:
                        out.append(MosaicViolation("4", k, e, s, f"no {s}-tile rooted at type {_tkey(t.interp.tp(e))}"))
    return out


# ---------------------------------------------------------------------------
# tile enumeration


def base_types(inst: EntailmentInstance) -> list[frozenset]:
    """Subsets of the concept signature that satisfy the propositional CIs."""
    cs = inst.concepts
    props = inst.tbox.props
    out = []
    for k in range(len(cs) + 1):
        for combo in itertools.combinations(cs, k):
            t = frozenset(combo)
            if all(not c.lhs <= t or (c.rhs & t) for c in props):
                out.append(t)
    return out


_SHAPES: dict = {}


def closed_shapes(n: int) -> list[frozenset]:
    """Transitive relations on 0..n-1 in which 0 reaches every other node,
    one per isomorphism class fixing 0."""
    if n in _SHAPES:
        return _SHAPES[n]
    pairs = [(a, b) for a in range(n) for b in range(n)]
    seen, out = set(), []
    for mask in range(1 << len(pairs)):
        rel = {pairs[k] for k in range(len(pairs)) if mask >> k & 1}
        if any((0, b) not in rel for b in range(1, n)):
            continue
        if any((a, c) not in rel for a, b in rel for b2, c in rel if b == b2):
            continue
        key = min(tuple(sorted((p[a], p[b]) for a, b in rel))
                  for p in ({0: 0, **dict(zip(range(1, n), perm))} for perm in itertools.permutations(range(1, n))))
        if key not in seen:
            seen.add(key)
            out.append(frozenset(key))
    _SHAPES[n] = out
    return out


def _local_ok(tb: NormalTBox, role: str, types: Sequence[frozenset], succ: dict, at: Iterable[int]) -> bool:
    for e in at:
        t = types[e]
        for c in tb.exists:
            if c.role == role and (c.lhs is None or c.lhs in t):
                if not any(c.filler in types[f] for f in succ.get(e, ())):
                    return False
        for c in tb.foralls:
            if c.role == role and (c.lhs is None or c.lhs in t):
                if any(c.filler not in types[f] for f in succ.get(e, ())):
                    return False
    return True


def _dominated(tb, role, types, succ, n, root_only: bool) -> bool:
    """Some proper induced substructure containing the root still satisfies
    the local TBox (so it is a better tile)."""
    for k in range(1, n):
        for drop in itertools.combinations(range(1, n), k):
            keep = [e for e in range(n) if e not in drop]
            sub = {e: [f for f in succ.get(e, ()) if f in keep] for e in keep}
            if _local_ok(tb, role, types, sub, [0] if root_only else keep):
                return True
    return False


def _base_tiles(inst: EntailmentInstance, role: str, n: int, prune: bool,
                roots: Sequence[frozenset] | None = None) -> Iterator[tuple[list, frozenset]]:
    """(types, edges) pairs of size n over concept names only."""
    tb = inst.tbox
    btypes = base_types(inst)
    root_choices = btypes if roots is None else [t for t in btypes if t in set(roots)]
    if inst.is_transitive(role):
        for shape in closed_shapes(n):
            succ: dict = {}
            for a, b in shape:
                succ.setdefault(a, []).append(b)
            types = [None] * n

            def rec(e):
                if e == n:
                    if _local_ok(tb, role, types, succ, range(n)):
                        if not (prune and _dominated(tb, role, types, succ, n, False)):
                            yield list(types), shape
                    return
                for t in (root_choices if e == 0 else btypes):
                    types[e] = t
                    # ∀-constraints between already assigned elements
                    ok = True
                    for a in range(e + 1):
                        for b in succ.get(a, ()):
                            if b <= e and not _forall_ok(tb, role, types[a], types[b]):
                                ok = False
                                break
                        if not ok:
                            break
                    if ok:
                        yield from rec(e + 1)
                types[e] = None

            yield from rec(0)
    else:
        shape = frozenset((0, b) for b in range(1, n))
        succ = {0: list(range(1, n))}
        for t0 in root_choices:
            fillers = {c.filler for c in tb.foralls if c.role == role and (c.lhs is None or c.lhs in t0)}
            cands = [t for t in btypes if fillers <= t]
            for rest in itertools.combinations(cands, n - 1):
                types = [t0, *rest]
                if _local_ok(tb, role, types, succ, [0]):
                    if not (prune and _dominated(tb, role, types, succ, n, True)):
                        yield types, shape


def _forall_ok(tb, role, ta, tb_) -> bool:
    for c in tb.foralls:
        if c.role == role and (c.lhs is None or c.lhs in ta) and c.filler not in tb_:
            return False
    return True


def _subsets(names: Sequence[str]) -> list[frozenset]:
    return [frozenset(c) for k in range(len(names) + 1) for c in itertools.combinations(names, k)]


def _labelled_tiles(inst, reg, role, types, shape, mode) -> Iterator[Tile]:
    """Aux labellings of one base tile that pass conditions 1 and 2.

    In "forced" mode names owned by this role are fixed to their forced
    value wherever the tile holds the element's whole role context; every
    other aux name ranges over all subsets. "free" ranges over everything."""
    n = len(types)
    trans = inst.is_transitive(role)
    edges = frozenset((role, a, b) for a, b in shape)
    tr = frozenset({role}) if trans else frozenset()
    owned = [x for x in reg.order() if reg.owner(x) == role] if mode == "forced" else []
    fixed = [e for e in range(n) if trans or e == 0]
    free_per = []
    for e in range(n):
        names = [x for x in reg.names if not (e in fixed and x in owned)]
        free_per.append(_subsets(names))
    for combo in itertools.product(*free_per):
        labels = {e: types[e] | combo[e] for e in range(n)}
        for x in owned:
            cur = Interpretation(labels, edges, {}, tr)
            for e in fixed:
                if any(p.applies_to(role) and has_match(p.query, cur, {p.query.answer[0]: e}) for p in reg.parts[x]):
                    labels[e] = labels[e] | {x}
        tile = Tile(Interpretation(labels, edges, {}, tr), 0, role)
        if not condition1_holds(tile, reg):
            continue
        if any(not _forced(tile, reg, e) <= labels[e] for e in range(n)):
            continue
        yield tile


def enumerate_tiles(inst: EntailmentInstance, k: int, reg: AuxRegistry | None = None, mode: str = "free",
                    prune: bool = False, sizes: Iterable[int] | None = None) -> Iterator[Tile]:
    """All tiles with at most k elements, up to isomorphism, that satisfy the
    tile definition and conditions 1-2. Non-transitive tiles are stars.

    ``prune`` drops tiles that have a proper substructure (with the root)
    which is again a tile; such a substructure is always at least as good."""
    if k < 1:
        raise ValueError("size cap must be positive")
    reg = reg or AuxRegistry.for_instance(inst)
    seen = set()
    for role in inst.roles:
        for n in (sizes if sizes is not None else range(1, k + 1)):
            if n > k:
                continue
            for types, shape in _base_tiles(inst, role, n, prune):
                for t in _labelled_tiles(inst, reg, role, types, shape, mode):
                    if t.key not in seen:
                        seen.add(t.key)
                        yield t


# ---------------------------------------------------------------------------
# search


@dataclass
class MosaicResult:
    mosaic: Mosaic | None
    verdict: str  # certified-nonentailed / certified-entailed / unknown
    k: int
    mode: str
    tiles_enumerated: int = 0
    tiles_surviving: int = 0
    bound: int = 0


def completeness_bound(inst: EntailmentInstance, reg: AuxRegistry) -> int:
    return math.factorial(len(inst.concepts) + len(reg) + 1)


def _eliminate(tiles: list[Tile], inst: EntailmentInstance) -> list[Tile]:
    reqs = [requirements(t, inst) for t in tiles]
    alive = list(range(len(tiles)))
    while True:
        avail = {(tiles[k].root_type, tiles[k].role) for k in alive}
        nxt = [k for k in alive if reqs[k] <= avail]
        if len(nxt) == len(alive):
            return [tiles[k] for k in alive]
        alive = nxt


def _initial_family(tiles: list[Tile], inst: EntailmentInstance, reg: AuxRegistry) -> dict | None:
    concepts = set(inst.concepts)
    by_root: dict = {}
    for k, t in enumerate(tiles):
        if t.root_type & concepts == inst.tau:
            by_root.setdefault(t.root_type, {}).setdefault(t.role, []).append(k)
    goal = frozenset(reg.q1_parts)
    for tp in sorted(by_root, key=_tkey):
        per = by_root[tp]
        if set(per) != set(inst.roles):
            continue
        options = []
        for r in inst.roles:
            best: dict = {}
            for k in per[r]:
                best.setdefault(refuted_q1(tiles[k], reg), k)
            maximal = {s: k for s, k in best.items() if not any(s < o for o in best)}
            options.append([(r, s, k) for s, k in sorted(maximal.items(), key=lambda kv: kv[1])])
        for combo in itertools.product(*options):
            if frozenset().union(*(s for _, s, _ in combo)) >= goal:
                return {r: k for r, _, k in combo}
    return None


def _trim(tiles: list[Tile], family: dict, inst: EntailmentInstance) -> Mosaic:
    """The initial family plus one witness per needed (type, role), closed."""
    index = {}
    for k, t in enumerate(tiles):
        index.setdefault((t.root_type, t.role), k)
    keep = list(dict.fromkeys(family.values()))
    todo = list(keep)
    while todo:
        k = todo.pop(0)
        for req in sorted(requirements(tiles[k], inst), key=lambda x: (_tkey(x[0]), x[1])):
            w = index[req]
            if w not in keep:
                keep.append(w)
                todo.append(w)
    pos = {k: j for j, k in enumerate(keep)}
    return Mosaic([tiles[k] for k in keep], {r: pos[k] for r, k in family.items()})


def find_mosaic(inst: EntailmentInstance, k: int, mode: str = "free", reg: AuxRegistry | None = None,
                prune: bool = True, trim: bool = True) -> MosaicResult:
    """Greatest-fixpoint elimination over the tiles of size ≤ k."""
    reg = reg or AuxRegistry.for_instance(inst)
    tiles = list(enumerate_tiles(inst, k, reg, mode, prune))
    alive = _eliminate(tiles, inst)
    fam = _initial_family(alive, inst, reg)
    bound = completeness_bound(inst, reg)
    if fam is not None:
        m = _trim(alive, fam, inst) if trim else Mosaic(alive, fam)
        return MosaicResult(m, "certified-nonentailed", k, mode, len(tiles), len(alive), bound)
    verdict = "certified-entailed" if mode == "free" and k >= bound else "unknown"
    return MosaicResult(None, verdict, k, mode, len(tiles), len(alive), bound)


# ---------------------------------------------------------------------------
# direct entailment argument: bounded disjunctive chase


class Budget(Exception):
    pass


def chase_entails(inst: EntailmentInstance, depth: int = 3, max_nodes: int = 200000) -> bool | None:
    """True when every branch of a bounded disjunctive chase from τ finds a
    match of Q⁰ (anywhere) or Q¹ (at the root) or runs into a clash; False
    when some branch stays open; None when the node budget runs out.

    Every model with a τ-element contains a homomorphic image of one branch
    (choose each new element's type as the type of the model's witness), so
    True certifies entailment."""
    tb = inst.tbox
    btypes = base_types(inst)
    if inst.tau not in btypes:
        return True
    counter = [0]
    roles = inst.roles

    def matched(labels, edges) -> bool:
        i = Interpretation(labels, frozenset(edges), {}, inst.transitive)
        if any(has_match(q, i) for q in inst.q0):
            return True
        return any(has_match(q, i, {q.answer[0]: 0}) for q in inst.q1)

    def required(labels, edges, e, r) -> set:
        src = {e}
        if r in inst.transitive:
            src |= {a for s, a, b in edges if s == r and b == e}
        return {c.filler for c in tb.foralls if c.role == r for a in src if c.lhs is None or c.lhs in labels[a]}

    def close(edges, r, a, b):
        new = {(r, a, b)}
        if r in inst.transitive:
            new |= {(r, x, b) for s, x, y in edges if s == r and y == a}
        return edges | new

    def explore(labels: dict, edges: frozenset, queue: list, dep: dict) -> bool:
        counter[0] += 1
        if counter[0] > max_nodes:
            raise Budget
        if matched(labels, edges):
            return True
        if not queue:
            return False
        e, rest = queue[0], queue[1:]
        if dep[e] >= depth:
            return explore(labels, edges, rest, dep)
        news = []  # (role, candidate types)
        for c in tb.exists:
            if c.lhs is None or c.lhs in labels[e]:
                need = required(labels, edges, e, c.role) | {c.filler}
                cands = [t for t in btypes if need <= t]
                if not cands:
                    return True
                news.append((c.role, cands))
        for combo in itertools.product(*(cs for _, cs in news)):
            lab, ed, q, d = dict(labels), edges, list(rest), dict(dep)
            for (r, _), t in zip(news, combo):
                f = len(lab)
                lab[f] = t
                ed = close(ed, r, e, f)
                q.append(f)
                d[f] = dep[e] + 1
            if not explore(lab, ed, q, d):
                return False
        return True

    try:
        return explore({0: inst.tau}, frozenset(), [0], {0: 0})
    except Budget:
        return None


# ---------------------------------------------------------------------------
# shrinking


def shrink_tile(tile: Tile, inst: EntailmentInstance, reg: AuxRegistry | None = None) -> Tile:
    reg = reg or AuxRegistry.for_instance(inst)
    bad = tile_violations(tile, inst)
    if bad:
        raise ValueError("invalid tile: " + bad[0])
    if not condition1_holds(tile, reg) or any(not _forced(tile, reg, e) <= tile.interp.tp(e)
                                              for e in tile.interp.domain):
        raise ValueError("invalid tile: conditions 1-2 fail")
    i, r = tile.interp, tile.role
    if not inst.is_transitive(r):
        keep = [tile.root]
        t0 = i.tp(tile.root)
        for c in inst.tbox.exists:
            if c.role == r and (c.lhs is None or c.lhs in t0):
                if any(c.filler in i.tp(f) for f in i.succ(r, tile.root) if f in keep):
                    continue
                w = min(f for f in i.succ(r, tile.root) if c.filler in i.tp(f))
                keep.append(w)
        return Tile(i.restrict(keep), tile.root, r)

    from .countermodel import shrink_transitive_tree

    # A_¬ annotations for every root t-part of an aux name or a Q¹ member
    labels = {e: set(i.tp(e)) for e in i.domain}
    P = []
    k = 0
    sources = [(n, reg.parts[n]) for n in reg.names] + [(q, ps) for q, ps in reg.q1_parts.items()]
    used = set(inst.concepts) | set(reg.names)
    for _, parts in sources:
        for p in parts:
            if p.role != r:
                continue
            while True:
                k += 1
                neg = f"{NEG_PREFIX}{k}"
                if neg not in used:
                    break
            x = p.query.answer[0]
            for e in i.domain:
                if not has_match(p.query, i, {x: e}):
                    labels[e].add(neg)
            P.append(CQ(p.query.atoms | {(neg, x)}, (), p.query.name))
    for parts in reg.q0_parts.values():
        P += [p.query for p in parts if p.applies_to(r)]
    ann = Interpretation({e: frozenset(s) for e, s in labels.items()}, i.edges, {}, frozenset({r}))
    if not P:
        P = [CQ(frozenset({(f"{NEG_PREFIX}0", "x")}))]
    sm = shrink_transitive_tree(ann, restrict_to_role(inst.tbox, r), P, root=tile.root, mode="graph", role=r)
    if not sm.ok:
        raise RuntimeError(f"shrinking failed: {sm.checks}")
    j = sm.interp
    strip = {e: frozenset(a for a in j.labels[e] if not a.startswith(NEG_PREFIX) or a in used) for e in j.domain}
    return Tile(Interpretation(strip, j.edges, {}, frozenset({r})), sm.root, r)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Assembled:
    interp: Interpretation
    root: int
    origin: dict  # element -> (tile index, element of that tile)
    depth: dict  # element -> plug round in which it was created
    frontier: set

    @property
    def interior(self) -> set:
        return set(self.interp.domain) - self.frontier


def assemble_countermodel(m: Mosaic, inst: EntailmentInstance, depth_cap: int,
                          reg: AuxRegistry | None = None, check: bool = True) -> Assembled:
    """Glue tiles by the assembly rule up to depth_cap plug rounds."""
    if check:
        bad = verify_mosaic(m, inst, reg)
        if bad:
            raise ValueError("mosaic invalid: " + str(bad[0]))
    labels: dict = {}
    edges: set = set()
    origin: dict = {}
    depth: dict = {}
    nxt = [1]

    def glue(tk: int, at: int, d: int) -> list[int]:
        t = m.tiles[tk]
        ren = {t.root: at}
        for e in t.interp.domain:
            if e != t.root:
                ren[e] = nxt[0]
                nxt[0] += 1
                labels[ren[e]] = t.interp.tp(e)
                origin[ren[e]] = (tk, e)
                depth[ren[e]] = d
        for r, a, b in t.interp.edges:
            edges.add((r, ren[a], ren[b]))
        return [ren[e] for e in t.interp.domain if e != t.root]

    root = 0
    first = m.tiles[next(iter(m.initial.values()))]
    labels[root] = first.root_type
    depth[root] = 0
    pending = []
    for r in sorted(m.initial):
        pending += glue(m.initial[r], root, 0)
    for d in range(1, depth_cap + 1):
        nxt_pending = []
        for e in pending:
            tk, e0 = origin[e]
            src = m.tiles[tk]
            for s in inst.roles:
                if s == src.role and (inst.is_transitive(s) or e0 == src.root):
                    continue
                w = m.tile_for(labels[e], s)
                if w is None:
                    raise ValueError(f"no {s}-tile for element {e}")
                nxt_pending += glue(w, e, d)
        pending = nxt_pending
    i = Interpretation(labels, frozenset(edges), {}, inst.transitive)
    return Assembled(i, root, origin, depth, set(pending))


def interior_problems(a: Assembled, inst: EntailmentInstance) -> list[str]:
    """Query matches inside the interior and CI violations at interior elements."""
    out = []
    inner = a.interp.restrict(a.interior)
    for q in inst.q0:
        if has_match(q, inner):
            out.append(f"Q0 match of {q}")
    for q in inst.q1:
        if has_match(q, inner, {q.answer[0]: a.root}):
            out.append(f"Q1 match of {q} at the root")
    for e in sorted(a.interior):
        out += [str(v) for v in check_local(a.interp, e, inst.tbox)]
    if a.interp.tp(a.root) & set(inst.concepts) != inst.tau:
        out.append("root type differs from τ")
    return out


# ---------------------------------------------------------------------------
# bounds


def bound_values(n_concepts: int, n: int, m_single: int, m_rooted: int, M: int) -> dict:
    return {
        "tile_size_bound": math.factorial(n_concepts + 1),
        "tile_count_bound_single": n + n * 2 ** (n + m_single),
        "tile_count_bound_rooted": n * ((M * n) ** (m_rooted + 1) + 2 ** n),
    }


def report_bounds(inst: EntailmentInstance, M: int, reg: AuxRegistry | None = None) -> dict:
    """Closed-form size and count bounds; n is the TBox size, m the number of
    subPTQs (single role) or the largest query variable count (rooted)."""
    reg = reg or AuxRegistry.for_instance(inst)
    n_c = len(inst.tbox.concept_names())
    return bound_values(n_c, tbox_size(inst.tbox), len(reg), inst.max_vars(), M)


# ---------------------------------------------------------------------------
# serialization


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def serialize_instance(inst: EntailmentInstance) -> str:
    from .query import format_cq

    lines = [f"trans {r}" for r in sorted(inst.transitive)]
    lines += [f"role {r}" for r in inst.roles if r not in inst.transitive]
    lines.append("concepts " + " ".join(inst.concepts))
    lines.append("tau " + " ".join(sorted(inst.tau)))
    lines += [f"ci {c.as_ci()}" for c in inst.tbox.cis]
    lines += ["q0 " + format_cq(q, "q") for q in inst.q0]
    lines += ["q1 " + format_cq(q, "q") for q in inst.q1]
    return "\n".join(lines) + "\n"


def parse_instance(text: str) -> EntailmentInstance:
    from .kb import normalize, parse_concept, strip_comment, TBox, CI
    from .query import parse_cq

    roles: dict = {}
    trans, concepts, tau, cis, q0, q1 = set(), [], set(), [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = strip_comment(raw).strip()
        if not line:
            continue
        kw, _, rest = line.partition(" ")
        if kw == "trans":
            trans.add(rest.strip())
            roles[rest.strip()] = True
        elif kw == "role":
            roles[rest.strip()] = False
        elif kw == "concepts":
            concepts = rest.split()
        elif kw == "tau":
            tau = set(rest.split())
        elif kw == "ci":
            left, _, right = rest.partition("<=")
            cis.append(CI(parse_concept(left.strip(), roles), parse_concept(right.strip(), roles)))
        elif kw in ("q0", "q1"):
            (q0 if kw == "q0" else q1).append(parse_cq(rest, lineno, roles))
        else:
            raise ValueError(f"line {lineno}: unknown statement {kw!r}")
    nt = NormalTBox(tuple(_as_normal(c) for c in cis))
    return EntailmentInstance(nt, frozenset(tau), tuple(q0), tuple(q1), frozenset(trans),
                              tuple(concepts), tuple(sorted(roles)))


def _as_normal(ci):
    from .kb import normalize, TBox

    nt = normalize(TBox((ci,)))
    if len(nt.cis) != 1:
        raise ValueError(f"not a normal CI: {ci}")
    return nt.cis[0]


def write_mosaic(m: Mosaic, inst: EntailmentInstance, path: str, reg: AuxRegistry | None = None):
    from .interp import serialize_interp

    reg = reg or AuxRegistry.for_instance(inst)
    os.makedirs(path, exist_ok=True)
    index = []
    for k, t in enumerate(m.tiles):
        name = f"tile_{k:03d}.interp"
        body = serialize_interp(t.interp.replace(transitive=frozenset({t.role}) & inst.transitive), [t.role])
        _atomic_write(os.path.join(path, name), f"tile root={t.root} role={t.role}\n" + body)
        index.append(f"tile {name}")
    index += [f"initial {r} tile_{k:03d}.interp" for r, k in sorted(m.initial.items())]
    index += reg.describe()
    _atomic_write(os.path.join(path, "instance.txt"), serialize_instance(inst))
    _atomic_write(os.path.join(path, "index"), "\n".join(index) + "\n")


def read_mosaic(path: str) -> tuple[Mosaic, EntailmentInstance, list[str]]:
    from .interp import parse_interp

    with open(os.path.join(path, "instance.txt")) as fh:
        inst = parse_instance(fh.read())
    tiles, names, initial, aux = [], {}, {}, []
    with open(os.path.join(path, "index")) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "tile":
                with open(os.path.join(path, parts[1])) as tf:
                    head, _, body = tf.read().partition("\n")
                fields = dict(kv.split("=") for kv in head.split()[1:])
                i = parse_interp(body)
                tiles.append(Tile(i, int(fields["root"]), fields["role"]))
                names[parts[1]] = len(tiles) - 1
            elif parts[0] == "initial":
                initial[parts[1]] = names[parts[2]]
            elif parts[0] == "aux":
                aux.append(line.strip())
    return Mosaic(tiles, initial), inst, aux


# ---------------------------------------------------------------------------
# per-instance decision


@dataclass
class InstanceVerdict:
    status: str
    mosaic: Mosaic | None = None
    how: str = ""
    k: int = 0
    seconds: float = 0.0


def decide_instance(inst: EntailmentInstance, tile_cap: int = 3, depth: int = 3,
                    free_cap: int | None = None, chase_nodes: int = 200000) -> InstanceVerdict:
    """A shallow chase probe, mosaic search (forced aux labels) for
    k = 1..tile_cap, then the deepening chase,
    then the free-label search; UNKNOWN if none of them settles it."""
    t0 = time.monotonic()
    reg = AuxRegistry.for_instance(inst)
    bound = completeness_bound(inst, reg)
    modes = ["forced", "free"] if len(reg) else ["free"]

    def done(status, m=None, how="", k=0):
        return InstanceVerdict(status, m, how, k, time.monotonic() - t0)

    # a shallow chase with a small budget settles the easy entailments
    for d in (1, 2):
        if chase_entails(inst, d, min(chase_nodes, 2000)):
            return done(ENTAILED, None, f"chase depth {d}", 0)
    res = None
    for k in range(1, tile_cap + 1):
        res = find_mosaic(inst, k, modes[0], reg)
        if res.mosaic is not None:
            return done(NOT_ENTAILED, res.mosaic, f"mosaic ({modes[0]})", k)
        if res.verdict == "certified-entailed":
            return done(ENTAILED, None, "completeness cap", k)
    ch = False
    for d in range(1, max(depth, inst.max_vars() + 1) + 1):
        ch = chase_entails(inst, d, chase_nodes)
        if ch is not False:
            break
    if ch:
        return done(ENTAILED, None, f"chase depth {d}", 0)
    if len(modes) > 1:
        for k in range(1, (free_cap or tile_cap) + 1):
            res = find_mosaic(inst, k, "free", reg)
            if res.mosaic is not None:
                return done(NOT_ENTAILED, res.mosaic, "mosaic (free)", k)
            if res.verdict == "certified-entailed":
                return done(ENTAILED, None, "completeness cap", k)
    return done(UNKNOWN, None, f"k ≤ {tile_cap} < bound {bound}; chase open" if ch is False else "budget")
