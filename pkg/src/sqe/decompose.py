"""Forest decompositions of query matches: subdivisions, Θ-splits, split
queries, and the ABox-eliminating reductions that turn KB entailment into
per-individual instances over a type τ."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .interp import Interpretation, _forest_candidate, has_match, theta_trees, transitive_closure
from .kb import KnowledgeBase, NormalTBox, signature_of
from .ptq import compile_boolean_ptq, compile_unary_ptqs, subptqs, treeify
from .query import CQ, component_queries, components, tree_matchable


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Subdivision:
    """``query`` arises from ``base`` by splitting each atom in ``split_atoms``
    t(x,z) into t(x,y), t(y,z) with y the matching entry of ``fresh``."""

    base: CQ
    query: CQ
    fresh: tuple = ()  # fresh variable names, aligned with split_atoms
    split_atoms: tuple = ()

    def collapse(self) -> CQ:
        atoms = set(self.query.atoms)
        for y, (t, x, z) in zip(self.fresh, self.split_atoms):
            atoms -= {(t, x, y), (t, y, z)}
            atoms.add((t, x, z))
        return CQ(frozenset(atoms), self.query.answer, self.query.name)


@dataclass(frozen=True)
class ThetaSplit:
    theta: tuple
    U: tuple  # frozensets aligned with theta
    V: tuple

    def u(self, a) -> frozenset:
        return self.U[self.theta.index(a)]

    def v(self, a) -> frozenset:
        return self.V[self.theta.index(a)]

    def label(self) -> dict:
        out = {}
        for a, us, vs in zip(self.theta, self.U, self.V):
            out.update({x: ("U", a) for x in us})
            out.update({x: ("V", a) for x in vs})
        return out


@dataclass(frozen=True)
class SplitQueries:
    q_sigma: CQ
    hat: CQ
    parts: Mapping  # individual -> CQ (unary on x_a or Boolean)
    delta: Mapping  # x_a -> individual
    xvar: Mapping  # individual -> x_a


def xname(k: int) -> str:
    return f"_x{k}"


# ---------------------------------------------------------------------------
# split conditions


def split_violations(p: CQ, s: ThetaSplit, allow_internal: bool = False) -> list[str]:
    """Independent checker for (S1)-(S4); empty iff s is a split of p."""
    out = []
    cover = set().union(*s.U, *s.V) if s.theta else set()
    if cover != p.vars:
        out.append("S1: sets do not cover var(q)")
    blocks = list(s.U) + list(s.V)
    for b1, b2 in itertools.combinations(range(len(blocks)), 2):
        if blocks[b1] & blocks[b2]:
            out.append("S2: sets overlap")
            break
    lab = s.label()
    for r, x, y in p.binary:
        if x not in lab or y not in lab:
            continue
        kx, ax = lab[x]
        ky, ay = lab[y]
        if kx == "V" and (ky, ay) != ("V", ax):
            out.append(f"S3: {r}({x},{y}) leaves V_{ax}")
        if kx == "U":
            ok = (ky == "V" and ay == ax) or (ky == "U" and ay != ax) or (allow_internal and (ky, ay) == ("U", ax))
            if not ok:
                out.append(f"S4: {r}({x},{y}) from U_{ax}")
    return out


def _labels(theta: Sequence) -> list[tuple]:
    return [(k, a) for a in theta for k in ("U", "V")]


def _edge_ok(lx, ly, transitive: bool, allow_internal: bool, subdivide: bool) -> bool:
    kx, ax = lx
    ky, ay = ly
    if kx == "V":
        return (ky, ay) == ("V", ax)
    if ky == "V":
        return ay == ax or (subdivide and transitive)
    return ay != ax or allow_internal


def _assignments(p: CQ, theta: Sequence, trans: set, allow_internal: bool, subdivide: bool,
                 fixed: Mapping | None = None) -> Iterator[dict]:
    vs = sorted(p.vars)
    labs = _labels(theta)
    fixed = dict(fixed or {})
    atoms = p.binary
    by_var: dict[str, list] = {v: [] for v in vs}
    for a in atoms:
        by_var[a[1]].append(a)
        if a[2] != a[1]:
            by_var[a[2]].append(a)
    cur: dict = {}

    def rec(k):
        if k == len(vs):
            yield dict(cur)
            return
        v = vs[k]
        for lab in ([fixed[v]] if v in fixed else labs):
            cur[v] = lab
            if all(a[1] not in cur or a[2] not in cur or
                   _edge_ok(cur[a[1]], cur[a[2]], a[0] in trans, allow_internal, subdivide) for a in by_var[v]):
                yield from rec(k + 1)
            del cur[v]

    yield from rec(0)


def _split_from(lab: Mapping, theta: Sequence) -> ThetaSplit:
    U = tuple(frozenset(v for v, l in lab.items() if l == ("U", a)) for a in theta)
    V = tuple(frozenset(v for v, l in lab.items() if l == ("V", a)) for a in theta)
    return ThetaSplit(tuple(theta), U, V)


def enumerate_splits(p: CQ, theta: Iterable, allow_internal: bool = False) -> Iterator[ThetaSplit]:
    """All Θ-splits of p itself (no subdivision), in a fixed order."""
    theta = tuple(theta)
    for lab in _assignments(p, theta, set(), allow_internal, subdivide=False):
        yield _split_from(lab, theta)


def naive_splits(p: CQ, theta: Iterable, allow_internal: bool = False) -> list[ThetaSplit]:
    """Generate-and-filter reference used by tests."""
    theta = tuple(theta)
    vs = sorted(p.vars)
    out = []
    for combo in itertools.product(_labels(theta), repeat=len(vs)):
        s = _split_from(dict(zip(vs, combo)), theta)
        if not split_violations(p, s, allow_internal):
            out.append(s)
    return out


def subdivided_splits(q: CQ, theta: Iterable, transitive: Iterable[str], allow_internal: bool = False,
                      fixed: Mapping | None = None) -> Iterator[tuple[Subdivision, ThetaSplit]]:
    """Splits of subdivisions of q in which every fresh variable sits in some
    U-set. A transitive atom t(x,z) with x in U_a and z in V_b (b != a) is
    subdivided through a fresh y placed in U_b; no other subdivision can be
    part of an admissible split that this one does not already cover."""
    theta = tuple(theta)
    trans = set(transitive)
    for lab in _assignments(q, theta, trans, allow_internal, subdivide=True, fixed=fixed):
        atoms = set(q.atoms)
        fresh, split_atoms = [], []
        for r, x, z in q.binary:
            (kx, ax), (kz, az) = lab[x], lab[z]
            if kx == "U" and kz == "V" and az != ax:
                y = f"_m{len(fresh)}"
                atoms -= {(r, x, z)}
                atoms |= {(r, x, y), (r, y, z)}
                lab[y] = ("U", az)
                fresh.append(y)
                split_atoms.append((r, x, z))
        p = CQ(frozenset(atoms), q.answer, q.name)
        yield Subdivision(q, p, tuple(fresh), tuple(split_atoms)), _split_from(lab, theta)


# ---------------------------------------------------------------------------
# split queries


def split_queries(p: CQ, s: ThetaSplit) -> SplitQueries:
    xvar = {a: xname(k) for k, a in enumerate(s.theta)}
    ren = {}
    for a, us in zip(s.theta, s.U):
        for v in us:
            ren[v] = xvar[a]
    qs = p.rename(ren).with_answer(())
    xs = {xvar[a] for a, us in zip(s.theta, s.U) if us}
    hat = qs.restrict(xs)
    parts = {}
    for a, us, vs in zip(s.theta, s.U, s.V):
        keep = set(vs) | ({xvar[a]} if us else set())
        atoms = frozenset(x for x in qs.atoms if set(x[1:]) <= keep and not (len(x) == 3 and x[1] == x[2] == xvar[a]))
        crossing = any(x in us and y in vs for _, x, y in p.binary)
        ans = (xvar[a],) if us and crossing else ()
        parts[a] = CQ(atoms, ans, p.name)
    return SplitQueries(qs, hat, parts, {xvar[a]: a for a in s.theta}, xvar)


def part_components(part: CQ, x: str | None) -> tuple[CQ | None, list[CQ]]:
    """(component containing x as unary query or None, Boolean components without x)."""
    main, rest = None, []
    for comp in components(part):
        sub = part.restrict(comp, answer=())
        if x is not None and x in comp:
            main = sub.with_answer((x,))
        elif sub.atoms:
            rest.append(sub)
    return main, rest


def is_admissible(sub: Subdivision, s: ThetaSplit, transitive: Iterable[str]) -> bool:
    in_u = set().union(*s.U) if s.U else set()
    if not set(sub.fresh) <= in_u:
        return False
    sq = split_queries(sub.query, s)
    for part in sq.parts.values():
        for comp in component_queries(part.with_answer(())):
            if comp.binary and not tree_matchable(comp, transitive):
                return False
    return True


def admissible_splits(q: CQ, theta: Iterable, transitive: Iterable[str], allow_internal: bool = True,
                      fixed: Mapping | None = None) -> Iterator[tuple[Subdivision, ThetaSplit, SplitQueries]]:
    trans = set(transitive)
    for sub, s in subdivided_splits(q, theta, trans, allow_internal, fixed):
        if is_admissible(sub, s, trans):
            yield sub, s, split_queries(sub.query, s)


# ---------------------------------------------------------------------------
# split equivalence check


def forest_trees(i: Interpretation, theta: Iterable) -> dict:
    """Closed tree interpretation I_a^+ for each a in Θ (keyed by element)."""
    th = {i.named[a] if isinstance(a, str) else a for a in theta}
    trees = theta_trees(i, th)
    if trees is None:
        raise ValueError("interpretation is not a Θ-forest")
    base = _forest_candidate(i, th)
    out = {}
    for a, elems in trees.items():
        edges = frozenset(x for x in base.edges if x[1] in elems and x[2] in elems and not (x[1] in th and x[2] in th))
        sub = Interpretation({e: i.labels[e] for e in elems}, edges, {}, i.transitive)
        out[a] = transitive_closure(sub)
    return out


def split_equivalence_check(i: Interpretation, q: CQ, answers: Sequence | None = None,
                            theta: Iterable | None = None, allow_internal: bool = True) -> tuple[bool, bool]:
    """(direct match exists, admissible split with conditions (a)/(b) exists).

    Θ defaults to the named elements of i. ``answers`` gives elements (or
    individual names) for q's answer variables."""
    if theta is None:
        theta = sorted(i.named.values())
    th = tuple(sorted({i.named[a] if isinstance(a, str) else a for a in theta}))
    trees = forest_trees(i, th)
    ans = tuple(i.named[a] if isinstance(a, str) else a for a in (answers or ()))
    if len(ans) != len(q.answer):
        raise ValueError("answer tuple does not fit the query")
    seed = dict(zip(q.answer, ans))
    direct = has_match(q, i, seed)
    fixed = {}
    for v, e in seed.items():
        if e not in th:
            raise ValueError("answers must be Θ elements")
        fixed[v] = ("U", e)
    qb = q.with_answer(())
    via = False
    for sub, s, sq in admissible_splits(qb, th, i.transitive, allow_internal, fixed):
        if not has_match(sq.hat, i, {x: a for x, a in sq.delta.items() if x in sq.hat.vars}):
            continue
        ok = True
        for a in th:
            part = sq.parts[a]
            sd = {sq.xvar[a]: a} if s.u(a) and sq.xvar[a] in part.vars else {}
            if not has_match(part.with_answer(()), trees[a], sd):
                ok = False
                break
        if ok:
            via = True
            break
    return direct, via


# ---------------------------------------------------------------------------
# reductions


@dataclass(frozen=True)
class Choice:
    kind: str  # "q0" (Boolean UPTQ) or "q1" (unary UPTQ/UTQ with answer x)
    query: CQ


@dataclass(frozen=True)
class Alternative:
    """Commit to individual a; then pick one choice from every group. An
    alternative without groups costs nothing."""

    individual: str
    groups: tuple  # tuple of tuples of Choice


@dataclass(frozen=True)
class Obligation:
    alternatives: tuple
    source: str = ""


@dataclass
class Plan:
    """Everything one guessed I₀ determines: the types and the obligations
    that every run over it must discharge."""

    individuals: tuple
    types: dict
    obligations: list
    j0: Interpretation


@dataclass
class Run:
    types: dict
    q0: dict
    q1: dict


def canonical_unary(q: CQ) -> CQ:
    x = q.answer[0]
    ren = {v: ("x" if v == x else v) for v in q.vars}
    if "x" in q.vars and x != "x":
        ren["x"] = "_y"
    return q.rename(ren)


def _canon_vars(q: CQ) -> CQ:
    """Deterministic renaming so equal queries from different splits coincide."""
    order = sorted(q.vars, key=lambda v: (v not in q.answer, v))
    ren = {v: ("x" if v in q.answer else f"v{k}") for k, v in enumerate(order)}
    return q.rename(ren)


def engine_signature(kb: KnowledgeBase) -> tuple[list[str], list[str]]:
    t = kb.normal_tbox()
    concepts = sorted(t.concept_names() | {a for a, _ in kb.abox.concepts})
    roles = sorted(t.role_names() | {r for r, _, _ in kb.abox.roles})
    return concepts, roles


def _type_candidates(kb: KnowledgeBase, concepts: list[str], ind: str) -> list[frozenset]:
    t = kb.normal_tbox()
    must = frozenset(a for a, b in kb.abox.concepts if b == ind)
    free = [c for c in concepts if c not in must]
    out = []
    for k in range(len(free) + 1):
        for extra in itertools.combinations(free, k):
            tp = must | frozenset(extra)
            if all(not (c.lhs <= tp) or (c.rhs & tp) for c in t.props):
                out.append(tp)
    return out


def _abox_individuals(kb: KnowledgeBase) -> tuple:
    inds = sorted(kb.abox.individuals())
    return tuple(inds) if inds else ("_a",)


def guess_i0(kb: KnowledgeBase) -> Iterator[Interpretation]:
    """Type assignments over the individuals, with the ABox role assertions
    (transitively closed) as the only edges, that satisfy the ∀-CIs."""
    t = kb.normal_tbox()
    concepts, _ = engine_signature(kb)
    inds = _abox_individuals(kb)
    ids = {a: k for k, a in enumerate(inds)}
    edges = frozenset((r, ids[a], ids[b]) for r, a, b in kb.abox.roles)
    cands = [_type_candidates(kb, concepts, a) for a in inds]
    for combo in itertools.product(*cands):
        j = transitive_closure(Interpretation(dict(enumerate(combo)), edges, ids, kb.transitive))
        ok = True
        for c in t.foralls:
            for e in j.domain:
                if c.lhs is None or c.lhs in j.tp(e):
                    if any(c.filler not in j.tp(f) for f in j.succ(c.role, e)):
                        ok = False
                        break
            if not ok:
                break
        if ok:
            yield j


def _qualifies(sq: SplitQueries, j: Interpretation) -> bool:
    seed = {x: j.named[a] for x, a in sq.delta.items() if x in sq.hat.vars}
    return has_match(sq.hat, j, seed)


def _root_branches(tq: CQ) -> list[CQ]:
    """One TQ per binary atom at the root, keeping that atom's subtree and the
    root's unary atoms; a TQ without root atoms is its own single branch."""
    x = tq.answer[0]
    root_atoms = [a for a in tq.binary if a[1] == x]
    if not root_atoms:
        return [tq]
    succ: dict = {}
    for r, a, b in tq.binary:
        succ.setdefault(a, []).append(b)
    out = []
    for r, _, y in root_atoms:
        keep, todo = {x, y}, [y]
        while todo:
            v = todo.pop()
            for w in succ.get(v, ()):
                if w not in keep:
                    keep.add(w)
                    todo.append(w)
        atoms = {a for a in tq.atoms if set(a[1:]) <= keep and not (len(a) == 3 and a[1] == x and a[2] != y)}
        out.append(_canon_vars(CQ(frozenset(atoms), (x,), tq.name)))
    return sorted(set(out), key=lambda c: sorted(c.atoms))


def _check_rooted(Q: Sequence[CQ], answers: Sequence, kb: KnowledgeBase):
    inds = set(kb.abox.individuals())
    for a in answers:
        if a not in inds:
            raise ValueError(f"answer {a} is not an ABox individual")
    for q in Q:
        if len(q.answer) != len(answers):
            raise ValueError("answer tuple length does not match the query")
        if not q.answer or len(components(q)) != 1:
            raise ValueError("rooted queries must be connected and non-Boolean")


def rooted_plan(kb: KnowledgeBase, Q: Sequence[CQ], answers: Sequence, j0: Interpretation) -> Plan:
    trans = set(kb.transitive)
    inds = _abox_individuals(kb)
    obligations = []
    for qi, q in enumerate(Q):
        fixed = {}
        for v, a in zip(q.answer, answers):
            if fixed.setdefault(v, ("U", a)) != ("U", a):
                fixed = None
                break
        if fixed is None:
            continue
        for sub, s, sq in admissible_splits(q.with_answer(()), inds, trans, True, fixed):
            if not _qualifies(sq, j0):
                continue
            alts = []
            for a in inds:
                if not s.u(a):
                    continue
                part = sq.parts[a]
                x = sq.xvar[a]
                main, rest = part_components(part, x)
                if main is None:
                    main = CQ(frozenset(), (x,), q.name)
                tqs = treeify(main, trans) if main.atoms else [CQ(frozenset(), ("x",), q.name)]
                groups = tuple(tuple(Choice("q1", b) for b in _root_branches(canonical_unary(t))) for t in tqs)
                alts.append(Alternative(a, groups))
            obligations.append(Obligation(tuple(alts), f"{q.name}#{qi}"))
    return Plan(inds, {a: j0.tp(j0.named[a]) for a in inds}, obligations, j0)


def single_trans_plan(kb: KnowledgeBase, Q: Sequence[CQ], j0: Interpretation) -> Plan:
    trans = set(kb.transitive)
    inds = _abox_individuals(kb)
    obligations = []
    for qi, q in enumerate(Q):
        for sub, s, sq in admissible_splits(q.with_answer(()), inds, trans, True):
            if not _qualifies(sq, j0):
                continue
            alts = []
            for a in inds:
                part = sq.parts[a]
                x = sq.xvar[a]
                main, rest = part_components(part, x if s.u(a) else None)
                if s.u(a):
                    if main is None or not main.binary:
                        m = main or CQ(frozenset(), (x,), q.name)
                        alts.append(Alternative(a, ((Choice("q1", _canon_vars(canonical_unary(m))),),)))
                    else:
                        parts = compile_unary_ptqs(main, trans)
                        if parts is None:
                            alts.append(Alternative(a, ()))
                        else:
                            alts.append(Alternative(a, (tuple(Choice("q1", _canon_vars(canonical_unary(p.query)))
                                                              for p in parts),)))
                if s.v(a):
                    for comp in rest:
                        p = compile_boolean_ptq(comp, trans)
                        alts.append(Alternative(a, () if p is None else ((Choice("q0", _canon_vars(p.query)),),)))
            obligations.append(Obligation(tuple(alts), f"{q.name}#{qi}"))
    return Plan(inds, {a: j0.tp(j0.named[a]) for a in inds}, obligations, j0)


def _runs_of(plan: Plan) -> Iterator[Run]:
    per_obl = []
    for ob in plan.obligations:
        opts = []
        for alt in ob.alternatives:
            for picks in itertools.product(*alt.groups):
                opts.append((alt.individual, picks))
        per_obl.append(opts)
    seen = set()
    for combo in itertools.product(*per_obl):
        q0 = {a: set() for a in plan.individuals}
        q1 = {a: set() for a in plan.individuals}
        for a, picks in combo:
            for c in picks:
                (q0 if c.kind == "q0" else q1)[a].add(c.query)
        key = tuple((a, frozenset(q0[a]), frozenset(q1[a])) for a in plan.individuals)
        if key in seen:
            continue
        seen.add(key)
        yield Run(dict(plan.types), {a: frozenset(v) for a, v in q0.items()}, {a: frozenset(v) for a, v in q1.items()})


def reduce_rooted(kb: KnowledgeBase, Q: Sequence[CQ], answers: Sequence) -> Iterator[Run]:
    """Every run of the rooted reduction (exhaustive; intended for small inputs)."""
    _check_rooted(Q, answers, kb)
    for j0 in guess_i0(kb):
        yield from _runs_of(rooted_plan(kb, Q, answers, j0))


def _check_single(Q: Sequence[CQ], kb: KnowledgeBase):
    used = set().union(*(q.roles for q in Q)) & set(kb.transitive) if Q else set()
    if len(used) > 1:
        raise ValueError("the query uses more than one transitive role")
    for q in Q:
        if q.answer:
            raise ValueError("expected a Boolean UCQ")


def reduce_single_trans(kb: KnowledgeBase, Q: Sequence[CQ]) -> Iterator[Run]:
    """Every run of the single-transitive-role reduction (exhaustive)."""
    _check_single(Q, kb)
    for j0 in guess_i0(kb):
        yield from _runs_of(single_trans_plan(kb, Q, j0))


def subptq_count(queries: Iterable[CQ], transitive: Iterable[str]) -> int:
    trans = set(transitive)
    return sum(len(subptqs(q, trans)) for q in queries)
