"""Signatures, concepts, TBoxes, ABoxes and knowledge bases, with normalization
and a line-oriented text format."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

FRESH_PREFIX = "_N"


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        loc = f"line {line}, column {col}: " if line else ""
        super().__init__(loc + msg)


class SignatureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# concepts


@dataclass(frozen=True)
class Top:
    def __str__(self):
        return "top"


@dataclass(frozen=True)
class Bottom:
    def __str__(self):
        return "bot"


TOP = Top()
BOT = Bottom()


@dataclass(frozen=True)
class Name:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not:
    arg: "Concept"

    def __str__(self):
        return f"(not {self.arg})"


@dataclass(frozen=True)
class And:
    left: "Concept"
    right: "Concept"

    def __str__(self):
        return f"(and {self.left} {self.right})"


@dataclass(frozen=True)
class Or:
    left: "Concept"
    right: "Concept"

    def __str__(self):
        return f"(or {self.left} {self.right})"


@dataclass(frozen=True)
class Exists:
    role: str
    filler: "Concept"

    def __str__(self):
        return f"(some {self.role} {self.filler})"


@dataclass(frozen=True)
class Forall:
    role: str
    filler: "Concept"

    def __str__(self):
        return f"(all {self.role} {self.filler})"


Concept = Union[Top, Bottom, Name, Not, And, Or, Exists, Forall]


def conj(parts: Iterable[Concept]) -> Concept:
    parts = list(parts)
    if not parts:
        return TOP
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = And(p, out)
    return out


def disj(parts: Iterable[Concept]) -> Concept:
    parts = list(parts)
    if not parts:
        return BOT
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = Or(p, out)
    return out


def concept_names(c: Concept) -> set[str]:
    if isinstance(c, Name):
        return {c.name}
    if isinstance(c, Not):
        return concept_names(c.arg)
    if isinstance(c, (And, Or)):
        return concept_names(c.left) | concept_names(c.right)
    if isinstance(c, (Exists, Forall)):
        return concept_names(c.filler)
    return set()


def concept_roles(c: Concept) -> set[str]:
    if isinstance(c, Not):
        return concept_roles(c.arg)
    if isinstance(c, (And, Or)):
        return concept_roles(c.left) | concept_roles(c.right)
    if isinstance(c, (Exists, Forall)):
        return {c.role} | concept_roles(c.filler)
    return set()


@dataclass(frozen=True)
class CI:
    left: Concept
    right: Concept

    def __str__(self):
        return f"{self.left} <= {self.right}"


# ---------------------------------------------------------------------------
# normal form


@dataclass(frozen=True, order=True)
class PropCI:
    """``⊓lhs ⊑ ⊔rhs``; an empty lhs is ⊤ and an empty rhs is ⊥."""

    lhs: frozenset
    rhs: frozenset

    def as_ci(self) -> CI:
        return CI(conj(Name(a) for a in sorted(self.lhs)), disj(Name(b) for b in sorted(self.rhs)))

    @property
    def roles(self) -> frozenset:
        return frozenset()

    def names(self) -> set[str]:
        return set(self.lhs) | set(self.rhs)


@dataclass(frozen=True, order=True)
class ExistsCI:
    """``A ⊑ ∃role.B``; ``lhs`` None stands for ⊤."""

    lhs: str | None
    role: str
    filler: str

    def as_ci(self) -> CI:
        return CI(Name(self.lhs) if self.lhs else TOP, Exists(self.role, Name(self.filler)))

    @property
    def roles(self) -> frozenset:
        return frozenset({self.role})

    def names(self) -> set[str]:
        return {self.filler} | ({self.lhs} if self.lhs else set())


@dataclass(frozen=True, order=True)
class ForallCI:
    """``A ⊑ ∀role.B``; ``lhs`` None stands for ⊤."""

    lhs: str | None
    role: str
    filler: str

    def as_ci(self) -> CI:
        return CI(Name(self.lhs) if self.lhs else TOP, Forall(self.role, Name(self.filler)))

    @property
    def roles(self) -> frozenset:
        return frozenset({self.role})

    def names(self) -> set[str]:
        return {self.filler} | ({self.lhs} if self.lhs else set())


NormalCI = Union[PropCI, ExistsCI, ForallCI]


def _nci_key(c: NormalCI):
    return (type(c).__name__, str(c.as_ci()))


@dataclass(frozen=True)
class TBox:
    cis: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cis", tuple(self.cis))

    def concept_names(self) -> set[str]:
        return set().union(*(concept_names(c.left) | concept_names(c.right) for c in self.cis))

    def role_names(self) -> set[str]:
        return set().union(*(concept_roles(c.left) | concept_roles(c.right) for c in self.cis))


@dataclass(frozen=True)
class NormalTBox:
    cis: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cis", tuple(sorted(set(self.cis), key=_nci_key)))

    def concept_names(self) -> set[str]:
        return set().union(*(c.names() for c in self.cis))

    def role_names(self) -> set[str]:
        return set().union(*(c.roles for c in self.cis))

    def to_tbox(self) -> TBox:
        return TBox(tuple(c.as_ci() for c in self.cis))

    @property
    def props(self) -> list[PropCI]:
        return [c for c in self.cis if isinstance(c, PropCI)]

    @property
    def exists(self) -> list[ExistsCI]:
        return [c for c in self.cis if isinstance(c, ExistsCI)]

    @property
    def foralls(self) -> list[ForallCI]:
        return [c for c in self.cis if isinstance(c, ForallCI)]

    def __len__(self):
        return len(self.cis)


def nnf(c: Concept, neg: bool = False) -> Concept:
    if isinstance(c, Top):
        return BOT if neg else TOP
    if isinstance(c, Bottom):
        return TOP if neg else BOT
    if isinstance(c, Name):
        return Not(c) if neg else c
    if isinstance(c, Not):
        return nnf(c.arg, not neg)
    if isinstance(c, And):
        l, r = nnf(c.left, neg), nnf(c.right, neg)
        return Or(l, r) if neg else And(l, r)
    if isinstance(c, Or):
        l, r = nnf(c.left, neg), nnf(c.right, neg)
        return And(l, r) if neg else Or(l, r)
    if isinstance(c, Exists):
        return Forall(c.role, nnf(c.filler, True)) if neg else Exists(c.role, nnf(c.filler))
    if isinstance(c, Forall):
        return Exists(c.role, nnf(c.filler, True)) if neg else Forall(c.role, nnf(c.filler))
    raise TypeError(c)


def _disjuncts(c: Concept) -> list[Concept]:
    if isinstance(c, Or):
        return _disjuncts(c.left) + _disjuncts(c.right)
    return [c]


def _conjuncts(c: Concept) -> list[Concept]:
    if isinstance(c, And):
        return _conjuncts(c.left) + _conjuncts(c.right)
    return [c]


class _Normalizer:
    def __init__(self, used: set[str]):
        self.used = used
        self.counter = 0
        self.out: list[NormalCI] = []
        self.defs: dict[Concept, str] = {}

    def fresh(self) -> str:
        while True:
            self.counter += 1
            n = f"{FRESH_PREFIX}{self.counter}"
            if n not in self.used:
                self.used.add(n)
                return n

    def name_for(self, c: Concept) -> str:
        """A concept name X with X ⊑ c (c in NNF)."""
        if isinstance(c, Name):
            return c.name
        if c in self.defs:
            return self.defs[c]
        x = self.fresh()
        self.defs[c] = x
        self.subsume([x], c)
        return x

    def subsume(self, lhs: list[str], c: Concept):
        """Emit normal CIs for ⊓lhs ⊑ c (c in NNF)."""
        for part in _conjuncts(c):
            self.clause(lhs, _disjuncts(part))

    def clause(self, lhs: list[str], ds: list[Concept]):
        neg, pos, cx = list(lhs), [], []
        for d in ds:
            if isinstance(d, Top):
                return
            if isinstance(d, Bottom):
                continue
            if isinstance(d, Name):
                pos.append(d.name)
            elif isinstance(d, Not):
                neg.append(d.arg.name)
            else:
                cx.append(d)
        if not pos and len(cx) == 1 and len(neg) <= 1 and isinstance(cx[0], (Exists, Forall)):
            self.modal(neg[0] if neg else None, cx[0])
            return
        for d in cx:
            if isinstance(d, (Exists, Forall)):
                x = self.fresh()
                self.modal(x, d)
            else:
                x = self.name_for(d)
            pos.append(x)
        self.out.append(PropCI(frozenset(neg), frozenset(pos)))

    def modal(self, lhs: str | None, d: Concept):
        b = self.name_for(d.filler)
        cls = ExistsCI if isinstance(d, Exists) else ForallCI
        self.out.append(cls(lhs, d.role, b))


def normalize(tbox: TBox | NormalTBox) -> NormalTBox:
    """Conservative normal form; fresh names use the reserved ``_N`` prefix."""
    if isinstance(tbox, NormalTBox):
        tbox = tbox.to_tbox()
    used = tbox.concept_names()
    norm = _Normalizer(set(used))
    for ci in sorted(tbox.cis, key=str):
        norm.subsume([], nnf(Or(Not(ci.left), ci.right)))
    return NormalTBox(tuple(norm.out))


def restrict_to_role(tbox: NormalTBox, r: str, known_roles: Iterable[str] | None = None) -> NormalTBox:
    if known_roles is not None and r not in set(known_roles):
        raise SignatureError(f"unknown role {r}")
    return NormalTBox(tuple(c for c in tbox.cis if c.roles <= {r}))


# ---------------------------------------------------------------------------
# ABox / KB / signature


@dataclass(frozen=True)
class ABox:
    concepts: frozenset = frozenset()  # (A, a)
    roles: frozenset = frozenset()  # (r, a, b)

    def individuals(self) -> set[str]:
        return {a for _, a in self.concepts} | {x for _, a, b in self.roles for x in (a, b)}


@dataclass(frozen=True)
class KnowledgeBase:
    tbox: TBox
    abox: ABox = ABox()
    transitive: frozenset = frozenset()
    plain: frozenset = frozenset()  # declared non-transitive roles

    @property
    def roles(self) -> frozenset:
        return self.transitive | self.plain

    def normal_tbox(self) -> NormalTBox:
        return normalize(self.tbox)


@dataclass(frozen=True)
class Signature:
    concept_names: frozenset = frozenset()
    role_names: frozenset = frozenset()
    transitive: frozenset = frozenset()
    individual_names: frozenset = frozenset()

    def __post_init__(self):
        if not self.transitive <= self.role_names:
            raise SignatureError("transitive roles must be role names")
        a, b, c = self.concept_names, self.role_names, self.individual_names
        if a & b or a & c or b & c:
            raise SignatureError("signature name sets overlap")


def signature_of(x, transitive: Iterable[str] = ()) -> Signature:
    from .query import CQ  # local import to avoid a cycle

    trans = frozenset(transitive)
    if isinstance(x, KnowledgeBase):
        s1 = signature_of(x.tbox, x.transitive)
        s2 = signature_of(x.abox, x.transitive)
        roles = s1.role_names | s2.role_names
        return Signature(s1.concept_names | s2.concept_names, roles, x.transitive & roles,
                         s2.individual_names)
    if isinstance(x, (TBox, NormalTBox)):
        roles = frozenset(x.role_names())
        return Signature(frozenset(x.concept_names()), roles, trans & roles)
    if isinstance(x, ABox):
        roles = frozenset(r for r, _, _ in x.roles)
        return Signature(frozenset(a for a, _ in x.concepts), roles, trans & roles,
                         frozenset(x.individuals()))
    if isinstance(x, CQ):
        roles = frozenset(a[0] for a in x.atoms if len(a) == 3)
        cs = frozenset(a[0] for a in x.atoms if len(a) == 2)
        return Signature(cs, roles, trans & roles)
    if isinstance(x, (list, tuple)):
        sigs = [signature_of(y, trans) for y in x]
        return Signature(frozenset().union(*(s.concept_names for s in sigs)),
                         frozenset().union(*(s.role_names for s in sigs)),
                         frozenset().union(*(s.transitive for s in sigs)))
    raise TypeError(f"no signature for {type(x).__name__}")


# ---------------------------------------------------------------------------
# text format

_TOKEN = re.compile(r"\s*(?:(\()|(\))|([A-Za-z_][A-Za-z0-9_']*))")
IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_']*$")


class _ConceptParser:
    def __init__(self, text: str, line: int, offset: int, roles: dict[str, bool] | None):
        self.text, self.line, self.offset, self.roles = text, line, offset, roles
        self.pos = 0

    def err(self, msg: str, pos: int | None = None):
        p = self.pos if pos is None else pos
        raise ParseError(msg, self.line, self.offset + p + 1)

    def token(self):
        m = _TOKEN.match(self.text, self.pos)
        if not m or m.end() == self.pos:
            rest = self.text[self.pos:].strip()
            if not rest:
                self.err("unexpected end of concept")
            self.err(f"unexpected character {rest[0]!r}", self.pos + len(self.text[self.pos:]) - len(self.text[self.pos:].lstrip()))
        start = m.start(m.lastindex)
        self.pos = m.end()
        return m.group(m.lastindex), start

    def role(self):
        tok, at = self.token()
        if tok in "()":
            self.err("expected role name", at)
        if self.roles is not None and tok not in self.roles:
            self.err(f"undeclared role {tok}", at)
        return tok

    def concept(self) -> Concept:
        tok, at = self.token()
        if tok == ")":
            self.err("unexpected ')'", at)
        if tok != "(":
            if tok == "top":
                return TOP
            if tok == "bot":
                return BOT
            return Name(tok)
        op, at = self.token()
        if op in ("and", "or"):
            args = []
            while True:
                save = self.pos
                t, a = self.token()
                if t == ")":
                    break
                self.pos = save
                args.append(self.concept())
            if len(args) < 1:
                self.err(f"{op} needs arguments", at)
            return conj(args) if op == "and" else disj(args)
        if op == "not":
            c = self.concept()
        elif op in ("some", "all"):
            r = self.role()
            f = self.concept()
            c = Exists(r, f) if op == "some" else Forall(r, f)
        else:
            self.err(f"unknown constructor {op!r}", at)
        t, a = self.token()
        if t != ")":
            self.err("expected ')'", a)
        return Not(c) if op == "not" else c

    def done(self):
        if self.text[self.pos:].strip():
            self.err("trailing input", self.pos + len(self.text[self.pos:]) - len(self.text[self.pos:].lstrip()))


def parse_concept(text: str, roles: dict[str, bool] | None = None, line: int = 1, offset: int = 0) -> Concept:
    p = _ConceptParser(text, line, offset, roles)
    c = p.concept()
    p.done()
    return c


_ASSERT_C = re.compile(r"^([A-Za-z][\w']*)\(\s*([A-Za-z][\w']*)\s*\)$")
_ASSERT_R = re.compile(r"^([A-Za-z][\w']*)\(\s*([A-Za-z][\w']*)\s*,\s*([A-Za-z][\w']*)\s*\)$")


def strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def declare_role(roles: dict[str, bool], name: str, trans: bool, lineno: int, col: int):
    if not IDENT.match(name):
        raise ParseError(f"bad role name {name!r}", lineno, col)
    if name in roles and roles[name] != trans:
        raise ParseError(f"role {name} re-declared with conflicting transitivity", lineno, col)
    roles[name] = trans


def parse_kb(text: str) -> KnowledgeBase:
    roles: dict[str, bool] = {}
    cis, cas, ras = [], set(), set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = strip_comment(raw)
        body = line.strip()
        if not body:
            continue
        col0 = len(line) - len(line.lstrip()) + 1
        kw, _, rest = body.partition(" ")
        rest_off = line.index(body) + len(kw) + 1
        if kw in ("trans", "role"):
            names = rest.split()
            if not names:
                raise ParseError(f"{kw} needs a role name", lineno, col0)
            for n in names:
                declare_role(roles, n, kw == "trans", lineno, rest_off + rest.index(n) + 1)
        elif kw == "ci":
            if "<=" not in rest:
                raise ParseError("expected '<='", lineno, col0)
            i = rest.index("<=")
            left = parse_concept(rest[:i], roles, lineno, rest_off)
            right = parse_concept(rest[i + 2:], roles, lineno, rest_off + i + 2)
            cis.append(CI(left, right))
        elif kw == "assert":
            a = rest.strip().replace(" ", "")
            m = _ASSERT_R.match(a)
            if m:
                if m.group(1) not in roles:
                    raise ParseError(f"undeclared role {m.group(1)}", lineno, rest_off + 1)
                ras.add((m.group(1), m.group(2), m.group(3)))
                continue
            m = _ASSERT_C.match(a)
            if not m:
                raise ParseError("malformed assertion", lineno, rest_off + 1)
            cas.add((m.group(1), m.group(2)))
        else:
            raise ParseError(f"unknown statement {kw!r}", lineno, col0)
    trans = frozenset(r for r, t in roles.items() if t)
    plain = frozenset(r for r, t in roles.items() if not t)
    clash = ({c for c, _ in cas} | set().union(*(concept_names(c.left) | concept_names(c.right) for c in cis))) & set(roles)
    if clash:
        raise ParseError(f"name used both as concept and role: {sorted(clash)[0]}")
    return KnowledgeBase(TBox(tuple(cis)), ABox(frozenset(cas), frozenset(ras)), trans, plain)


def serialize_kb(kb: KnowledgeBase) -> str:
    lines = [f"trans {r}" for r in sorted(kb.transitive)]
    lines += [f"role {r}" for r in sorted(kb.plain)]
    lines += [f"ci {c}" for c in kb.tbox.cis]
    lines += [f"assert {a}({x})" for a, x in sorted(kb.abox.concepts)]
    lines += [f"assert {r}({a},{b})" for r, a, b in sorted(kb.abox.roles)]
    return "\n".join(lines) + "\n"


def tbox_size(t: NormalTBox) -> int:
    """Symbol count of a normal TBox, used as the size parameter in bounds."""
    n = 0
    for c in t.cis:
        if isinstance(c, PropCI):
            n += max(1, len(c.lhs)) + max(1, len(c.rhs))
        else:
            n += 3
    return n


PROPAGATION_PREFIX = "_P"


def propagate_transitive_foralls(tbox: NormalTBox, transitive: Iterable[str]) -> NormalTBox:
    """Rewrite every ``A ⊑ ∀t.B`` with t transitive into ``A ⊑ ∀t.X``,
    ``X ⊑ B`` and ``X ⊑ ∀t.X`` for a fresh X.

    Conservative over the original signature. Afterwards the restriction is
    carried by a concept name, so it survives when a t-subtree is built
    separately from the element that imposed it."""
    trans = set(transitive)
    used = tbox.concept_names()
    out, fresh = [], {}
    k = 0
    for c in tbox.cis:
        if not (isinstance(c, ForallCI) and c.role in trans):
            out.append(c)
            continue
        key = (c.role, c.filler)
        if key not in fresh:
            while True:
                k += 1
                x = f"{PROPAGATION_PREFIX}{k}"
                if x not in used:
                    break
            fresh[key] = x
            out += [PropCI(frozenset({x}), frozenset({c.filler})), ForallCI(x, c.role, x)]
        out.append(ForallCI(c.lhs, c.role, fresh[key]))
    return NormalTBox(tuple(out))
