"""Hardness instances from alternating Turing machines: the KB K_w and the
CQ q_w over two transitive roles t1, t2, intended computation-tree models,
copy-error injection and an independent conspicuousness scan.

Writing α for "a t1-edge followed by a t2-edge", a configuration node d
roots a binary α-tree of height n whose leaves are cells; a cell e has
α-successors u_h and u_p (contents of the current and of the previous
configuration). Each u has the shape

    u -t1-> m -t2-> v -t1-> w        m -t1-> o        v -t2-> s

with w marked G_h or G_p and o, s anonymous. Successor configurations sit
two α-steps below d. The gadget query q*(x, y) is

    t1(x,a), t1(b,a), t2(b,c), t2(d,c), t1(d,y)

and links x to the G-element y of the same branch exactly when x is that
branch's u, m or v element (through o when x is u or m, through s when x is
v). Since only u and v carry the B/Z names, q_A can only land on the pairs
(u_h, u_p) or (v_h, v_p) of two cells in successive configurations.
"""

from __future__ import annotations

import itertools
import json
import os
import re
from dataclasses import dataclass, field

from .interp import Interpretation, check_model, has_match, transitive_closure
from .kb import (ABox, Bottom, CI, Exists, Forall, KnowledgeBase, Name, NormalTBox, TBox, conj, disj,
                 serialize_kb)
from .query import CQ, format_cq

T1, T2 = "t1", "t2"


class ATMError(ValueError):
    pass


class StructureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# machines

KINDS = ("exists", "forall", "accept", "reject")
_SYM = re.compile(r"^[A-Za-z0-9]+$")


@dataclass(frozen=True)
class ATMachine:
    states: tuple
    kind: dict  # state -> exists | forall | accept | reject
    initial: str
    sigma: tuple
    gamma: tuple
    delta: dict  # (q, a) -> tuple of (q', b, move)
    blank: str

    def __post_init__(self):
        self.validate()

    @property
    def accept(self) -> str:
        return next(q for q in self.states if self.kind[q] == "accept")

    @property
    def reject(self) -> str:
        return next(q for q in self.states if self.kind[q] == "reject")

    def transitions(self, q: str, a: str) -> tuple:
        return self.delta.get((q, a), ())

    def all_transitions(self) -> list[tuple]:
        """(q, a, q', b, move) in a fixed order."""
        return [(q, a) + t for (q, a) in sorted(self.delta) for t in self.delta[(q, a)]]

    def validate(self):
        if len(set(self.states)) != len(self.states):
            raise ATMError("duplicate state")
        for q in self.states:
            if not _SYM.match(q):
                raise ATMError(f"bad state name {q!r}")
            if self.kind.get(q) not in KINDS:
                raise ATMError(f"state {q} has no kind")
        for k in ("accept", "reject"):
            if sum(1 for q in self.states if self.kind[q] == k) != 1:
                raise ATMError(f"exactly one {k} state is required")
        if self.initial not in self.states or self.kind[self.initial] in ("accept", "reject"):
            raise ATMError("the initial state must be existential or universal")
        for a in self.gamma:
            if not _SYM.match(a):
                raise ATMError(f"bad symbol {a!r}")
        if not set(self.sigma) <= set(self.gamma):
            raise ATMError("the input alphabet must be contained in the tape alphabet")
        if self.blank not in self.gamma:
            raise ATMError("the blank symbol must be a tape symbol")
        for (q, a), ts in self.delta.items():
            if q not in self.states or a not in self.gamma:
                raise ATMError(f"malformed transition source {q},{a}")
            for p, b, mv in ts:
                if p not in self.states or b not in self.gamma or mv not in (-1, 1):
                    raise ATMError(f"malformed transition {q},{a} -> {p},{b},{mv}")
                if p == self.initial:
                    raise ATMError("the initial state must not be reachable by a transition")
            if self.kind[q] == "forall":
                targets = [p for p, _, _ in ts]
                if len(set(targets)) != len(targets):
                    raise ATMError(f"universal state {q} has two transitions to one state on {a}")


def parse_atm(text: str) -> ATMachine:
    """Lines: ``states q0:init:exists qa:accept ...``, ``sigma a b``,
    ``gamma a b c``, optional ``blank c`` and ``delta q,a -> q',b,+1 | ...``.
    Without ``blank`` the first tape symbol outside sigma is the blank."""
    states, kind, initial = [], {}, None
    sigma = gamma = None
    blank = None
    delta: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kw, _, rest = line.partition(" ")
        if kw == "states":
            for tok in rest.split():
                parts = tok.split(":")
                q, flags = parts[0], set(parts[1:])
                if "init" in flags:
                    if initial is not None:
                        raise ATMError(f"line {lineno}: two initial states")
                    initial = q
                ks = flags & set(KINDS)
                if len(ks) != 1:
                    raise ATMError(f"line {lineno}: state {q} needs exactly one kind")
                states.append(q)
                kind[q] = ks.pop()
        elif kw == "sigma":
            sigma = tuple(rest.split())
        elif kw == "gamma":
            gamma = tuple(rest.split())
        elif kw == "blank":
            blank = rest.strip()
        elif kw == "delta":
            lhs, arrow, rhs = rest.partition("->")
            if not arrow:
                raise ATMError(f"line {lineno}: expected '->'")
            src = tuple(s.strip() for s in lhs.split(","))
            if len(src) != 2:
                raise ATMError(f"line {lineno}: malformed transition source")
            outs = []
            for alt in rhs.split("|"):
                f = [s.strip() for s in alt.split(",")]
                if len(f) != 3 or f[2] not in ("+1", "-1", "1"):
                    raise ATMError(f"line {lineno}: malformed transition {alt.strip()!r}")
                outs.append((f[0], f[1], int(f[2])))
            delta.setdefault(src, [])
            delta[src] += outs
        else:
            raise ATMError(f"line {lineno}: unknown keyword {kw!r}")
    if initial is None or sigma is None or gamma is None:
        raise ATMError("states (with an init state), sigma and gamma are required")
    if blank is None:
        extra = [a for a in gamma if a not in sigma]
        blank = extra[0] if extra else gamma[0]
    return ATMachine(tuple(states), kind, initial, sigma, gamma, {k: tuple(v) for k, v in delta.items()}, blank)


# ---------------------------------------------------------------------------
# computation trees


@dataclass(frozen=True)
class Config:
    state: str
    tape: tuple
    head: int

    @property
    def symbol(self) -> str:
        return self.tape[self.head]


@dataclass
class CompTree:
    config: Config
    children: list = field(default_factory=list)  # (transition (q', b, move), CompTree)

    def nodes(self):
        yield self
        for _, c in self.children:
            yield from c.nodes()


def initial_config(m: ATMachine, w: str | tuple) -> Config:
    w = tuple(w)
    if not w:
        raise ATMError("the input word must be nonempty")
    if not set(w) <= set(m.sigma):
        raise ATMError("the input word uses symbols outside sigma")
    size = 2 ** len(w)
    return Config(m.initial, w + (m.blank,) * (size - len(w)), 0)


def step(c: Config, t: tuple) -> Config | None:
    """Apply transition (q', b, move); None if the head would leave the tape."""
    p, b, mv = t
    h = c.head + mv
    if not 0 <= h < len(c.tape):
        return None
    tape = c.tape[: c.head] + (b,) + c.tape[c.head + 1:]
    return Config(p, tape, h)


def accepting_tree(m: ATMachine, w: str | tuple, max_depth: int = 64) -> CompTree | None:
    """Some accepting computation tree, or None. A transition leaving the
    tape counts as a rejecting successor."""

    def build(c: Config, depth: int) -> CompTree | None:
        k = m.kind[c.state]
        if k == "accept":
            return CompTree(c)
        if k == "reject" or depth == 0:
            return None
        ts = m.transitions(c.state, c.symbol)
        if k == "exists":
            for t in ts:
                nxt = step(c, t)
                sub = build(nxt, depth - 1) if nxt else None
                if sub:
                    return CompTree(c, [(t, sub)])
            return None
        if not ts:
            return None
        kids = []
        for t in ts:
            nxt = step(c, t)
            sub = build(nxt, depth - 1) if nxt else None
            if sub is None:
                return None
            kids.append((t, sub))
        return CompTree(c, kids)

    return build(initial_config(m, w), max_depth)


def validate_tree(m: ATMachine, w, tree: CompTree):
    if tree.config != initial_config(m, w):
        raise ATMError("the tree root is not the initial configuration")
    for node in tree.nodes():
        c = node.config
        k = m.kind[c.state]
        ts = m.transitions(c.state, c.symbol)
        if k == "accept":
            if node.children:
                raise ATMError("accepting configurations have no successors in the tree")
            continue
        if k == "reject":
            raise ATMError("rejecting configuration in the tree")
        for t, sub in node.children:
            if t not in ts or step(c, t) != sub.config:
                raise ATMError(f"invalid successor of {c}")
        used = [t for t, _ in node.children]
        if k == "exists" and len(used) != 1:
            raise ATMError("existential configurations need exactly one successor")
        if k == "forall" and sorted(used) != sorted(ts):
            raise ATMError("universal configurations need every successor")


# ---------------------------------------------------------------------------
# names


class Names:
    """Concept names of the encoding for a machine and address width n."""

    def __init__(self, m: ATMachine, n: int):
        self.m, self.n = m, n
        self.trans = m.all_transitions()

    @staticmethod
    def X(q: str | None) -> str:
        return "X_box" if q is None else f"X_q_{q}"

    @staticmethod
    def Y(a: str) -> str:
        return f"Y_{a}"

    @staticmethod
    def Z(q: str | None, a: str) -> str:
        return f"Z_box_{a}" if q is None else f"Z_q_{q}_{a}"

    @staticmethod
    def B(k: int) -> str:
        return f"B{k}"

    def xstates(self) -> list:
        return list(self.m.states) + [None]

    def B_names(self) -> list[str]:
        return [self.B(k) for k in range(self.n)]

    def Z_names(self) -> list[str]:
        return [self.Z(q, a) for q in self.xstates() for a in self.m.gamma]

    def conspicuous_names(self) -> list[str]:
        return self.B_names() + self.Z_names()

    def tau(self, k: int) -> str:
        return f"tr{k}"


def _bits(j: int, n: int) -> list[int]:
    return [(j >> k) & 1 for k in range(n)]


def _val(bits: dict) -> int:
    return sum(b << k for k, b in bits.items())


# ---------------------------------------------------------------------------
# TBox


def _c(*names) -> object:
    return conj(Name(x) for x in names)


def _or(names) -> object:
    return disj(Name(x) for x in names)


def _implies(lhs, rhs) -> CI:
    lhs = [lhs] if isinstance(lhs, str) else list(lhs)
    return CI(_c(*lhs), Name(rhs) if isinstance(rhs, str) else rhs)


def _never(*names) -> CI:
    return CI(_c(*names), Bottom())


def _one_of(guard: str, names: list[str]) -> list[CI]:
    out = [CI(Name(guard), _or(names))]
    out += [_never(a, b) for a, b in itertools.combinations(names, 2)]
    return out


def _alpha(a: str, mid: str, b: str) -> list[CI]:
    return [CI(Name(a), Exists(T1, Name(mid))), CI(Name(mid), Exists(T2, Name(b)))]


def build_tbox(m: ATMachine, w: tuple) -> TBox:
    n = len(w)
    N = Names(m, n)
    G = m.gamma
    cis: list[CI] = []
    add = cis.extend

    def bit(p, k, b):
        return f"{p}{k}_{b}"

    # root and initial configuration
    add(_alpha("R", "RM", "Init"))
    add([_implies("Init", x) for x in ["Cfg", "InitF", f"S_{m.initial}", f"H_{w[0]}"]])
    add([_implies("Init", bit("HP", k, 0)) for k in range(n)])
    add([_implies("Cfg", "CT"), _implies("Cfg", "Lv0")])
    cis.append(CI(Name("Cfg"), _or(["InitF", "NonInit"])))
    cis.append(_never("InitF", "NonInit"))
    add(_one_of("Cfg", [f"S_{q}" for q in m.states]))
    add(_one_of("Cfg", [f"H_{a}" for a in G]))
    for k in range(n):
        add(_one_of("Cfg", [bit("HP", k, 0), bit("HP", k, 1)]))
        cis.append(CI(_c("Cfg", "NonInit"), _or([bit("PP", k, 0), bit("PP", k, 1)])))
        cis.append(_never(bit("PP", k, 0), bit("PP", k, 1)))

    # acceptance and transitions
    cis.append(_never(f"S_{m.reject}"))
    for q in m.states:
        if m.kind[q] in ("accept", "reject"):
            continue
        for a in G:
            ts = [k for k, t in enumerate(N.trans) if t[0] == q and t[1] == a]
            if m.kind[q] == "exists":
                cis.append(CI(_c("Cfg", f"S_{q}", f"H_{a}"), _or(N.tau(k) + "_ch" for k in ts)))
            elif not ts:
                cis.append(_never("Cfg", f"S_{q}", f"H_{a}"))
            else:
                add([_implies(["Cfg", f"S_{q}", f"H_{a}"], N.tau(k) + "_ch") for k in ts])
    for k, (q, a, p, b, mv) in enumerate(N.trans):
        t = N.tau(k)
        add(_alpha(t + "_ch", t + "_m1", t + "_n"))
        add(_alpha(t + "_n", t + "_m2", t + "_c"))
        add([_implies(t + "_m1", "TM"), _implies(t + "_n", "TN"), _implies(t + "_m2", "TM2")])
        add([_implies(t + "_c", x) for x in
             ["Cfg", "NonInit", f"S_{p}", f"WB_{b}", "DirP" if mv > 0 else "DirM", f"PS_{q}", f"PA_{a}"]])
    # previous head position travels along the transition path
    for k in range(n):
        for b in (0, 1):
            hp, th, pp = bit("HP", k, b), bit("THP", k, b), bit("PP", k, b)
            cis.append(CI(_c("Cfg", hp), Forall(T1, Name(th))))
            cis.append(CI(_c("TM", th), Forall(T2, Name(th))))
            cis.append(CI(_c("TN", th), Forall(T1, Name(th))))
            cis.append(CI(_c("TM2", th), Forall(T2, Name(pp))))
    # head moves: HP = PP ± 1, flip position k
    for d, pre_bit, new_bit in (("DirP", 1, 0), ("DirM", 0, 1)):
        flip = "Inc" if d == "DirP" else "Dec"
        cis.append(CI(_c("Cfg", d), _or(f"{flip}{k}" for k in range(n))))
        for k in range(n):
            f = f"{flip}{k}"
            for j in range(k):
                cis.append(_never(f, bit("PP", j, 1 - pre_bit)))
                cis.append(_never(f, bit("HP", j, 1 - new_bit)))
            cis.append(_never(f, bit("PP", k, pre_bit)))
            cis.append(_never(f, bit("HP", k, 1 - pre_bit)))
            for j in range(k + 1, n):
                cis.append(_never(f, bit("PP", j, 0), bit("HP", j, 1)))
                cis.append(_never(f, bit("PP", j, 1), bit("HP", j, 0)))

    # configuration trees of height n
    for k in range(n):
        for b in (0, 1):
            mid, node = f"CM{b}_{k}", f"N{b}_{k + 1}"
            add(_alpha(f"Lv{k}", mid, node))
            add([_implies(mid, "CM"), _implies(node, "CT"), _implies(node, f"Lv{k + 1}"),
                 _implies(node, bit("Bit", k, b))])
    cis.append(_implies(f"Lv{n}", "Cell"))
    for k in range(n):
        add(_one_of("Cell", [bit("Bit", k, 0), bit("Bit", k, 1)]))

    # markers handed down configuration trees and into the u elements
    carried = ([f"S_{q}" for q in m.states] + [f"H_{a}" for a in G] + [f"PS_{q}" for q in m.states]
               + [f"PA_{a}" for a in G] + [f"WB_{a}" for a in G] + [f"K_{a}" for a in G]
               + ["InitF", "NonInit", "IsHead", "NeqH", "IsPrev", "NeqP"]
               + [bit(p, k, b) for p in ("HP", "PP", "Bit") for k in range(n) for b in (0, 1)])
    for x in carried:
        cis.append(CI(_c("CT", x), Forall(T1, Name(x))))
        cis.append(CI(_c("CM", x), Forall(T2, Name(x))))

    # cells: head / previous-head flags and content
    for flag, neq, diff, pos, guard in (("IsHead", "NeqH", "DH", "HP", "Cell"),
                                        ("IsPrev", "NeqP", "DP", "PP", "NonInit")):
        cis.append(CI(_c("Cell", guard) if guard != "Cell" else Name("Cell"), _or([flag, neq])))
        cis.append(_never(flag, neq))
        cis.append(CI(_c("Cell", neq), _or(f"{diff}{k}" for k in range(n))))
        for k in range(n):
            for b in (0, 1):
                cis.append(_never(flag, bit("Bit", k, b), bit(pos, k, 1 - b)))
                cis.append(_never(f"{diff}{k}", bit("Bit", k, b), bit(pos, k, b)))
    add(_one_of("Cell", [f"K_{a}" for a in G]))
    # initial tape: w followed by blanks
    cis.append(CI(_c("Cell", "InitF"), _or([f"AtIn{j}" for j in range(n)] + ["Beyond"])))
    for j in range(n):
        bj = _bits(j, n)
        for k in range(n):
            cis.append(_never(f"AtIn{j}", bit("Bit", k, 1 - bj[k])))
        cis.append(_implies(f"AtIn{j}", f"K_{w[j]}"))
        cis.append(_never("Beyond", *[bit("Bit", k, bj[k]) for k in range(n)]))
    cis.append(_implies("Beyond", f"K_{m.blank}"))

    # cell gadget
    add(_alpha("Cell", "KH", "UH"))
    add(_alpha("Cell", "KP", "UP"))
    add([_implies("KH", "CM"), _implies("KP", "CM"), _implies("UH", "U"), _implies("UP", "U")])
    add(_alpha("UH", "MH", "VH"))
    add(_alpha("UP", "MP", "VP"))
    add([_implies("MH", "M"), _implies("MP", "M"), _implies("VH", "V"), _implies("VP", "V")])
    cis.append(CI(Name("M"), Exists(T1, Name("Anon1"))))
    cis.append(CI(Name("V"), Exists(T2, Name("Anon2"))))
    cis.append(CI(Name("VH"), Exists(T1, Name("WH"))))
    cis.append(CI(Name("VP"), Exists(T1, Name("WP"))))
    add([_implies("WH", "Gh"), _implies("WP", "Gp")])

    X, Y, Z = N.X, N.Y, N.Z
    add(_one_of("U", [X(q) for q in N.xstates()]))
    add(_one_of("U", [Y(a) for a in G]))
    # current content at u_h
    for q in m.states:
        cis.append(_implies(["UH", "IsHead", f"S_{q}"], X(q)))
        cis.append(_implies(["UP", "InitF", "IsHead", f"S_{q}"], X(q)))
        cis.append(_implies(["UP", "NonInit", "IsPrev", f"PS_{q}"], X(q)))
    cis.append(_implies(["UH", "NeqH"], X(None)))
    cis.append(_implies(["UP", "InitF", "NeqH"], X(None)))
    cis.append(_implies(["UP", "NonInit", "NeqP"], X(None)))
    for a in G:
        cis.append(_implies(["UH", "IsHead", f"H_{a}"], Y(a)))
        cis.append(_implies(["UH", "NeqH", "NonInit", "IsPrev", f"WB_{a}"], Y(a)))
        cis.append(_implies(["UH", "NeqH", "NonInit", "NeqP", f"K_{a}"], Y(a)))
        cis.append(_implies(["UH", "NeqH", "InitF", f"K_{a}"], Y(a)))
        cis.append(_implies(["UP", "InitF", "IsHead", f"H_{a}"], Y(a)))
        cis.append(_implies(["UP", "InitF", "NeqH", f"K_{a}"], Y(a)))
        cis.append(_implies(["UP", "NonInit", "IsPrev", f"PA_{a}"], Y(a)))
        cis.append(_implies(["UP", "NonInit", "NeqP", "IsHead", f"H_{a}"], Y(a)))
        cis.append(_implies(["UP", "NonInit", "NeqP", "NeqH", f"K_{a}"], Y(a)))
    # addresses: u carries the cell address, v its complement
    for k in range(n):
        cis.append(_implies(["U", bit("Bit", k, 1)], N.B(k)))
        cis.append(_never("U", bit("Bit", k, 0), N.B(k)))
        cis.append(_implies(["V", bit("Bit", k, 0)], N.B(k)))
        cis.append(_never("V", bit("Bit", k, 1), N.B(k)))
        for b in (0, 1):
            cis.append(CI(_c("U", bit("Bit", k, b)), Forall(T1, Name(bit("Bit", k, b)))))
            cis.append(CI(_c("M", bit("Bit", k, b)), Forall(T2, Name(bit("Bit", k, b)))))
    # u's content copied to v as VX/VY
    for src, dst in [(X(q), "V" + X(q)) for q in N.xstates()] + [(Y(a), "V" + Y(a)) for a in G]:
        cis.append(CI(_c("U", src), Forall(T1, Name(dst))))
        cis.append(CI(_c("M", dst), Forall(T2, Name(dst))))
    add(_one_of("V", ["V" + X(q) for q in N.xstates()]))
    add(_one_of("V", ["V" + Y(a) for a in G]))
    # Z labelling
    for q in N.xstates():
        for a in G:
            z = Z(q, a)
            cis.append(_implies("VH", z))
            cis.append(_implies("UP", z))
            cis.append(CI(Name("UH"), _or([z, X(q)])))
            cis.append(CI(Name("UH"), _or([z, Y(a)])))
            cis.append(_never("UH", X(q), Y(a), z))
            cis.append(CI(Name("VP"), _or([z, "V" + X(q)])))
            cis.append(CI(Name("VP"), _or([z, "V" + Y(a)])))
            cis.append(_never("VP", "V" + X(q), "V" + Y(a), z))
    return TBox(tuple(cis))


# ---------------------------------------------------------------------------
# query


def _alpha_path(src: str, dst: str, length: int, prefix: str) -> list[tuple]:
    vs = [src] + [f"{prefix}{j}" for j in range(1, 2 * length)] + [dst]
    return [(T1 if j % 2 == 0 else T2, vs[j], vs[j + 1]) for j in range(2 * length)]


def q_star(x: str, y: str, prefix: str) -> list[tuple]:
    a, b, c, d = (f"{prefix}{s}" for s in "abcd")
    return [(T1, x, a), (T1, b, a), (T2, b, c), (T2, d, c), (T1, d, y)]


GH_VAR, GP_VAR = "gh", "gp"


def q_A(A: str, n: int, idx: int) -> list[tuple]:
    p = f"c{idx}"
    x, x1, x2 = f"{p}x", f"{p}x1", f"{p}x2"
    atoms = _alpha_path(x, x1, n + 2, f"{p}h") + _alpha_path(x, x2, n + 4, f"{p}p")
    atoms += [(A, x1), (A, x2)]
    atoms += q_star(x1, GH_VAR, f"{p}sh") + q_star(x2, GP_VAR, f"{p}sp")
    return atoms


def build_query(m: ATMachine, n: int) -> CQ:
    N = Names(m, n)
    atoms = {("Gh", GH_VAR), ("Gp", GP_VAR)}
    for idx, A in enumerate(N.conspicuous_names()):
        atoms |= set(q_A(A, n, idx))
    return CQ(frozenset(atoms), (), "qw")


_COPY = re.compile(r"^(c\d+)[a-z]")


def query_copies(q: CQ) -> list[CQ]:
    """The q_A copies of q_w (each with the shared G variables)."""
    groups: dict = {}
    for a in q.atoms:
        for v in a[1:]:
            mt = _COPY.match(v)
            if mt:
                groups.setdefault(mt.group(1), set()).add(a)
                break
    out = []
    for key in sorted(groups, key=lambda s: int(s[1:])):
        out.append(CQ(frozenset(groups[key] | {("Gh", GH_VAR), ("Gp", GP_VAR)}), (), f"{q.name}_{key}"))
    return out


# ---------------------------------------------------------------------------
# instance


@dataclass
class HardnessInstance:
    kb: KnowledgeBase
    query: CQ
    n: int
    machine: ATMachine
    word: tuple
    params: dict

    @property
    def names(self) -> Names:
        return Names(self.machine, self.n)

    def normal_tbox(self) -> NormalTBox:
        return self.kb.normal_tbox()


def gen_instance(m: ATMachine, w) -> HardnessInstance:
    w = tuple(w)
    initial_config(m, w)  # validates the word
    n = len(w)
    tbox = build_tbox(m, w)
    kb = KnowledgeBase(tbox, ABox(frozenset({("R", "a")})), frozenset({T1, T2}))
    q = build_query(m, n)
    N = Names(m, n)
    params = {
        "n": n,
        "states": len(m.states),
        "tape_symbols": len(m.gamma),
        "copies": len(N.conspicuous_names()),
        "tbox_cis": len(tbox.cis),
        "query_atoms": len(q.atoms),
        "query_vars": len(q.vars),
        "cells_per_configuration": 2 ** n,
    }
    return HardnessInstance(kb, q, n, m, w, params)


def write_instance(inst: HardnessInstance, out: str) -> list[str]:
    from .mosaic import _atomic_write

    os.makedirs(out, exist_ok=True)
    files = {
        "kb.txt": serialize_kb(inst.kb),
        "query.txt": f"trans {T1} {T2}\n{format_cq(inst.query)}\n",
        "manifest.json": json.dumps({"word": "".join(inst.word), **inst.params,
                                     "intended_use": "structural tests; beyond the decision engine's caps "
                                                     "for n >= 2 and not in its supported fragment "
                                                     "(two transitive roles in a Boolean CQ)"},
                                    indent=2, sort_keys=True) + "\n",
    }
    paths = []
    for name, text in files.items():
        p = os.path.join(out, name)
        _atomic_write(p, text)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# intended models


class _Builder:
    def __init__(self):
        self.labels: dict = {}
        self.edges: set = set()

    def el(self, *labels) -> int:
        e = len(self.labels)
        self.labels[e] = set(labels)
        return e

    def edge(self, r, a, b):
        self.edges.add((r, a, b))

    def alpha(self, a, mid_label, *labels) -> tuple[int, int]:
        mid = self.el(mid_label)
        b = self.el(*labels)
        self.edge(T1, a, mid)
        self.edge(T2, mid, b)
        return mid, b


def _horn_closure(i: Interpretation, tb: NormalTBox) -> Interpretation:
    labels = {e: set(l) for e, l in i.labels.items()}
    horn = [c for c in tb.props if len(c.rhs) == 1]
    foralls = tb.foralls
    changed = True
    while changed:
        changed = False
        for e in i.domain:
            tp = labels[e]
            for c in horn:
                if c.lhs <= tp:
                    (x,) = c.rhs
                    if x not in tp:
                        tp.add(x)
                        changed = True
            for c in foralls:
                if c.lhs is None or c.lhs in tp:
                    for f in i.succ(c.role, e):
                        if c.filler not in labels[f]:
                            labels[f].add(c.filler)
                            changed = True
    return i.replace(labels={e: frozenset(l) for e, l in labels.items()})


def intended_model(m: ATMachine, w, tree: CompTree, overrides: dict | None = None,
                   inst: HardnessInstance | None = None) -> Interpretation:
    """Transitively closed model of K_w encoding ``tree``.

    ``overrides`` maps (configuration index in preorder, cell address) to a
    tape symbol for the cell's free content choice; it only takes effect on
    cells that are neither the head nor the previous head, and yields a
    model of K_w whose copying is broken there."""
    w = tuple(w)
    validate_tree(m, w, tree)
    inst = inst or gen_instance(m, w)
    n, N = inst.n, inst.names
    tb = inst.normal_tbox()
    overrides = overrides or {}
    bld = _Builder()
    root = bld.el("R")
    counter = [0]

    def hp(c: Config) -> list[str]:
        return [f"HP{k}_{b}" for k, b in enumerate(_bits(c.head, n))]

    def config_node(parent, mid_label, label, node: CompTree, prev: Config | None):
        c = node.config
        idx = counter[0]
        counter[0] += 1
        _, d = bld.alpha(parent, mid_label, label, f"H_{c.symbol}", *hp(c))
        if prev is not None:
            mv = c.head - prev.head
            flip = "Inc" if mv > 0 else "Dec"
            lo, hi = (prev.head, c.head) if mv > 0 else (c.head, prev.head)
            k = (lo ^ hi).bit_length() - 1
            bld.labels[d].add(f"{flip}{k}")
        config_tree(d, c, prev, idx)
        ts = N.trans
        for t, sub in node.children:
            k = ts.index((c.state, c.symbol) + t)
            tn = f"tr{k}"
            bld.labels[d].add(tn + "_ch")
            _, nnode = bld.alpha(d, tn + "_m1", tn + "_n")
            config_node(nnode, tn + "_m2", tn + "_c", sub, c)

    def config_tree(d, c: Config, prev: Config | None, idx: int):
        level = [(d, 0)]
        for k in range(n):
            nxt = []
            for node, addr in level:
                for b in (0, 1):
                    _, child = bld.alpha(node, f"CM{b}_{k}", f"N{b}_{k + 1}")
                    nxt.append((child, addr | (b << k)))
            level = nxt
        for e, addr in level:
            cell(e, addr, c, prev, idx)

    def cell(e, j, c: Config, prev: Config | None, idx: int):
        L = bld.labels[e]
        bits = _bits(j, n)

        def flag(pos: int, yes: str, no: str, diff: str):
            if j == pos:
                L.add(yes)
            else:
                L.add(no)
                k = next(k for k in range(n) if bits[k] != _bits(pos, n)[k])
                L.add(f"{diff}{k}")

        flag(c.head, "IsHead", "NeqH", "DH")
        if prev is not None:
            flag(prev.head, "IsPrev", "NeqP", "DP")
            content = c.tape[j]
            if j not in (c.head, prev.head) and (idx, j) in overrides:
                content = overrides[(idx, j)]
            L.add(f"K_{content}")
        else:
            L.add(f"K_{c.tape[j]}")
            L.add(f"AtIn{j}" if j < n else "Beyond")
        for side in ("H", "P"):
            _, u = bld.alpha(e, f"K{side}", f"U{side}")
            mm, v = bld.alpha(u, f"M{side}", f"V{side}")
            o = bld.el("Anon1")
            bld.edge(T1, mm, o)
            s = bld.el("Anon2")
            bld.edge(T2, v, s)
            wg = bld.el(f"W{side}")
            bld.edge(T1, v, wg)

    config_node(root, "RM", "Init", tree, None)
    i = transitive_closure(Interpretation({e: frozenset(l) for e, l in bld.labels.items()},
                                          frozenset(bld.edges), {"a": root}, frozenset({T1, T2})))
    i = _horn_closure(i, tb)
    i = _add_z_labels(i, N)
    return _horn_closure(i, tb)


def _content(tp, N: Names) -> tuple | None:
    xs = [q for q in N.xstates() if N.X(q) in tp]
    ys = [a for a in N.m.gamma if N.Y(a) in tp]
    if len(xs) != 1 or len(ys) != 1:
        return None
    return xs[0], ys[0]


def _add_z_labels(i: Interpretation, N: Names, only: set | None = None) -> Interpretation:
    """Z labels of u_h and v_p from the current X/Y contents."""
    labels = {e: set(l) for e, l in i.labels.items()}
    allz = set(N.Z_names())
    for e in (only if only is not None else i.domain):
        tp = labels[e]
        if "UH" in tp:
            src = _content(tp, N)
        elif "VP" in tp:
            xs = [q for q in N.xstates() if "V" + N.X(q) in tp]
            ys = [a for a in N.m.gamma if "V" + N.Y(a) in tp]
            src = (xs[0], ys[0]) if len(xs) == 1 and len(ys) == 1 else None
        else:
            continue
        tp -= allz
        tp |= allz
        if src is not None:
            tp.discard(N.Z(*src))
    return i.replace(labels={e: frozenset(l) for e, l in labels.items()})


# ---------------------------------------------------------------------------
# structure recognition


@dataclass(frozen=True)
class CellRef:
    config: int
    address: int
    element: int
    uh: int
    up: int
    vh: int
    vp: int
    wh: int
    wp: int


class Structure:
    """Configurations, cells and successor pairs recovered from the marker
    concepts and the t1/t2 edges of a model."""

    def __init__(self, i: Interpretation):
        self.i = i
        cfgs = sorted(e for e in i.domain if "Cfg" in i.labels[e])
        if not cfgs:
            raise StructureError("no configuration nodes")
        self.configs = cfgs
        self.initial = [d for d in cfgs if "InitF" in i.labels[d]]
        if len(self.initial) != 1:
            raise StructureError("expected exactly one initial configuration")
        self._alpha: dict = {}
        self.cells: dict = {d: self._cells_of(d) for d in cfgs}
        cfgset = set(cfgs)
        self.successors = {d: sorted(self.alpha_k(d, 2) & cfgset) for d in cfgs}

    def direct(self, r: str, e) -> set:
        """Covering r-successors (the model is transitively closed)."""
        s = self.i.succ(r, e)
        return s - set().union(*(self.i.succ(r, x) for x in s)) if s else set()

    def alpha(self, e) -> set:
        if e not in self._alpha:
            out = set()
            for y in self.direct(T1, e):
                out |= self.direct(T2, y)
            self._alpha[e] = out
        return self._alpha[e]

    def alpha_k(self, e, k: int) -> set:
        cur = {e}
        for _ in range(k):
            cur = set().union(*(self.alpha(x) for x in cur)) if cur else set()
        return cur

    def _one(self, elems, label, where) -> int:
        hits = sorted(x for x in elems if label in self.i.labels[x])
        if len(hits) != 1:
            raise StructureError(f"{where}: expected one {label} element, found {len(hits)}")
        return hits[0]

    def _cells_of(self, d) -> list[CellRef]:
        i = self.i
        frontier, seen = {d}, set()
        cells = []
        depth = 0
        while frontier and depth < 64:
            depth += 1
            frontier = set().union(*(self.alpha(x) for x in frontier))
            frontier = {x for x in frontier if "CT" in i.labels[x] and "Cfg" not in i.labels[x]} - seen
            seen |= frontier
            cells += [x for x in frontier if "Cell" in i.labels[x]]
        out = []
        for e in sorted(cells):
            uh = self._one(self.alpha(e), "UH", f"cell {e}")
            up = self._one(self.alpha(e), "UP", f"cell {e}")
            vh = self._one(self.alpha(uh), "VH", f"cell {e}")
            vp = self._one(self.alpha(up), "VP", f"cell {e}")
            wh = self._one(self.direct(T1, vh), "WH", f"cell {e}")
            wp = self._one(self.direct(T1, vp), "WP", f"cell {e}")
            bits = {}
            for lab in i.labels[e]:
                mt = re.fullmatch(r"Bit(\d+)_([01])", lab)
                if mt:
                    bits[int(mt.group(1))] = int(mt.group(2))
            out.append(CellRef(d, _val(bits), e, uh, up, vh, vp, wh, wp))
        return sorted(out, key=lambda c: c.address)

    def successive_pairs(self):
        for d in self.configs:
            for d2 in self.successors[d]:
                yield d, d2

    def non_initial_cells(self) -> list[CellRef]:
        order = self._preorder()
        return [c for d in order if d not in self.initial for c in self.cells[d]]

    def _preorder(self) -> list[int]:
        out, todo = [], [self.initial[0]]
        while todo:
            d = todo.pop()
            out.append(d)
            todo.extend(reversed(self.successors[d]))
        return out


def conspicuous_names_in(i: Interpretation) -> list[str]:
    names = set().union(*i.labels.values())
    return sorted(x for x in names if re.fullmatch(r"B\d+", x) or x.startswith("Z_"))


def conspicuous_check(model: Interpretation, names: list[str] | None = None) -> tuple[bool, list]:
    """Cells c, c' of successive configurations that are A-conspicuous for
    every A: A at u_h(c) and u_p(c'), or A at v_h(c) and v_p(c')."""
    st = Structure(model)
    names = names if names is not None else conspicuous_names_in(model)
    lab = model.labels
    hits = []
    for d, d2 in st.successive_pairs():
        for c in st.cells[d]:
            for c2 in st.cells[d2]:
                if all((A in lab[c.uh] and A in lab[c2.up]) or (A in lab[c.vh] and A in lab[c2.vp])
                       for A in names):
                    hits.append((c, c2))
    return bool(hits), hits


def improper_pairs(model: Interpretation, names: Names) -> list:
    """Same-address cells of successive configurations whose u_h / u_p
    contents differ (the definition of properness, read off directly)."""
    st = Structure(model)
    bad = []
    for d, d2 in st.successive_pairs():
        by_addr = {c.address: c for c in st.cells[d2]}
        for c in st.cells[d]:
            c2 = by_addr.get(c.address)
            if c2 is None or _content(model.labels[c.uh], names) != _content(model.labels[c2.up], names):
                bad.append((c, c2))
    return bad


def match_qw(q: CQ, model: Interpretation, limit: int | None = 1) -> list[tuple]:
    """(G_h element, G_p element) pairs under which every q_A copy matches.

    The copies share only the two G variables, so a match of q_w is a pair
    of G images plus an independent match of each copy."""
    copies = query_copies(q)
    ghs = sorted(model.ext("Gh"))
    gps = sorted(model.ext("Gp"))
    out = []
    for gh in ghs:
        for gp in gps:
            seed = {GH_VAR: gh, GP_VAR: gp}
            if all(has_match(c, model, seed) for c in copies):
                out.append((gh, gp))
                if limit is not None and len(out) >= limit:
                    return out
    return out


# ---------------------------------------------------------------------------
# mutations


def inject_copy_error(model: Interpretation, cell_index: int, content: tuple, names: Names) -> Interpretation:
    """Rewrite the u_p contents of a non-initial cell to ``content`` =
    (state or None for the blank marker, symbol), re-deriving the contents
    copied to v_p and its Z labels."""
    st = Structure(model)
    cells = st.non_initial_cells()
    if not 0 <= cell_index < len(cells):
        raise IndexError(f"cell index {cell_index} out of range (0..{len(cells) - 1})")
    q, a = content
    if q is not None and q not in names.m.states or a not in names.m.gamma:
        raise ValueError(f"unknown content {content}")
    c = cells[cell_index]
    labels = {e: set(l) for e, l in model.labels.items()}
    xs = {names.X(s) for s in names.xstates()}
    ys = {names.Y(s) for s in names.m.gamma}
    labels[c.up] -= xs | ys
    labels[c.up] |= {names.X(q), names.Y(a)}
    below = model.succ(T1, c.up)
    below |= set().union(*(model.succ(T2, x) for x in below)) if below else set()
    vxs = {"V" + x for x in xs | ys}
    for e in below:
        if labels[e] & vxs:
            labels[e] -= vxs
            labels[e] |= {"V" + names.X(q), "V" + names.Y(a)}
    out = model.replace(labels={e: frozenset(l) for e, l in labels.items()})
    return _add_z_labels(out, names, {c.vp})
