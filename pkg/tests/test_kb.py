import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from sqe.interp import Interpretation, check_model
from sqe.kb import (CI, TBox, And, Bottom, Exists, Forall, Name, Not, Or, Top, ExistsCI, ForallCI, PropCI, ParseError,
                    SignatureError, Signature, ABox, normalize, parse_kb, restrict_to_role, serialize_kb,
                    signature_of, tbox_size, NormalTBox)
from sqe.query import parse_cq


def A(n):
    return Name(n)


# ---------------------------------------------------------------- normalize

def test_normal_input_is_unchanged():
    n = normalize(TBox([CI(A("A"), A("B"))]))
    assert n.cis == (PropCI(frozenset({"A"}), frozenset({"B"})),)


def test_existential_with_disjunction_gets_fresh_name():
    n = normalize(TBox([CI(A("A"), Exists("r", Or(A("B"), A("C"))))]))
    fresh = [c for c in n.concept_names() if c not in {"A", "B", "C"}]
    assert len(fresh) == 1
    x = fresh[0]
    assert set(n.cis) == {ExistsCI("A", "r", x), PropCI(frozenset({x}), frozenset({"B", "C"}))}


def test_negated_lhs_becomes_top_clause():
    n = normalize(TBox([CI(Not(A("A")), A("B"))]))
    assert n.cis == (PropCI(frozenset(), frozenset({"A", "B"})),)


def test_fresh_names_are_deterministic():
    t = TBox([CI(A("A"), Forall("r", And(A("B"), Exists("s", Not(A("C"))))))])
    assert normalize(t) == normalize(t)
    assert all(c.startswith("_N") for c in normalize(t).concept_names() - {"A", "B", "C"})


CORPUS = [
    TBox([CI(A("A"), Exists("r", Or(A("B"), A("C"))))]),
    TBox([CI(Not(A("A")), A("B"))]),
    TBox([CI(A("A"), Forall("r", A("B"))), CI(Exists("r", A("B")), A("C"))]),
    TBox([CI(And(A("A"), Not(A("B"))), Bottom())]),
    TBox([CI(Top(), Or(Exists("r", A("A")), Forall("r", Not(A("B")))))]),
    TBox([CI(Forall("r", A("A")), A("B"))]),
    TBox([CI(A("A"), Exists("r", Exists("r", A("B"))))]),
]


@pytest.mark.parametrize("t", CORPUS, ids=range(len(CORPUS)))
def test_normal_form_shapes_and_idempotence(t):
    n = normalize(t)
    for c in n.cis:
        assert isinstance(c, (PropCI, ExistsCI, ForallCI))
    assert normalize(n) == n


def _interps(concepts, roles, size):
    dom = range(size)
    pairs = [(a, b) for a in dom for b in dom]
    for lab in itertools.product(range(2 ** len(concepts)), repeat=size):
        labels = {e: frozenset(c for k, c in enumerate(concepts) if lab[e] >> k & 1) for e in dom}
        for bits in range(2 ** (len(pairs) * len(roles))):
            edges = frozenset((r, *pairs[k]) for j, r in enumerate(roles) for k in range(len(pairs))
                              if bits >> (j * len(pairs) + k) & 1)
            yield Interpretation(labels, edges)


def _extends_to_model(j, fresh, n):
    dom = j.domain
    for lab in itertools.product(range(2 ** len(fresh)), repeat=len(dom)):
        labels = {e: j.tp(e) | {c for k, c in enumerate(fresh) if lab[idx] >> k & 1}
                  for idx, e in enumerate(dom)}
        if not check_model(j.replace(labels=labels), n):
            return True
    return False


def _conservative_on(t, j):
    n = normalize(t)
    fresh = sorted(n.concept_names() - t.concept_names())
    return (not check_model(j, t)) == _extends_to_model(j, fresh, n)


@pytest.mark.parametrize("t", CORPUS[:3], ids=range(3))
def test_conservativity_exhaustive_up_to_two_elements(t):
    concepts = sorted(t.concept_names())
    roles = sorted(t.role_names())
    for size in (1, 2):
        for j in _interps(concepts, roles, size):
            assert _conservative_on(t, j)


@pytest.mark.parametrize("t", CORPUS, ids=range(len(CORPUS)))
def test_conservativity_sampled_three_elements(t):
    rng = random.Random(7)
    concepts = sorted(t.concept_names())
    roles = sorted(t.role_names())
    for _ in range(300):
        labels = {e: frozenset(c for c in concepts if rng.random() < 0.5) for e in range(3)}
        edges = frozenset((r, a, b) for r in roles for a in range(3) for b in range(3) if rng.random() < 0.3)
        assert _conservative_on(t, Interpretation(labels, edges))


# ------------------------------------------------------------ restrict_to_role

def test_restrict_to_role_filters():
    n = NormalTBox((ExistsCI("A", "r", "B"), ForallCI("A", "s", "C"), PropCI(frozenset({"A"}), frozenset({"B"}))))
    assert set(restrict_to_role(n, "r").cis) == {ExistsCI("A", "r", "B"), PropCI(frozenset({"A"}), frozenset({"B"}))}
    assert restrict_to_role(NormalTBox(()), "r").cis == ()
    one = NormalTBox((ForallCI("A", "t", "A"),))
    assert restrict_to_role(one, "t") == one


def test_restrict_to_unknown_role_is_an_error():
    n = NormalTBox((ExistsCI("A", "r", "B"),))
    with pytest.raises(ValueError):
        restrict_to_role(n, "zz", known_roles={"r"})


@given(st.sampled_from(CORPUS), st.sampled_from(["r", "s"]))
def test_restriction_is_a_subset_mentioning_only_r(t, r):
    n = normalize(t)
    sub = restrict_to_role(n, r)
    assert set(sub.cis) <= set(n.cis)
    assert sub.role_names() <= {r}


# ------------------------------------------------------------ signatures

def test_signature_examples():
    s = signature_of(TBox([CI(A("A"), Exists("r", A("B")))]))
    assert s.concept_names == {"A", "B"} and s.role_names == {"r"}
    s = signature_of(ABox(frozenset({("A", "a")}), frozenset({("r", "a", "b")})))
    assert s.individual_names == {"a", "b"}
    s = signature_of(TBox([]))
    assert not (s.concept_names or s.role_names or s.individual_names)
    s = signature_of(parse_cq("query q(x): A(x), r(x,y)"))
    assert s.concept_names == {"A"} and s.role_names == {"r"}


def test_signature_name_sets_must_be_disjoint():
    with pytest.raises(SignatureError):
        Signature(frozenset({"A"}), frozenset({"A"}))


# ------------------------------------------------------------ text format

def test_parse_grammar_instance():
    kb = parse_kb("trans t\nci A <= (some t A)")
    assert kb.transitive == {"t"}
    assert kb.tbox.cis == (CI(A("A"), Exists("t", A("A"))),)


def test_parse_all_constructors_and_abox():
    text = """# comment
role r
trans t
ci (and A (not B)) <= (or (all r C) (some t top) bot)
ci top <= (or A (not A))
assert A(a)
assert r(a,b)
"""
    kb = parse_kb(text)
    assert kb.abox.concepts == {("A", "a")} and kb.abox.roles == {("r", "a", "b")}
    assert parse_kb(serialize_kb(kb)) == kb


def test_undeclared_role_error():
    with pytest.raises(ParseError, match="undeclared role u"):
        parse_kb("ci A <= (some u A)")


def test_conflicting_transitivity_error():
    with pytest.raises(ParseError) as e:
        parse_kb("trans t\nrole t")
    assert e.value.line == 2


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as e:
        parse_kb("role r\n\nci A <= (and A")
    assert e.value.line == 3 and e.value.col > 0


_names = st.sampled_from(["A", "B", "C"])
_concepts = st.recursive(
    st.one_of(_names.map(Name), st.just(Top()), st.just(Bottom())),
    lambda c: st.one_of(c.map(Not), st.tuples(c, c).map(lambda p: And(*p)), st.tuples(c, c).map(lambda p: Or(*p)),
                        st.tuples(st.sampled_from(["r", "t"]), c).map(lambda p: Exists(*p)),
                        st.tuples(st.sampled_from(["r", "t"]), c).map(lambda p: Forall(*p))),
    max_leaves=6)


@settings(max_examples=150)
@given(st.lists(st.tuples(_concepts, _concepts), max_size=4))
def test_roundtrip_and_normalize_idempotent(pairs):
    from sqe.kb import KnowledgeBase
    t = TBox([CI(l, r) for l, r in pairs])
    kb = KnowledgeBase(t, ABox(frozenset(), frozenset()), frozenset({"t"}), frozenset({"r"}))
    assert parse_kb(serialize_kb(kb)).tbox == t
    n = normalize(t)
    assert normalize(n) == n


def test_tbox_size_counts_symbols():
    n = NormalTBox((ExistsCI("A", "r", "B"), PropCI(frozenset({"A"}), frozenset({"B"}))))
    assert tbox_size(n) > 0
    assert tbox_size(NormalTBox(())) == 0
