import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from sqe.interp import Interpretation, has_match, is_closed
from sqe.kb import CI, Exists, Forall, Name, TBox, normalize
from sqe.mosaic import (AUX_PREFIX, DUMMY_ROLE, ENTAILED, NOT_ENTAILED, AuxRegistry, EntailmentInstance, Mosaic,
                        Tile, assemble_countermodel, bound_values, canonical_key, chase_entails,
                        cluster_root_query, condition1_holds, decide_instance, enumerate_tiles, find_mosaic,
                        interior_problems, parse_instance, read_mosaic, report_bounds, serialize_instance,
                        shrink_tile, tile_violations, verify_mosaic, write_mosaic)
from sqe.ptq import compile_boolean_ptq, root_clusters
from sqe.query import clusters, parse_cq
from sqe.randgen import random_connected_cq


def inst_(text):
    return parse_instance(text)


def tile(labels, pairs, role, trans=True, root=0):
    return Tile(Interpretation(labels, frozenset((role, a, b) for a, b in pairs), {},
                               frozenset({role}) if trans else frozenset()), root, role)


LOOP_A = """trans t
concepts A B
tau A
ci A <= (some t A)
q1 query q(x): B(x)
"""


# ---------------------------------------------------------------- instances

def test_instance_round_trip():
    i = inst_(LOOP_A)
    assert i.roles == ("t",) and i.tau == {"A"} and i.transitive == {"t"}
    assert parse_instance(serialize_instance(i)) == i


def test_instance_validation():
    nt = normalize(TBox(()))
    with pytest.raises(ValueError, match="τ"):
        EntailmentInstance(nt, frozenset({"Z"}), concepts=("A",))
    bad = parse_cq("query q(x): r(x,y), r(z,y)", 1, {"r": False})
    with pytest.raises(ValueError, match="unary PTQ"):
        EntailmentInstance(nt, frozenset(), q1=(bad,), roles=("r",))


def test_dummy_role_when_no_roles():
    i = EntailmentInstance(normalize(TBox(())), frozenset({"A"}))
    assert i.roles == (DUMMY_ROLE,)


# ---------------------------------------------------------------- q_C

def test_four_clusters_root_query_of_c4(four_clusters):
    q, trans = four_clusters
    reg = AuxRegistry(trans)
    c4 = next(c for c in clusters(q, trans) if c.role == "t")
    qc = cluster_root_query(q, c4, reg)
    aux = [a for a in qc.atoms if a[0].startswith(AUX_PREFIX)]
    assert len(aux) == 3
    assert sorted(a[1] for a in aux) == ["x", "y", "z"]
    assert set(qc.binary) == set(c4.atoms)


def test_single_cluster_has_no_aux():
    q = parse_cq("query q(): t(x,y), t(y,z), A(z)", 1, {"t": True})
    reg = AuxRegistry({"t"})
    (c,) = clusters(q, {"t"})
    assert cluster_root_query(q, c, reg).atoms == q.atoms
    assert len(reg) == 0


def test_non_root_cluster_rejected(four_clusters):
    q, trans = four_clusters
    c2 = next(c for c in clusters(q, trans) if str(c) == "{s(y,y2)}")
    with pytest.raises(ValueError):
        cluster_root_query(q, c2, AuxRegistry(trans))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_root_query_vars_are_cluster_vars(seed):
    rng = random.Random(seed)
    q = random_connected_cq(rng, 6, ["t", "r", "s"], ["A", "B"])
    p = compile_boolean_ptq(q, ["t"])
    if p is None:
        return
    reg = AuxRegistry({"t"})
    for c in root_clusters(p.query, {"t"}):
        assert cluster_root_query(p.query, c, reg).vars == c.vars


# ---------------------------------------------------------------- verify_mosaic

def test_hand_built_cycle_mosaic_passes():
    i = inst_(LOOP_A)
    t = tile({0: {"A"}, 1: {"A"}}, [(0, 1), (1, 0), (0, 0), (1, 1)], "t")
    assert verify_mosaic(Mosaic([t], {"t": 0}), i) == []


def test_empty_queries_single_plain_tile():
    i = inst_("role r\nconcepts A\ntau A\n")
    t = tile({0: {"A"}}, [], "r", trans=False)
    assert verify_mosaic(Mosaic([t], {"r": 0}), i) == []
    t2 = tile({0: {"A"}, 1: set()}, [(0, 1)], "r", trans=False)
    # successor of type {} has no r-tile: condition 4
    bad = verify_mosaic(Mosaic([t2], {"r": 0}), i)
    assert [v.condition for v in bad] == ["4"] and bad[0].element == 1 and bad[0].role == "r"


def test_removing_a_witness_breaks_condition_4():
    i = inst_("trans t\nrole r\nconcepts A B\ntau A\nci A <= (some r B)\nci B <= (some t B)\n"
              "q1 query q(x): t(x,y), A(y)\n")
    res = find_mosaic(i, 2)
    m = res.mosaic
    assert m is not None and verify_mosaic(m, i) == []
    seen = []
    for k in range(len(m.tiles)):
        if k in m.initial.values():
            continue
        keep = [t for j, t in enumerate(m.tiles) if j != k]
        init = {r: v - (v > k) for r, v in m.initial.items()}
        bad = verify_mosaic(Mosaic(keep, init), i)
        seen += [v for v in bad if v.condition == "4"]
    assert seen
    assert all(v.tile is not None and v.element is not None and v.role for v in seen)
    assert "no " in str(seen[0])


def test_condition_1_and_3_violations():
    i = inst_("trans t\nconcepts A B\ntau A\nq0 query q(): t(x,y), B(y)\n")
    t = tile({0: {"A"}, 1: {"B"}}, [(0, 1)], "t")
    conds = {v.condition for v in verify_mosaic(Mosaic([t], {"t": 0}), i)}
    assert "1" in conds
    i3 = inst_("trans t\nconcepts A B\ntau A\n")
    t3 = tile({0: {"B"}}, [], "t")
    assert {v.condition for v in verify_mosaic(Mosaic([t3], {"t": 0}), i3)} == {"3"}


def test_condition_2_aux_label_required():
    i = inst_("trans t\nrole s\nconcepts A B\ntau A\nq0 query q(): t(x,y), s(y,z), B(z)\n")
    reg = AuxRegistry.for_instance(i)
    assert len(reg) == 1
    (aux,) = reg.names
    t = tile({0: {"A"}, 1: {"B"}}, [(0, 1)], "s", trans=False)
    bad = verify_mosaic(Mosaic([t], {"s": 0, "t": 0}), i, reg)
    assert any(v.condition == "2" and aux in v.detail for v in bad)


# ---------------------------------------------------------------- enumeration

def test_k1_no_cis_one_tile_per_type_and_role():
    i = inst_("trans t\nrole r\nconcepts A B\ntau A\n")
    tiles = list(enumerate_tiles(i, 1))
    plain = [(t.root_type, t.role) for t in tiles if not t.interp.edges]
    assert len(plain) == len(set(plain)) == 4 * 2
    # the only other one-element tiles are reflexive t-loops
    loops = [t for t in tiles if t.interp.edges]
    assert len(loops) == 4 and all(t.role == "t" for t in loops)


def test_enumerated_transitive_tiles_are_closed():
    i = inst_(LOOP_A)
    for t in enumerate_tiles(i, 3):
        assert is_closed(t.interp)
        assert tile_violations(t, i) == []


def _naive(i, k):
    """Generate-and-test over all relations and labellings (one transitive role)."""
    (role,) = i.roles
    types = [frozenset(c) for n in range(len(i.concepts) + 1) for c in itertools.combinations(i.concepts, n)]
    out = set()
    for n in range(1, k + 1):
        pairs = [(a, b) for a in range(n) for b in range(n)]
        for mask in range(1 << len(pairs)):
            rel = [pairs[j] for j in range(len(pairs)) if mask >> j & 1]
            for lab in itertools.product(types, repeat=n):
                t = tile(dict(enumerate(lab)), rel, role)
                if any((role, 0, b) not in t.interp.edges for b in range(1, n)):
                    continue
                if tile_violations(t, i) == []:
                    out.add(t.key)
    return out


@pytest.mark.parametrize("text", [LOOP_A, "trans t\nconcepts A B\ntau A\nci A <= (all t B)\n",
                                  "trans t\nconcepts A\ntau A\n"])
def test_enumeration_matches_naive(text):
    i = inst_(text)
    got = {t.key for t in enumerate_tiles(i, 2)}
    assert got == _naive(i, 2)


def test_canonical_key_is_isomorphism_invariant():
    a = Interpretation({0: {"A"}, 1: {"B"}, 2: set()}, {("t", 0, 1), ("t", 0, 2)}, {}, {"t"})
    b = Interpretation({0: {"A"}, 1: set(), 2: {"B"}}, {("t", 0, 1), ("t", 0, 2)}, {}, {"t"})
    assert canonical_key(a, 0, "t") == canonical_key(b, 0, "t")


# ---------------------------------------------------------------- find_mosaic

def test_find_mosaic_entailed_root():
    i = inst_("concepts A\ntau A\nq1 query q(x): A(x)\n")
    for k in (1, 2):
        assert find_mosaic(i, k).mosaic is None
    assert find_mosaic(i, 1).verdict == "unknown"
    assert find_mosaic(i, 2).verdict == "certified-entailed"


def test_find_mosaic_not_entailed_k1():
    i = inst_("concepts A\ntau A\nq1 query q(x): B(x)\n")
    res = find_mosaic(i, 1)
    assert res.mosaic is not None and res.verdict == "certified-nonentailed"
    assert verify_mosaic(res.mosaic, i) == []


def test_find_mosaic_existential_match():
    i = inst_("trans t\nconcepts A B\ntau A\nci A <= (some t B)\nq0 query q(): t(x,y), B(y)\n")
    for k in (1, 2, 3):
        assert find_mosaic(i, k).mosaic is None
    assert chase_entails(i, 1) is True
    assert decide_instance(i).status == ENTAILED


def test_monotone_in_k():
    i = inst_("trans t\nrole r\nconcepts A B\ntau A\nci A <= (some r B)\nci B <= (some t B)\n")
    found = [find_mosaic(i, k).mosaic is not None for k in (1, 2, 3, 4)]
    assert found == [False, True, True, True]  # the r-tile of A needs two elements


def test_union_of_mosaics_verifies():
    i = inst_("trans t\nrole r\nconcepts A B\ntau A\nci A <= (some r B)\nci B <= (some t B)\n"
              "q1 query q(x): t(x,y), A(y)\n")
    m1 = find_mosaic(i, 2).mosaic
    m2 = find_mosaic(i, 3, trim=False).mosaic
    tiles = list(dict.fromkeys(m1.tiles + m2.tiles))
    u = Mosaic(tiles, {r: tiles.index(m1.tiles[k]) for r, k in m1.initial.items()})
    assert verify_mosaic(u, i) == []


def test_mosaic_files_round_trip(tmp_path):
    i = inst_(LOOP_A)
    m = find_mosaic(i, 2).mosaic
    write_mosaic(m, i, str(tmp_path / "m"))
    m2, i2, aux = read_mosaic(str(tmp_path / "m"))
    assert i2 == i and [t.key for t in m2.tiles] == [t.key for t in m.tiles] and m2.initial == m.initial
    assert verify_mosaic(m2, i2) == []


# ---------------------------------------------------------------- shrinking

def test_shrink_minimal_tile_unchanged():
    i = inst_("trans t\nconcepts A\ntau A\n")
    t = tile({0: {"A"}}, [], "t")
    assert shrink_tile(t, i).key == t.key


def test_shrink_plain_star():
    i = inst_("role r\nconcepts A B\ntau A\nci A <= (some r B)\n")
    labels = {0: {"A"}, **{k: ({"B"} if k % 2 else set()) for k in range(1, 11)}}
    t = tile(labels, [(0, k) for k in range(1, 11)], "r", trans=False)
    s = shrink_tile(t, i)
    assert len(s.interp.domain) <= len(i.tbox.concept_names()) + 1
    assert tile_violations(s, i) == [] and s.root_type == t.root_type


def test_shrink_transitive_chain():
    i = inst_(LOOP_A)
    n = 5
    pairs = [(a, b) for a in range(n) for b in range(n) if a < b]
    # the last element needs an A successor: close the chain with a loop
    pairs.append((n - 1, n - 1))
    t = tile({k: {"A"} for k in range(n)}, pairs, "t")
    assert tile_violations(t, i) == []
    s = shrink_tile(t, i)
    assert len(s.interp.domain) <= 2  # (|N_C(T)| + 1)! = 2
    reg = AuxRegistry.for_instance(i)
    assert tile_violations(s, i) == [] and condition1_holds(s, reg)
    assert s.root_type == t.root_type


def test_shrink_rejects_invalid_tile():
    i = inst_(LOOP_A)
    with pytest.raises(ValueError):
        shrink_tile(tile({0: {"A"}}, [], "t"), i)


# ---------------------------------------------------------------- assembly

def test_assemble_depth_zero_is_initial_family():
    i = inst_(LOOP_A)
    m = find_mosaic(i, 2).mosaic
    a = assemble_countermodel(m, i, 0)
    first = m.tiles[m.initial["t"]]
    assert len(a.interp.domain) == len(first.interp.domain)
    assert a.interp.tp(a.root) == first.root_type


def test_assemble_loop_has_long_paths_or_cycles():
    i = inst_("trans t\nrole r\nconcepts A B\ntau A\nci A <= (some r A)\n")
    m = find_mosaic(i, 2).mosaic
    a = assemble_countermodel(m, i, 4)
    # r is not transitive: the prefix is an r-path of A elements of length 4
    path, e = [a.root], a.root
    while True:
        nxt = [f for f in a.interp.succ("r", e) if "A" in a.interp.tp(f)]
        if not nxt:
            break
        e = nxt[0]
        path.append(e)
    assert len(path) >= 5
    assert interior_problems(a, i) == []


def test_assemble_rejects_invalid_mosaic():
    i = inst_(LOOP_A)
    with pytest.raises(ValueError):
        assemble_countermodel(Mosaic([tile({0: {"A"}}, [], "t")], {"t": 0}), i, 1)


# ---------------------------------------------------------------- bounds

def test_bound_values():
    assert bound_values(2, 2, 1, 0, 6)["tile_count_bound_single"] == 18
    assert bound_values(2, 2, 1, 0, 6)["tile_size_bound"] == 6
    assert bound_values(0, 1, 0, 0, 1)["tile_count_bound_rooted"] == 3


def test_report_bounds_uses_instance():
    i = inst_("trans t\nconcepts A B\ntau A\nci A <= (some t B)\n")
    b = report_bounds(i, 6)
    assert b["tile_size_bound"] == 6  # two concept names


# ---------------------------------------------------------------- soundness property

NAMES = ["A", "B"]


def _random_instance(rng):
    cis = []
    for _ in range(rng.randint(0, 3)):
        a, b = rng.choice(NAMES), rng.choice(NAMES)
        kind = rng.random()
        role = rng.choice(["t", "r"])
        if kind < 0.5:
            cis.append(CI(Name(a), Exists(role, Name(b))))
        else:
            cis.append(CI(Name(a), Forall(role, Name(b))))
    nt = normalize(TBox(tuple(cis)))
    tau = frozenset(rng.sample(NAMES, rng.randint(0, 2)))
    qs = [parse_cq("query q(x): t(x,y), B(y)", 1, {"t": True}), parse_cq("query q(x): A(x)"),
          parse_cq("query q(x): r(x,y), A(y)", 1, {"r": False})]
    q1 = tuple(rng.sample(qs, rng.randint(0, 2)))
    return EntailmentInstance(nt, tau, (), q1, frozenset({"t"}), tuple(NAMES), ("r", "t"))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_found_mosaics_are_sound(seed):
    i = _random_instance(random.Random(seed))
    res = find_mosaic(i, 2)
    if res.mosaic is None:
        return
    assert verify_mosaic(res.mosaic, i) == []
    a = assemble_countermodel(res.mosaic, i, i.max_vars() + 1)
    assert interior_problems(a, i) == []
    # a chase that finds a match everywhere would contradict the mosaic
    assert chase_entails(i, 2, 5000) is not True
