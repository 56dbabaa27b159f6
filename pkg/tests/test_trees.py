from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afbench.rng import Stream
from afbench.skills import RuleTable, default_tables, reduce_path
from afbench.trees import (
    Edge,
    ReasoningTree,
    ShapeSampler,
    TreeError,
    canonical_key,
    count_trees,
    enumerate_trees,
    find_reasoning_paths,
    iter_trees,
    path_templates,
    subsample_by_shape,
    tree_from_record,
    tree_record,
)

from .oracles import brute_force_trees, module_tree_form


def sub_tables(skills, rules, names):
    sub = skills.subset(names)
    kept = [r for r in rules.rules() if r.row_skill in sub and r.col_skill in sub and (r.result is None or r.result in sub)]
    return sub, RuleTable(kept)


FIXTURES = {
    "full": None,
    "spatial+part_of": ("spatial", "part_of"),
    "causal+used_for+type_of": ("causal", "used_for", "type_of"),
    "requires-only": ("requires",),
}


@pytest.mark.parametrize("fixture", list(FIXTURES))
@pytest.mark.parametrize("size", [1, 2, 3])
def test_enumeration_matches_brute_force(skills, rules, fixture, size):
    names = FIXTURES[fixture]
    sk, rl = (skills, rules) if names is None else sub_tables(skills, rules, names)
    for anchor in sk.names:
        got = [module_tree_form(t) for t in enumerate_trees(sk, rl, size, anchor)]
        assert len(got) == len(set(got)), "enumeration produced isomorphic duplicates"
        assert set(got) == brute_force_trees(sk.names, size, anchor)


def test_counts_full_table(skills):
    assert [count_trees(skills, T) for T in range(1, 6)] == [1, 24, 588, 14840, 387582]


def test_counts_match_enumeration(skills, rules):
    for T in (1, 2, 3):
        assert len(enumerate_trees(skills, rules, T, "spatial")) == count_trees(skills, T)


def test_size_errors(skills, rules):
    with pytest.raises(TreeError):
        enumerate_trees(skills, rules, 0, "spatial")
    with pytest.raises(TreeError):
        enumerate_trees(skills, rules, 6, "spatial")
    with pytest.raises(TreeError):
        enumerate_trees(skills, rules, 2, "nope")


def test_single_edge_tree_has_both_slot_paths(skills, rules):
    (tree,) = enumerate_trees(skills, rules, 1, "causal")
    paths = find_reasoning_paths(tree, 0, rules)
    assert sorted(p.pairing_slot for p in paths) == ["end", "start"]
    assert all(p.shape == (1, 0) for p in paths)


def test_paths_fold_back_to_anchor(skills, rules):
    for T in (2, 3):
        for tree in iter_trees(skills, T, "spatial"):
            for p in find_reasoning_paths(tree, 0, rules):
                assert p.n + p.d == tree.T
                assert p.edges[0] == 0
                red = reduce_path(path_templates(tree, p), rules)
                assert red is not None and red.skill == "spatial"
                assert (red.start_var == p.pairing_var) == (p.pairing_slot == "start")
                assert p.answer_var in (red.start_var, red.end_var) and p.answer_var != p.pairing_var


def brute_force_pairs(skills, rules, anchor, slot, max_T):
    out = Counter()
    for T in range(1, max_T + 1):
        for tree in iter_trees(skills, T, anchor):
            for p in find_reasoning_paths(tree, 0, rules):
                if p.pairing_slot == slot:
                    out[(tree.canonical, p.edges, p.pairing_var)] += 1
    return out


@pytest.mark.parametrize("anchor,slot", [("spatial", "end"), ("type_of", "start"), ("used_for", "end")])
def test_sampler_is_bijection_with_enumerated_pairs(skills, rules, anchor, slot):
    max_T = 3
    expected = brute_force_pairs(skills, rules, anchor, slot, max_T)
    sampler = ShapeSampler(skills, rules, anchor, slot)
    decoded = Counter()
    for (n, d), total in sampler.shapes(range(1, max_T + 1)).items():
        for r in range(total):
            tree, path = sampler.decode(n, d, r)
            assert path.shape == (n, d) and tree.T == n + d
            decoded[(tree.canonical, path.edges, path.pairing_var)] += 1
    assert decoded == expected
    assert max(decoded.values()) == 1


@pytest.mark.slow
def test_sampler_bijection_size_four(skills, rules):
    expected = brute_force_pairs(skills, rules, "part_of", "start", 4)
    sampler = ShapeSampler(skills, rules, "part_of", "start")
    total = sum(sampler.shapes(range(1, 5)).values())
    assert total == sum(expected.values())


def test_sampler_shapes_cover_every_split(skills, rules):
    sampler = ShapeSampler(skills, rules, "spatial", "end")
    shapes = sampler.shapes(range(1, 6))
    assert set(shapes) == {(n, T - n) for T in range(1, 6) for n in range(1, T + 1)}
    assert shapes[(1, 4)] == count_trees(skills, 5)


def test_sampler_deterministic(skills, rules):
    sampler = ShapeSampler(skills, rules, "causal", "start")
    a = sampler.sample(3, 2, Stream(1, "x"))
    b = sampler.sample(3, 2, Stream(1, "x"))
    assert a[0].canonical == b[0].canonical and a[1] == b[1]


def test_subsample_one_per_shape(skills, rules):
    pairs = [(t, p) for T in (1, 2, 3) for t in iter_trees(skills, T, "type_of")
             for p in find_reasoning_paths(t, 0, rules)]
    chosen = subsample_by_shape(pairs, np.random.default_rng(0))
    shapes = [p.shape for _, p in chosen]
    assert len(shapes) == len(set(shapes))
    assert set(shapes) == {p.shape for _, p in pairs}


def test_tree_record_round_trip(skills, rules):
    for tree in iter_trees(skills, 3, "requires"):
        paths = find_reasoning_paths(tree, 0, rules)
        t2, p2 = tree_from_record(tree_record(tree, paths))
        assert t2 == tree and p2 == paths
        break


def test_validate_rejects_cycles():
    with pytest.raises(TreeError):
        ReasoningTree((Edge("spatial", 0, 1), Edge("causal", 1, 2), Edge("causal", 2, 0))).validate()
    with pytest.raises(TreeError):
        ReasoningTree((Edge("spatial", 0, 1), Edge("causal", 2, 3))).validate()


@st.composite
def random_tree(draw):
    size = draw(st.integers(1, 6))
    names = ("spatial", "causal", "part_of", "type_of", "used_for", "requires")
    edges = [Edge(draw(st.sampled_from(names)), 0, 1)]
    for v in range(2, size + 1):
        parent = draw(st.integers(0, v - 1))
        s = draw(st.sampled_from(names))
        edges.append(Edge(s, parent, v) if draw(st.booleans()) else Edge(s, v, parent))
    return edges


@given(random_tree(), st.randoms(use_true_random=False))
@settings(max_examples=200, deadline=None)
def test_canonical_key_invariant_under_relabelling(edges, rnd):
    key = canonical_key(edges, 0)
    n = len(edges) + 1
    perm = list(range(n))
    rnd.shuffle(perm)
    order = list(range(len(edges)))
    rnd.shuffle(order)
    moved = [Edge(edges[i].skill, perm[edges[i].start] + 10, perm[edges[i].end] + 10) for i in order]
    assert canonical_key(moved, order.index(0)) == key


@given(random_tree())
@settings(max_examples=100, deadline=None)
def test_canonical_key_agrees_with_oracle_isomorphism(edges):
    flipped = [edges[0]] + [Edge(e.skill, e.end, e.start) for e in edges[1:]]
    same = canonical_key(edges, 0) == canonical_key(flipped, 0)
    # a near-miss pair: same shape and skills, every non-anchor edge reversed
    assert same == (module_form(edges) == module_form(flipped))


def module_form(edges):
    return module_tree_form(ReasoningTree(tuple(edges), 0))


@given(random_tree())
@settings(max_examples=100, deadline=None)
def test_paths_satisfy_shape_identity(edges):
    _, rl = default_tables()
    tree = ReasoningTree(tuple(edges), 0)
    tree.validate()
    paths = find_reasoning_paths(tree, 0, rl)
    assert paths, "the anchor edge alone is always a path"
    for p in paths:
        assert p.n + p.d == tree.T and 1 <= p.n <= tree.T

