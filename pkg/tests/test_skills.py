from __future__ import annotations

import itertools

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from afbench.skills import (
    ConfigError,
    PermCase,
    RuleTable,
    StructuralError,
    VirtualTemplate,
    check_closure,
    classify,
    default_tables,
    load_reduction_matrix,
    load_skill_table,
    reduce_pair,
    reduce_path,
)

V = VirtualTemplate


def skill_doc(*entries):
    return {"version": 1, "skills": list(entries)}


def entry(name, rel, pos="{X} r {Y}", neg="{X} not r {Y}", start="X"):
    return {"name": name, "kb_relation": rel, "surface_positive": pos, "surface_negative": neg, "start_slot": start}


def test_default_table(skills):
    assert skills.names == ("spatial", "causal", "part_of", "type_of", "used_for", "requires")
    assert skills["spatial"].kb_relation == "AtLocation"
    assert skills["requires"].kb_relation == "HasPrerequisite"
    assert skills["spatial"].template == "{X} appears near {Y}"


def test_surface_fill_respects_slot_convention(skills):
    assert skills["part_of"].fill("hydrogen", "water molecule") == "[hydrogen] is a part of [water molecule]"
    assert skills["spatial"].fill("watch", "the planet", positive=False) == "[watch] does not appear near [the planet]"
    assert skills["used_for"].fill("shovel", "digging") == "[shovel] is used for [digging]"


def test_one_skill_table():
    table = load_skill_table(skill_doc(entry("solo", "AtLocation")))
    assert len(table) == 1


@pytest.mark.parametrize("bad", [
    skill_doc(entry("a", "AtLocation", pos="{X} near")),
    skill_doc(entry("a", "AtLocation"), entry("a", "IsA")),
    skill_doc(entry("a", "at location")),
    skill_doc(entry("a", "AtLocation"), entry("b", "AtLocation")),
    skill_doc({"name": "a", "kb_relation": "IsA"}),
    {"version": 1, "skills": []},
])
def test_skill_table_errors(bad):
    with pytest.raises(ConfigError):
        load_skill_table(bad)


def test_skill_table_from_yaml_file(tmp_path):
    p = tmp_path / "skills.yaml"
    p.write_text(yaml.safe_dump(skill_doc(entry("solo", "IsA"))))
    assert load_skill_table(p).names == ("solo",)


def test_matrix_lookups(rules):
    assert rules.lookup("part_of", "spatial", PermCase.LEFT).result == "spatial"
    for case in PermCase:
        r = rules.lookup("spatial", "causal", case)
        assert r is None or r.result is None
    assert rules.lookup("requires", "requires", PermCase.GT) is None


def test_matrix_unknown_skill(skills):
    with pytest.raises(ConfigError):
        load_reduction_matrix({"rules": [["spatial", "alien", "GT", "spatial"]]}, skills)


def test_closure(skills, rules):
    assert check_closure(rules, skills) == []
    doc = {"mirror": False, "rules": [["spatial", "causal", "GT", "alien_skill"]]}
    with pytest.raises(ConfigError):
        load_reduction_matrix(doc, skills, strict=True)
    loose = load_reduction_matrix(doc, skills, strict=False)
    (violation,) = check_closure(loose, skills)
    assert "alien_skill" in violation
    assert check_closure(RuleTable(), skills) == []


@pytest.mark.parametrize("a,b,case", [
    (V("s", "x", "y"), V("s", "z", "y"), PermCase.GT),
    (V("s", "x", "y"), V("s", "y", "z"), PermCase.RIGHT),
    (V("s", "y", "x"), V("s", "z", "y"), PermCase.LEFT),
    (V("s", "y", "x"), V("s", "y", "z"), PermCase.LT),
])
def test_case_dispatch(a, b, case):
    got, shared, x, z = classify(a, b)
    assert (got, shared, x, z) == (case, "y", "x", "z")


def test_structural_errors(rules):
    with pytest.raises(StructuralError):
        reduce_pair(V("spatial", "a", "b"), V("spatial", "c", "d"), rules)
    with pytest.raises(StructuralError):
        reduce_pair(V("spatial", "a", "b"), V("spatial", "b", "a"), rules)
    with pytest.raises(StructuralError):
        V("spatial", "a", "a")
    with pytest.raises(StructuralError):
        reduce_path([], rules)


def test_hydrogen_ocean(rules):
    # hydrogen is a part of a water molecule, which appears near the ocean
    red = reduce_pair(V("part_of", "hydrogen", "water molecule"), V("spatial", "water molecule", "ocean"), rules)
    assert red == V("spatial", "hydrogen", "ocean")


def test_spatial_causal_irreducible(rules):
    assert reduce_pair(V("spatial", "a", "b"), V("causal", "b", "c"), rules) is None


def test_worked_example_path(rules):
    # anchor: V1 appears near the planet; then: answer is a part of V1
    anchor = V("spatial", "v1", "the planet")
    red = reduce_path([anchor, V("part_of", "answer", "v1")], rules)
    assert red == V("spatial", "answer", "the planet")
    assert reduce_path([anchor], rules) == anchor


def test_hand_folded_three_step_path(skills):
    rl = load_reduction_matrix({"mirror": False, "rules": [
        ["causal", "used_for", "RIGHT", "used_for"],
        ["used_for", "type_of", "GT", "type_of"],
    ]}, skills)
    path = [V("causal", "a", "b"), V("used_for", "b", "c"), V("type_of", "d", "c")]
    # causal(a,b) & used_for(b,c) -> used_for(a,c); used_for(a,c) & type_of(d,c) -> type_of(a,d)
    assert reduce_path(path, rl) == V("type_of", "a", "d")
    # the fold is anchored: starting elsewhere finds no rule in this unmirrored table
    assert reduce_path(list(reversed(path)), rl) is None


def test_mirror_symmetry(skills, rules):
    shapes = [(("x", "y"), ("z", "y")), (("x", "y"), ("y", "z")), (("y", "x"), ("z", "y")), (("y", "x"), ("y", "z"))]
    for s1, s2 in itertools.product(skills.names, repeat=2):
        for va, vb in shapes:
            a, b = V(s1, *va), V(s2, *vb)
            assert reduce_pair(a, b, rules) == reduce_pair(b, a, rules)


@given(st.lists(st.tuples(st.sampled_from(["spatial", "causal", "part_of", "type_of", "used_for", "requires"]),
                          st.booleans()), min_size=1, max_size=6))
@settings(max_examples=200, deadline=None)
def test_closed_table_folds_stay_in_table(steps):
    sk, rl = default_tables()
    templates = []
    for i, (name, forward) in enumerate(steps):
        templates.append(V(name, i, i + 1) if forward else V(name, i + 1, i))
    acc = templates[0]
    for k, t in enumerate(templates[1:], start=2):
        acc = reduce_pair(acc, t, rl)
        if acc is None:
            break
        assert acc.skill in sk
        assert set(acc.variables) == {0, k}
