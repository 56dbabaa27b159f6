from __future__ import annotations

import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afbench import kernels
from afbench.kb import (
    EmptyStore,
    IngestConfig,
    MalformedLine,
    UnknownRelation,
    ingest_kb,
    intersect_candidates,
    normalize_term,
    query_anti_factual,
)
from afbench.kb.cache import CacheError, cache_key, load_store, read_key, save_store
from afbench.synthetic import make_kb_lines

from .oracles import anti_factual_oracle

RELS = frozenset({"AtLocation", "IsA", "PartOf", "Causes", "UsedFor", "HasPrerequisite"})


def cn(rel, start, end, weight=1.0, lang="en"):
    meta = '{"weight": %s}' % weight
    return f"/a/[/r/{rel}/,/c/{lang}/{start}/,/c/{lang}/{end}/]\t/r/{rel}\t/c/{lang}/{start}\t/c/{lang}/{end}\t{meta}"


TEN_LINES = [
    cn("AtLocation", "instrument", "music_store"),
    cn("AtLocation", "instrument", "music_store", 2.5),  # duplicate, higher weight
    cn("IsA", "whale", "mammal"),
    cn("IsA", "salmon/n", "fish"),
    cn("PartOf", "pedal", "bicycle"),
    cn("Causes", "heavy_rain", "flood"),
    cn("Causes", "heavy_rain", "flood", 0.5),  # duplicate, lower weight
    cn("UsedFor", "shovel", "digging"),
    cn("AtLocation", "poisson", "mer", lang="fr"),  # off-language
    cn("HasPrerequisite", "bake_bread", "flour"),
]


def test_ten_line_fixture_yields_seven():
    store, report = ingest_kb(TEN_LINES, IngestConfig(RELS))
    assert len(store) == 7
    assert report.duplicates == 2 and report.off_language == 1
    assert store.contains("AtLocation", "instrument", "music store")
    assert store.weight("AtLocation", "instrument", "music store") == 2.5
    assert store.weight("Causes", "heavy rain", "flood") == 1.0
    assert store.contains("IsA", "salmon", "fish")


def test_synthetic_format_and_comments():
    lines = ["# comment", "AtLocation\tinstrument\tmusic store", "", "IsA\tWhale\tMammal\t0.7"]
    store, report = ingest_kb(lines, IngestConfig(RELS))
    assert store.contains("IsA", "whale", "mammal")
    assert report.comments == 2


def test_empty_stream_raises():
    with pytest.raises(EmptyStore):
        ingest_kb([], IngestConfig(RELS))


def test_malformed_lines_reported_or_strict():
    lines = ["AtLocation\ta\tb", "AtLocation\tonly-two"]
    _, report = ingest_kb(lines, IngestConfig(RELS))
    assert [ln for ln, _ in report.malformed] == [2]
    with pytest.raises(MalformedLine):
        ingest_kb(lines, IngestConfig(RELS, strict=True))


def test_relation_allowlist_and_min_weight():
    lines = ["AtLocation\ta\tb\t0.2", "Desires\tc\td", "IsA\te\tf\t3"]
    store, report = ingest_kb(lines, IngestConfig(RELS, min_weight=1.0))
    assert len(store) == 1 and report.off_relation == 1 and report.below_weight == 1


@pytest.mark.parametrize("raw,norm", [
    ("/c/en/music_store", "music store"),
    ("/c/en/salmon/n/wn/animal", "salmon"),
    ("  Heavy   Rain ", "heavy rain"),
])
def test_normalize(raw, norm):
    assert normalize_term(raw) == norm


def test_anti_factual_whale_example():
    store, _ = ingest_kb(["IsA\twhale\tmammal", "IsA\tfish\tanimal"], IngestConfig(RELS))
    assert "mammal" in query_anti_factual(store, "IsA", "fish", "start")


def test_anti_factual_full_coverage_is_empty():
    store, _ = ingest_kb(["IsA\tfish\ta", "IsA\tfish\tb", "IsA\tcat\ta"], IngestConfig(RELS))
    assert query_anti_factual(store, "IsA", "fish", "start") == []


def test_unknown_relation():
    store, _ = ingest_kb(["IsA\tfish\ta"], IngestConfig(RELS))
    with pytest.raises(UnknownRelation):
        query_anti_factual(store, "Desires", "fish", "start")


@pytest.fixture(scope="module")
def small():
    rnd = random.Random(5)
    terms = [f"t{i}" for i in range(8)]
    triples = set()
    while len(triples) < 20:
        a, b = rnd.sample(terms, 2)
        triples.add((rnd.choice(["IsA", "PartOf"]), a, b))
    lines = [f"{r}\t{a}\t{b}" for r, a, b in sorted(triples)]
    store, _ = ingest_kb(lines, IngestConfig(RELS))
    return store, sorted(triples), terms + ["unseen"]


def test_anti_factual_matches_brute_force(small):
    store, triples, terms = small
    for rel, seed, slot in itertools.product(("IsA", "PartOf"), terms, ("start", "end")):
        assert query_anti_factual(store, rel, seed, slot) == anti_factual_oracle(triples, rel, seed, slot)


def test_intersection_matches_brute_force(small):
    store, triples, terms = small
    seeds = [("IsA", "t0", "start"), ("PartOf", "t1", "end"), ("IsA", "t2", "end")]
    sets = [query_anti_factual(store, *s) for s in seeds]
    brute = [t for t in terms if all(t in anti_factual_oracle(triples, *s) for s in seeds)]
    assert intersect_candidates(sets) == sorted(brute)
    assert intersect_candidates([["a", "b", "c"]]) == ["a", "b", "c"]
    assert intersect_candidates([["a", "b"], ["b", "c"]]) == ["b"]
    with pytest.raises(ValueError):
        intersect_candidates([])


def test_purity_and_index_consistency(skills):
    store, _ = ingest_kb(make_kb_lines(sorted(RELS), n_terms=80, per_relation=120, seed=2), IngestConfig(RELS))
    rnd = random.Random(0)
    members = store.membership()
    for rel, s, e in rnd.sample(sorted(members), 300):
        assert e in store.by_start(rel, s) and s in store.by_end(rel, e)
    for a in store.assertions():
        assert (a.relation, a.start, a.end) in members
    for rel in sorted(RELS):
        for seed in rnd.sample(list(store.vocab), 10):
            for y in query_anti_factual(store, rel, seed, "start"):
                assert not store.contains(rel, seed, y)
            for x in query_anti_factual(store, rel, seed, "end"):
                assert not store.contains(rel, x, seed)


def test_ingest_idempotent():
    lines = make_kb_lines(sorted(RELS), n_terms=40, per_relation=30, seed=1)
    a, _ = ingest_kb(lines, IngestConfig(RELS))
    b, _ = ingest_kb(lines, IngestConfig(RELS))
    assert a.membership() == b.membership()


def test_cache_round_trip(tmp_path):
    store, _ = ingest_kb(TEN_LINES, IngestConfig(RELS))
    key = cache_key("0" * 64, IngestConfig(RELS).fingerprint())
    p = tmp_path / "s.afkb"
    save_store(store, p, key)
    assert p.read_bytes()[:8] == b"AFKBSTOR"
    assert read_key(p) == key
    loaded = load_store(p, key)
    assert loaded.membership() == store.membership()
    assert loaded.weight("AtLocation", "instrument", "music store") == 2.5
    with pytest.raises(CacheError):
        load_store(p, cache_key("1" * 64, "x"))
    p.write_bytes(b"garbage!" + p.read_bytes()[8:])
    with pytest.raises(CacheError):
        load_store(p)


@pytest.mark.parametrize("use_numba", [False, True])
def test_kernel_backends_agree(use_numba):
    rng = np.random.default_rng(0)
    pos = [np.unique(rng.integers(0, 200, 80)) for _ in range(3)]
    neg = [np.unique(rng.integers(0, 200, 30)) for _ in range(2)]
    expect = sorted(set(pos[0]).intersection(*map(set, pos[1:])) - set().union(*map(set, neg)))
    assert kernels.fused_candidates(pos, neg, use_numba=use_numba).tolist() == expect
    keys = np.sort(rng.integers(0, 20, 100))
    w = rng.random(100)
    k, m = kernels.dedup_max(keys, w, use_numba=use_numba)
    assert k.tolist() == sorted(set(keys.tolist()))
    assert np.allclose(m, [w[keys == x].max() for x in k])
    hay = np.unique(rng.integers(0, 100, 40))
    needles = rng.integers(0, 100, 50)
    assert kernels.contains_sorted(hay, needles, use_numba=use_numba).tolist() == [int(x) in set(hay.tolist()) for x in needles]


sorted_ids = st.lists(st.integers(0, 60), max_size=40).map(lambda xs: np.array(sorted(set(xs)), dtype=np.int64))


@given(st.lists(sorted_ids, min_size=1, max_size=5), st.lists(sorted_ids, max_size=4))
@settings(max_examples=300, deadline=None)
def test_fused_candidates_property(pos, neg):
    expect = sorted(set(pos[0].tolist()).intersection(*[set(p.tolist()) for p in pos[1:]])
                    - set().union(*[set(n.tolist()) for n in neg]))
    for use_numba in (False, True):
        assert kernels.fused_candidates(pos, neg, use_numba=use_numba).tolist() == expect
