"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations

import itertools


def prufer_trees(n_vertices: int):
    """Every labelled tree on ``n_vertices`` vertices as a list of undirected edges."""
    if n_vertices == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n_vertices), repeat=n_vertices - 2):
        degree = [1] * n_vertices
        for v in seq:
            degree[v] += 1
        edges = []
        for v in seq:
            leaf = min(u for u in range(n_vertices) if degree[u] == 1)
            edges.append((leaf, v))
            degree[leaf] -= 1
            degree[v] -= 1
        u, w = [x for x in range(n_vertices) if degree[x] == 1]
        edges.append((u, w))
        yield edges


def oracle_form(labelled_edges, n_vertices: int) -> tuple:
    """Canonical form of an anchored tree whose anchor is (skill, 0, 1).

    ``labelled_edges`` lists (skill, start, end); the anchor endpoints stay
    fixed and the smallest edge multiset over all relabellings of the other
    vertices is the form.
    """
    rest = list(range(2, n_vertices))
    best = None
    for perm in itertools.permutations(rest):
        m = {0: 0, 1: 1, **dict(zip(rest, perm))}
        form = tuple(sorted((s, m[a], m[b]) for s, a, b in labelled_edges))
        if best is None or form < best:
            best = form
    return best


def brute_force_trees(skill_names, size: int, anchor_skill: str) -> set:
    """All anchored trees of ``size`` edges by exhaustive labelling of every labelled tree."""
    n = size + 1
    out = set()
    labels = [(s, o) for s in skill_names for o in (0, 1)]
    for edges in prufer_trees(n):
        norm = [tuple(sorted(e)) for e in edges]
        if (0, 1) not in norm:
            continue
        others = [e for e in norm if e != (0, 1)]
        for choice in itertools.product(labels, repeat=len(others)):
            lab = [(anchor_skill, 0, 1)]
            for (a, b), (s, o) in zip(others, choice):
                lab.append((s, a, b) if o == 0 else (s, b, a))
            out.add(oracle_form(lab, n))
    return out


def module_tree_form(tree) -> tuple:
    """Map a library tree onto the oracle's vertex convention."""
    a = tree.anchor
    rename = {a.start: 0, a.end: 1}
    for v in tree.variables:
        if v not in rename:
            rename[v] = len(rename)
    lab = [(e.skill, rename[e.start], rename[e.end]) for e in tree.edges]
    return oracle_form(lab, tree.T + 1)


def anti_factual_oracle(assertions, relation, seed, seed_slot):
    """Literal reading of the anti-factual rule over raw (relation, start, end) triples.

    For ``seed_slot="start"``: every y with some relation(x, y), x != seed,
    such that relation(seed, y) is absent and y != seed. ``"end"`` mirrors it.
    """
    rows = {(s, e) for r, s, e in assertions if r == relation}
    out = set()
    for s, e in rows:
        if seed_slot == "start":
            x, y, asserted = s, e, (seed, e) in rows
        else:
            x, y, asserted = e, s, (s, seed) in rows
        if x != seed and not asserted and y != seed:
            out.add(y)
    return sorted(out)
