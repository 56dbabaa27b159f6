"""Reasoning-tree enumeration, anchored reasoning paths, and shape subsampling.

Trees are identified up to isomorphism that preserves the anchor edge, edge
skills, and edge orientations; variable ids carry no meaning. Enumeration is
constructive: an anchored tree is the anchor edge plus one rooted branch
hanging from each endpoint, and rooted branches are generated as multisets of
(edge label, sub-branch) units in a fixed order, so no two generated trees are
isomorphic and no post-hoc deduplication is needed.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .skills import RuleTable, SkillTable, VirtualTemplate, reduce_pair, reduce_path

DEFAULT_MAX_SIZE = 5
SCHEMA_VERSION = 1


class TreeError(ValueError):
    pass


class Edge(NamedTuple):
    skill: str
    start: int
    end: int

    def other(self, var: int) -> int:
        return self.end if var == self.start else self.start

    def template(self) -> VirtualTemplate:
        return VirtualTemplate(self.skill, self.start, self.end)


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------

def _wrap(tokens) -> str:
    return "(" + ",".join(sorted(tokens)) + ")"


def canonical_key(edges: Sequence[Edge], anchor: int = 0) -> str:
    """Anchor-rooted AHU encoding with skill and orientation labels.

    Child tokens read ``skill>`` when the parent variable is the edge's start
    and ``skill<`` when it is the end.
    """
    adj: dict[int, list[tuple[int, Edge]]] = defaultdict(list)
    for i, e in enumerate(edges):
        adj[e.start].append((i, e))
        adj[e.end].append((i, e))

    def enc(v: int, via: int) -> str:
        toks = []
        for i, e in adj[v]:
            if i == via:
                continue
            arrow = ">" if e.start == v else "<"
            toks.append(e.skill + arrow + enc(e.other(v), i))
        return _wrap(toks)

    a = edges[anchor]
    return a.skill + enc(a.start, anchor) + enc(a.end, anchor)


def tree_id_for(key: str) -> str:
    return hashlib.sha1(key.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReasoningTree:
    edges: tuple[Edge, ...]
    anchor_edge: int = 0
    _key: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        edges = tuple(Edge(*e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges:
            raise TreeError("a reasoning tree needs at least one edge")
        if not 0 <= self.anchor_edge < len(edges):
            raise TreeError(f"anchor edge {self.anchor_edge} out of range")

    @property
    def T(self) -> int:
        return len(self.edges)

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(sorted({v for e in self.edges for v in (e.start, e.end)}))

    @property
    def anchor(self) -> Edge:
        return self.edges[self.anchor_edge]

    @property
    def anchor_skill(self) -> str:
        return self.anchor.skill

    @property
    def canonical(self) -> str:
        if self._key is None:
            object.__setattr__(self, "_key", canonical_key(self.edges, self.anchor_edge))
        return self._key

    @property
    def tree_id(self) -> str:
        return tree_id_for(self.canonical)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = defaultdict(list)
        for i, e in enumerate(self.edges):
            adj[e.start].append(i)
            adj[e.end].append(i)
        return adj

    def validate(self) -> None:
        """Raise :class:`TreeError` unless this is a connected acyclic graph."""
        vs = self.variables
        if len(self.edges) != len(vs) - 1:
            raise TreeError(f"{len(self.edges)} edges over {len(vs)} variables is not a tree")
        seen = set()
        for e in self.edges:
            if e.start == e.end:
                raise TreeError(f"self-loop {e}")
            if e in seen:
                raise TreeError(f"duplicate edge {e}")
            seen.add(e)
        adj = self.adjacency()
        stack, reached = [vs[0]], {vs[0]}
        while stack:
            v = stack.pop()
            for i in adj[v]:
                w = self.edges[i].other(v)
                if w not in reached:
                    reached.add(w)
                    stack.append(w)
        if len(reached) != len(vs):
            raise TreeError("tree is not connected")


@dataclass(frozen=True)
class ReasoningPath:
    tree_id: str
    edges: tuple[int, ...]
    pairing_var: int
    answer_var: int
    T: int
    pairing_slot: str

    @property
    def n(self) -> int:
        return len(self.edges)

    @property
    def d(self) -> int:
        return self.T - len(self.edges)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.d)


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

def _walks(tree: ReasoningTree, anchor: int, pairing_var: int, rules: RuleTable):
    """Yield (edge sequence, frontier variable, folded template) for every outward walk."""
    adj = tree.adjacency()
    a = tree.edges[anchor]
    start_acc = a.template()
    frontier = a.other(pairing_var)
    out = [((anchor,), frontier, start_acc)]

    def grow(seq, frontier, acc, used_vars):
        for i in adj[frontier]:
            if i in seq:
                continue
            e = tree.edges[i]
            nxt = e.other(frontier)
            if nxt in used_vars:
                continue
            red = reduce_pair(acc, e.template(), rules)
            if red is None:
                continue
            new_seq = seq + (i,)
            out.append((new_seq, nxt, red))
            grow(new_seq, nxt, red, used_vars | {nxt})

    grow((anchor,), frontier, start_acc, {pairing_var, frontier})
    return out


def find_reasoning_paths(tree: ReasoningTree, anchor: int | None = None, rules: RuleTable | None = None) -> list[ReasoningPath]:
    """All anchored paths whose fold reproduces the anchor template.

    A walk starts at the anchor edge with the pairing variable on one end and
    extends through the far endpoint. It is a reasoning path when the left
    fold of its templates yields the anchor's skill with the pairing variable
    in the same slot it occupies on the anchor edge, so grounding the far end
    with an answer term restates the pairing template about that term.
    """
    if rules is None:
        raise TypeError("rules are required")
    anchor = tree.anchor_edge if anchor is None else anchor
    if not 0 <= anchor < tree.T:
        raise TreeError(f"anchor edge {anchor} not in tree")
    a = tree.edges[anchor]
    tid = tree.tree_id
    paths = []
    for pairing_var, slot in ((a.start, "start"), (a.end, "end")):
        for seq, frontier, acc in _walks(tree, anchor, pairing_var, rules):
            if frontier == pairing_var or acc.skill != a.skill:
                continue
            if (acc.start_var == pairing_var) != (slot == "start"):
                continue
            paths.append(ReasoningPath(tid, seq, pairing_var, frontier, tree.T, slot))
    return paths


def path_templates(tree: ReasoningTree, path: ReasoningPath) -> list[VirtualTemplate]:
    return [tree.edges[i].template() for i in path.edges]


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def edge_labels(skills: SkillTable) -> tuple[tuple[str, str], ...]:
    """Every (skill, arrow) label; '>' means the parent variable is the edge's start."""
    return tuple((s, arrow) for s in skills.names for arrow in (">", "<"))


class BranchCatalog:
    """Rooted branches by edge count.

    A unit is an edge label plus the branch hanging below the edge; a branch
    is a multiset of units stored as a non-decreasing tuple of unit ids. Unit
    ids are size-major, so the units of size <= s form a prefix of the id
    range and multisets can be generated without scanning oversized units.
    """

    def __init__(self, labels):
        self.labels = tuple(labels)
        self.branches: list[tuple[int, ...]] = [()]
        self.by_size: list[list[int]] = [[0]]
        self.units: list[tuple[int, int]] = []
        self.unit_size: list[int] = []
        self._units_upto: list[int] = [0]

    def ensure(self, k: int) -> None:
        while len(self.by_size) <= k:
            size = len(self.by_size)
            for child in self.by_size[size - 1]:
                for li in range(len(self.labels)):
                    self.units.append((li, child))
                    self.unit_size.append(size)
            self._units_upto.append(len(self.units))
            ids = []
            for combo in self._multisets(size):
                ids.append(len(self.branches))
                self.branches.append(combo)
            self.by_size.append(ids)

    def _multisets(self, total: int) -> Iterator[tuple[int, ...]]:
        sizes = self.unit_size
        upto = self._units_upto

        def rec(start: int, remaining: int, acc: list):
            if remaining == 0:
                yield tuple(acc)
                return
            for u in range(start, upto[remaining]):
                acc.append(u)
                yield from rec(u, remaining - sizes[u], acc)
                acc.pop()

        yield from rec(0, total, [])

    def count(self, k: int) -> int:
        self.ensure(k)
        return len(self.by_size[k])


@lru_cache(maxsize=8)
def _catalog(labels) -> BranchCatalog:
    return BranchCatalog(labels)


def catalog_for(skills: SkillTable) -> BranchCatalog:
    return _catalog(edge_labels(skills))


def _build(anchor_skill: str, left: int, right: int, cat: BranchCatalog):
    """Tree for (left branch, right branch) plus the (var, unit position) -> (edge, child var) map."""
    edges = [Edge(anchor_skill, 0, 1)]
    where: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 2

    def attach(v: int, branch_id: int):
        nonlocal counter
        for pos, uid in enumerate(cat.branches[branch_id]):
            li, child = cat.units[uid]
            skill, arrow = cat.labels[li]
            w = counter
            counter += 1
            where[(v, pos)] = (len(edges), w)
            edges.append(Edge(skill, v, w) if arrow == ">" else Edge(skill, w, v))
            attach(w, child)

    attach(0, left)
    attach(1, right)
    return ReasoningTree(tuple(edges), 0), where


def iter_trees(skills: SkillTable, size: int, anchor_skill: str) -> Iterator[ReasoningTree]:
    """Lazily yield every anchored tree with ``size`` edges (no path filter)."""
    cat = catalog_for(skills)
    cat.ensure(size - 1)
    for k_left in range(size):
        for left in cat.by_size[k_left]:
            for right in cat.by_size[size - 1 - k_left]:
                yield _build(anchor_skill, left, right, cat)[0]


def enumerate_trees(
    skills: SkillTable,
    rules: RuleTable,
    size: int,
    anchor_skill: str,
    *,
    max_size: int = DEFAULT_MAX_SIZE,
) -> list[ReasoningTree]:
    """All anchor-preserving isomorphism classes of trees with ``size`` edges.

    Every returned tree has its anchor (edge 0) labelled ``anchor_skill`` and
    admits at least one reasoning path. Output order is deterministic.
    """
    _check_size(size, max_size)
    if anchor_skill not in skills:
        raise TreeError(f"anchor skill {anchor_skill!r} not in the skill table")
    return [t for t in iter_trees(skills, size, anchor_skill) if has_reasoning_path(t, rules)]


def _check_size(size: int, max_size: int) -> None:
    if size < 1:
        raise TreeError(f"tree size must be >= 1, got {size}")
    if size > max_size:
        raise TreeError(f"tree size {size} exceeds the configured maximum {max_size}")


def has_reasoning_path(tree: ReasoningTree, rules: RuleTable) -> bool:
    # the anchor edge alone is a one-hop path, so this never fails on a valid tree
    return reduce_path([tree.anchor.template()], rules) is not None


def count_trees(skills: SkillTable, size: int) -> int:
    """Number of anchored trees of ``size`` edges for any one anchor skill."""
    cat = catalog_for(skills)
    cat.ensure(size - 1)
    return sum(cat.count(k) * cat.count(size - 1 - k) for k in range(size))


class ShapeSampler:
    """Exact uniform sampling of (tree, path) pairs of a given (n, d) shape.

    With the pairing variable on one end of the anchor edge, a path can only
    extend into the branch hanging from the other end. So a (tree, path) pair
    is a free branch on the pairing side, a branch on the far side, and a walk
    of n - 1 edges down that branch whose fold keeps restating the anchor.
    Walk counts are memoized per (unit, fold state), which makes the number of
    pairs per shape and the decoding of the r-th pair cheap without ever
    listing the trees.
    """

    def __init__(self, skills: SkillTable, rules: RuleTable, anchor_skill: str, pairing_slot: str,
                 max_size: int = DEFAULT_MAX_SIZE):
        if anchor_skill not in skills:
            raise TreeError(f"anchor skill {anchor_skill!r} not in the skill table")
        if pairing_slot not in ("start", "end"):
            raise TreeError(f"pairing slot must be start or end, got {pairing_slot!r}")
        self.skills, self.rules = skills, rules
        self.anchor_skill, self.pairing_slot = anchor_skill, pairing_slot
        self.max_size = max_size
        self.cat = catalog_for(skills)
        self.cat.ensure(max_size - 1)
        self.target = (anchor_skill, pairing_slot == "start")
        self._trans: dict[tuple, tuple | None] = {}
        self._unit_memo: dict[tuple[int, tuple], tuple[int, ...]] = {}
        self._branch_memo: dict[tuple[int, tuple], tuple[int, ...]] = {}
        self._arrays: dict[tuple[int, int], np.ndarray] = {}

    # fold state: (skill of the folded template, pairing variable is its start)
    def _step(self, state, label_index):
        key = (state, label_index)
        if key not in self._trans:
            skill, p_start = state
            acc = VirtualTemplate(skill, "P", "f") if p_start else VirtualTemplate(skill, "f", "P")
            e_skill, arrow = self.cat.labels[label_index]
            edge = VirtualTemplate(e_skill, "f", "w") if arrow == ">" else VirtualTemplate(e_skill, "w", "f")
            red = reduce_pair(acc, edge, self.rules)
            self._trans[key] = None if red is None else (red.skill, red.start_var == "P")
        return self._trans[key]

    def _unit_counts(self, uid: int, state) -> tuple[int, ...]:
        """Valid walks starting with unit ``uid``, indexed by walk length - 1."""
        key = (uid, state)
        got = self._unit_memo.get(key)
        if got is None:
            li, child = self.cat.units[uid]
            nxt = self._step(state, li)
            if nxt is None:
                got = ()
            else:
                got = (int(nxt == self.target),) + self._branch_counts(child, nxt)
            self._unit_memo[key] = got
        return got

    def _branch_counts(self, bid: int, state) -> tuple[int, ...]:
        """Valid walks of length >= 1 into branch ``bid``, indexed by length - 1."""
        key = (bid, state)
        got = self._branch_memo.get(key)
        if got is None:
            acc: list[int] = []
            for uid in self.cat.branches[bid]:
                for i, c in enumerate(self._unit_counts(uid, state)):
                    if i == len(acc):
                        acc.append(0)
                    acc[i] += c
            got = tuple(acc)
            self._branch_memo[key] = got
        return got

    def _walk_array(self, k: int, length: int) -> np.ndarray:
        """Per-branch walk counts for branches of size k (length 0 = the anchor alone)."""
        key = (k, length)
        arr = self._arrays.get(key)
        if arr is None:
            ids = self.cat.by_size[k]
            if length == 0:
                arr = np.ones(len(ids), dtype=np.int64)
            else:
                arr = np.fromiter(
                    (_at(self._branch_counts(b, self.target), length - 1) for b in ids),
                    dtype=np.int64, count=len(ids),
                )
            self._arrays[key] = arr
        return arr

    def _blocks(self, n: int, d: int):
        T = n + d
        for k_far in range(n - 1, T):
            k_free = T - 1 - k_far
            walks = int(self._walk_array(k_far, n - 1).sum())
            yield k_far, k_free, walks, self.cat.count(k_free) * walks

    def count(self, n: int, d: int) -> int:
        """Number of (tree, path) pairs with n hops and d distractors."""
        if n < 1 or d < 0 or n + d > self.max_size:
            return 0
        return sum(block for *_, block in self._blocks(n, d))

    def shapes(self, sizes: Iterable[int]) -> dict[tuple[int, int], int]:
        out = {}
        for T in sorted(set(sizes)):
            _check_size(T, self.max_size)
            for n in range(1, T + 1):
                c = self.count(n, T - n)
                if c:
                    out[(n, T - n)] = c
        return out

    def decode(self, n: int, d: int, r: int) -> tuple[ReasoningTree, ReasoningPath]:
        """The r-th (tree, path) pair of shape (n, d) in a fixed enumeration order."""
        total = self.count(n, d)
        if not 0 <= r < total:
            raise IndexError(f"index {r} out of range for shape ({n}, {d}) with {total} pairs")
        for k_far, k_free, walks, block in self._blocks(n, d):
            if r >= block:
                r -= block
                continue
            free_idx, w = divmod(r, walks)
            arr = self._walk_array(k_far, n - 1)
            cum = np.cumsum(arr)
            bi = int(np.searchsorted(cum, w, side="right"))
            w -= int(cum[bi - 1]) if bi else 0
            far = self.cat.by_size[k_far][bi]
            free = self.cat.by_size[k_free][free_idx]
            positions = self._decode_walk(far, self.target, n - 1, w)
            break
        if self.pairing_slot == "start":
            left, right, p_var, root = free, far, 0, 1
        else:
            left, right, p_var, root = far, free, 1, 0
        tree, where = _build(self.anchor_skill, left, right, self.cat)
        edges, v = [0], root
        for pos in positions:
            e, v = where[(v, pos)]
            edges.append(e)
        path = ReasoningPath(tree.tree_id, tuple(edges), p_var, v, tree.T, self.pairing_slot)
        return tree, path

    def _decode_walk(self, bid: int, state, length: int, w: int) -> list[int]:
        if length == 0:
            return []
        for pos, uid in enumerate(self.cat.branches[bid]):
            counts = self._unit_counts(uid, state)
            c = _at(counts, length - 1)
            if w >= c:
                w -= c
                continue
            if length == 1:
                return [pos]
            li, child = self.cat.units[uid]
            return [pos] + self._decode_walk(child, self._step(state, li), length - 1, w)
        raise AssertionError("walk index out of range")

    def sample(self, n: int, d: int, rng) -> tuple[ReasoningTree, ReasoningPath]:
        total = self.count(n, d)
        if total == 0:
            raise TreeError(f"no (tree, path) pair has shape ({n}, {d})")
        return self.decode(n, d, _draw(rng, total))


def _at(counts: tuple[int, ...], i: int) -> int:
    return counts[i] if i < len(counts) else 0


def _draw(rng, high: int) -> int:
    return int(rng.integers(high))


# ---------------------------------------------------------------------------
# subsampling
# ---------------------------------------------------------------------------

def group_by_shape(pairs: Sequence[tuple[ReasoningTree, ReasoningPath]]) -> dict[tuple[int, int], list]:
    groups: dict[tuple[int, int], list] = defaultdict(list)
    for tree, path in pairs:
        groups[path.shape].append((tree, path))
    return dict(sorted(groups.items()))


def subsample_by_shape(
    pairs: Sequence[tuple[ReasoningTree, ReasoningPath]],
    rng: np.random.Generator,
) -> list[tuple[ReasoningTree, ReasoningPath]]:
    """Pick one (tree, path) uniformly per (n, d) shape, shapes in ascending order."""
    chosen = []
    for _, group in group_by_shape(pairs).items():
        chosen.append(group[int(rng.integers(len(group)))])
    return chosen


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def tree_record(tree: ReasoningTree, paths: Sequence[ReasoningPath]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tree_id": tree.tree_id,
        "canonical": tree.canonical,
        "anchor_skill": tree.anchor_skill,
        "T": tree.T,
        "anchor_edge": tree.anchor_edge,
        "edges": [[e.skill, e.start, e.end] for e in tree.edges],
        "paths": [
            {"edges": list(p.edges), "pairing_var": p.pairing_var, "answer_var": p.answer_var,
             "pairing_slot": p.pairing_slot, "n": p.n, "d": p.d}
            for p in paths
        ],
    }


def tree_from_record(rec: dict) -> tuple[ReasoningTree, list[ReasoningPath]]:
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise TreeError(f"unsupported tree record version {rec.get('schema_version')!r}")
    tree = ReasoningTree(tuple(Edge(s, a, b) for s, a, b in rec["edges"]), rec["anchor_edge"])
    paths = [
        ReasoningPath(rec["tree_id"], tuple(p["edges"]), p["pairing_var"], p["answer_var"], rec["T"], p["pairing_slot"])
        for p in rec["paths"]
    ]
    return tree, paths
