"""Immutable, doubly indexed assertion store and anti-factual retrieval."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .normalize import normalize_term


class KBError(Exception):
    pass


class EmptyStore(KBError):
    """Raised when a build produces no assertions."""


class UnknownRelation(KBError, KeyError):
    pass


START = "start"
END = "end"
SLOTS = (START, END)


@dataclass(frozen=True, order=True)
class Assertion:
    relation: str
    start: str
    end: str
    weight: float = 1.0

    def __post_init__(self):
        if not self.start or not self.end:
            raise ValueError(f"empty term in assertion {self!r}")
        if self.weight < 0:
            raise ValueError(f"negative weight in assertion {self!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class _RelationIndex:
    """Per-relation arrays, all int64 term ids.

    ``starts``/``ends``/``weights`` are sorted by (start, end). The by-end view
    keeps a permutation sorted by (end, start). ``keys`` = start * V + end is
    therefore sorted too and doubles as the membership set.
    """

    __slots__ = (
        "starts", "ends", "weights", "keys",
        "start_keys", "start_ptr",
        "end_order", "end_keys", "end_ptr",
    )

    def __init__(self, starts, ends, weights, n_terms):
        self.starts = _frozen(starts)
        self.ends = _frozen(ends)
        self.weights = _frozen(weights)
        self.keys = _frozen(starts * np.int64(n_terms) + ends)

        self.start_keys, first = np.unique(starts, return_index=True)
        self.start_ptr = np.append(first, len(starts)).astype(np.int64)

        order = np.lexsort((starts, ends))
        self.end_order = order
        sorted_ends = ends[order]
        self.end_keys, first = np.unique(sorted_ends, return_index=True)
        self.end_ptr = np.append(first, len(ends)).astype(np.int64)
        for arr in (self.start_keys, self.start_ptr, self.end_order, self.end_keys, self.end_ptr):
            _frozen(arr)

    def __len__(self):
        return len(self.starts)

    def neighbours(self, term_id: int, slot: str) -> np.ndarray:
        """Sorted ids on the opposite slot of every assertion with ``term_id`` in ``slot``."""
        if slot == START:
            i = np.searchsorted(self.start_keys, term_id)
            if i < len(self.start_keys) and self.start_keys[i] == term_id:
                return self.ends[self.start_ptr[i] : self.start_ptr[i + 1]]
        else:
            i = np.searchsorted(self.end_keys, term_id)
            if i < len(self.end_keys) and self.end_keys[i] == term_id:
                return self.starts[self.end_order[self.end_ptr[i] : self.end_ptr[i + 1]]]
        return np.empty(0, dtype=np.int64)

    def targets(self, seed_slot: str) -> np.ndarray:
        """Distinct ids that occupy the slot opposite ``seed_slot``."""
        return self.end_keys if seed_slot == START else self.start_keys


class AssertionStore:
    """Assertions grouped by relation, indexed by start and by end term.

    Terms are interned into a sorted vocabulary, so sorting by id is sorting
    by term; every query returns terms in ascending order.
    """

    def __init__(self, vocab: Sequence[str], indexes: dict[str, _RelationIndex]):
        self._vocab = tuple(vocab)
        self._ids = {t: i for i, t in enumerate(self._vocab)}
        self._rel = dict(sorted(indexes.items()))

    # construction ---------------------------------------------------------

    @classmethod
    def from_assertions(cls, assertions: Iterable[Assertion], relations: Iterable[str] | None = None):
        """Build a store; duplicate triples keep the max weight."""
        rows = list(assertions)
        if not rows:
            raise EmptyStore("no assertions to index")
        vocab = sorted({a.start for a in rows} | {a.end for a in rows})
        ids = {t: i for i, t in enumerate(vocab)}
        by_rel: dict[str, list[tuple[int, int, float]]] = {}
        for a in rows:
            by_rel.setdefault(a.relation, []).append((ids[a.start], ids[a.end], float(a.weight)))
        arrays = {
            rel: (
                np.fromiter((r[0] for r in triples), dtype=np.int64, count=len(triples)),
                np.fromiter((r[1] for r in triples), dtype=np.int64, count=len(triples)),
                np.fromiter((r[2] for r in triples), dtype=np.float64, count=len(triples)),
            )
            for rel, triples in by_rel.items()
        }
        return cls.from_arrays(vocab, arrays, relations)

    @classmethod
    def from_arrays(cls, vocab, arrays, relations=None):
        """Build from ``{relation: (start_ids, end_ids, weights)}`` over a sorted vocabulary."""
        n = max(len(vocab), 1)
        indexes = {}
        for rel, (s, e, w) in arrays.items():
            if len(s) == 0:
                continue
            keys = np.asarray(s, dtype=np.int64) * n + np.asarray(e, dtype=np.int64)
            order = np.argsort(keys, kind="stable")
            keys, weights = kernels.dedup_max(keys[order], np.asarray(w, dtype=np.float64)[order])
            indexes[rel] = _RelationIndex(keys // n, keys % n, weights, n)
        for rel in relations or ():
            if rel not in indexes:
                empty = np.empty(0, dtype=np.int64)
                indexes[rel] = _RelationIndex(empty, empty.copy(), np.empty(0), n)
        if not any(len(ix) for ix in indexes.values()):
            raise EmptyStore("no assertions to index")
        return cls(vocab, indexes)

    # basic accessors ------------------------------------------------------

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(self._rel)

    @property
    def vocab(self) -> tuple[str, ...]:
        return self._vocab

    def __len__(self) -> int:
        return sum(len(ix) for ix in self._rel.values())

    def count(self, relation: str) -> int:
        return len(self._index(relation))

    def term_id(self, term: str) -> int | None:
        return self._ids.get(term)

    def term(self, term_id: int) -> str:
        return self._vocab[term_id]

    def terms(self, ids: Iterable[int]) -> list[str]:
        return [self._vocab[int(i)] for i in ids]

    def ids(self, terms: Iterable[str]) -> np.ndarray:
        """Sorted unique ids of the in-vocabulary members of ``terms``."""
        found = [self._ids[t] for t in terms if t in self._ids]
        return np.unique(np.asarray(found, dtype=np.int64))

    def _index(self, relation: str) -> _RelationIndex:
        try:
            return self._rel[relation]
        except KeyError:
            raise UnknownRelation(relation) from None

    def index(self, relation: str) -> _RelationIndex:
        return self._index(relation)

    # membership / indexes -------------------------------------------------

    def contains(self, relation: str, start: str, end: str) -> bool:
        ix = self._index(relation)
        s, e = self._ids.get(start), self._ids.get(end)
        if s is None or e is None:
            return False
        key = np.int64(s) * max(len(self._vocab), 1) + e
        i = np.searchsorted(ix.keys, key)
        return bool(i < len(ix.keys) and ix.keys[i] == key)

    def __contains__(self, triple) -> bool:
        relation, start, end = triple
        return relation in self._rel and self.contains(relation, start, end)

    def by_start(self, relation: str, term: str) -> list[str]:
        tid = self._ids.get(term)
        if tid is None:
            self._index(relation)
            return []
        return self.terms(self._index(relation).neighbours(tid, START))

    def by_end(self, relation: str, term: str) -> list[str]:
        tid = self._ids.get(term)
        if tid is None:
            self._index(relation)
            return []
        return self.terms(self._index(relation).neighbours(tid, END))

    def weight(self, relation: str, start: str, end: str) -> float | None:
        ix = self._index(relation)
        s, e = self._ids.get(start), self._ids.get(end)
        if s is None or e is None:
            return None
        key = np.int64(s) * max(len(self._vocab), 1) + e
        i = np.searchsorted(ix.keys, key)
        if i < len(ix.keys) and ix.keys[i] == key:
            return float(ix.weights[i])
        return None

    def assertions(self, relation: str | None = None) -> Iterator[Assertion]:
        rels = [relation] if relation is not None else list(self._rel)
        for rel in rels:
            ix = self._index(rel)
            for s, e, w in zip(ix.starts.tolist(), ix.ends.tolist(), ix.weights.tolist()):
                yield Assertion(rel, self._vocab[s], self._vocab[e], w)

    def membership(self) -> frozenset[tuple[str, str, str]]:
        return frozenset((a.relation, a.start, a.end) for a in self.assertions())

    def contains_many(self, relation: str, start_ids: np.ndarray, end_ids: np.ndarray) -> np.ndarray:
        """Vectorized membership over id pairs."""
        ix = self._index(relation)
        keys = np.asarray(start_ids, dtype=np.int64) * max(len(self._vocab), 1) + np.asarray(end_ids, dtype=np.int64)
        return kernels.contains_sorted(ix.keys, keys)

    # anti-factual retrieval ----------------------------------------------

    def anti_factual_ids(self, relation: str, seed_id: int | None, seed_slot: str) -> np.ndarray:
        """Id form of :func:`query_anti_factual`.

        A target y qualifies when some assertion relation(x, y) has x != seed
        and relation(seed, y) is absent. Every y whose only partner is the
        seed is also a neighbour of the seed, so the rule reduces to
        "all targets minus the seed's neighbours minus the seed".
        """
        if seed_slot not in SLOTS:
            raise ValueError(f"seed_slot must be one of {SLOTS}, got {seed_slot!r}")
        ix = self._index(relation)
        targets = ix.targets(seed_slot)
        if seed_id is None:
            return targets.copy()
        excluded = [ix.neighbours(seed_id, seed_slot), np.array([seed_id], dtype=np.int64)]
        return kernels.fused_candidates([targets], excluded)


def query_anti_factual(store: AssertionStore, relation: str, seed: str, seed_slot: str) -> list[str]:
    """Terms that can fill the open slot of ``relation`` anti-factually w.r.t. ``seed``.

    With ``seed_slot="start"`` this is every end term y of some
    ``relation(x, y)`` with x != seed such that ``relation(seed, y)`` is not in
    the store; ``"end"`` is the mirror image. The seed itself is never
    returned. Result is sorted.
    """
    ids = store.anti_factual_ids(relation, store.term_id(normalize_term(seed)), seed_slot)
    return store.terms(ids)


def intersect_candidates(sets: Sequence[Iterable[str]]) -> list[str]:
    """Intersection of candidate-term sets, sorted. A single set is returned as-is."""
    if not sets:
        raise ValueError("intersect_candidates needs at least one set")
    out = set(sets[0])
    for s in sets[1:]:
        out &= set(s)
    return sorted(out)
