"""Anti-factual grounding of reasoning trees by backtracking beam search.

Each tree copy starts from two seed terms (the pairing term on the pairing
variable and one answer choice on the answer variable). Free variables are
filled one at a time with terms drawn from the intersection of the
anti-factual candidate sets imposed by every already-grounded neighbour, so
every statement touching a retrieved term is false in the knowledge base.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import kernels
from .kb.normalize import normalize_term
from .kb.store import END, START, AssertionStore
from .pairing import PairingTemplate, QAInstance
from .rng import Stream
from .skills import SkillTable
from .trees import ReasoningPath, ReasoningTree

log = logging.getLogger(__name__)

EMPTY_INTERSECTION = "EMPTY_INTERSECTION"
EXHAUSTED_BACKTRACK = "EXHAUSTED_BACKTRACK"
SEED_COLLISION = "SEED_COLLISION"

SEED = "seed"
RETRIEVED = "retrieved"
DEFAULT_MAX_EXPANSIONS = 20_000
SCHEMA_VERSION = 1


class GroundingError(ValueError):
    """Structural problem with the inputs (not an unsatisfiable search)."""


@dataclass(frozen=True)
class Constraint:
    edge: int
    relation: str
    seed_var: int
    seed_slot: str


@dataclass(frozen=True)
class ConstraintContext:
    store: AssertionStore
    variable: int
    constraints: tuple[Constraint, ...]
    seed_ids: tuple[int | None, ...]


class RelevanceMetric(Protocol):
    name: str

    def score(self, candidates: np.ndarray, context: ConstraintContext) -> np.ndarray: ...


class UniformRandomMetric:
    """Scores every candidate equally; the ranking is then the seeded tie-break alone."""

    name = "uniform"

    def score(self, candidates, context):
        return np.zeros(len(candidates))


class KBWeightMetric:
    """Prefers terms with more total assertion weight in the constrained slot."""

    name = "kb_weight"

    def __init__(self):
        self._mass: dict[tuple[int, str, str], np.ndarray] = {}

    def _slot_mass(self, store: AssertionStore, relation: str, slot: str) -> np.ndarray:
        key = (id(store), relation, slot)
        mass = self._mass.get(key)
        if mass is None:
            ix = store.index(relation)
            ids = ix.ends if slot == START else ix.starts
            mass = np.bincount(ids, weights=ix.weights, minlength=len(store.vocab))
            self._mass[key] = mass
        return mass

    def score(self, candidates, context):
        total = np.zeros(len(candidates))
        for c in context.constraints:
            total += self._slot_mass(context.store, c.relation, c.seed_slot)[candidates]
        return total


METRICS = {"uniform": UniformRandomMetric, "kb_weight": KBWeightMetric}


def make_metric(name: str) -> RelevanceMetric:
    try:
        return METRICS[name]()
    except KeyError:
        raise GroundingError(f"unknown relevance metric {name!r}; choose from {sorted(METRICS)}") from None


@dataclass(frozen=True)
class GroundingAssignment:
    terms: dict[int, str]
    provenance: dict[int, str]
    rng: dict = field(default_factory=dict)
    expansions: int = 0

    def retrieved_terms(self) -> list[str]:
        return [self.terms[v] for v in sorted(self.terms) if self.provenance[v] == RETRIEVED]


@dataclass(frozen=True)
class Failure:
    reason: str
    variable: int | None = None
    edges: tuple[int, ...] = ()
    detail: str = ""
    expansions: int = 0

    def as_dict(self) -> dict:
        return {"reason": self.reason, "variable": self.variable, "edges": list(self.edges),
                "detail": self.detail, "expansions": self.expansions}


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def variable_order(tree: ReasoningTree, seeds: Iterable[int]) -> list[tuple[int, tuple[tuple[int, int], ...]]]:
    """Free variables in grounding order, each with its (edge, earlier neighbour) constraints.

    The next variable is the one adjacent to the most grounded neighbours,
    ties going to the smaller id. In a tree the order depends only on the
    structure, so it is computed once.
    """
    adj = tree.adjacency()
    assigned = set(seeds)
    order = []
    free = [v for v in tree.variables if v not in assigned]
    while free:
        best, best_key, best_cons = None, None, None
        for v in free:
            cons = tuple((i, tree.edges[i].other(v)) for i in adj[v] if tree.edges[i].other(v) in assigned)
            if not cons:
                continue
            key = (-len(cons), v)
            if best_key is None or key < best_key:
                best, best_key, best_cons = v, key, cons
        order.append((best, best_cons))
        assigned.add(best)
        free.remove(best)
    return order


def _constraints(tree: ReasoningTree, skills: SkillTable, cons) -> tuple[Constraint, ...]:
    out = []
    for i, u in cons:
        e = tree.edges[i]
        out.append(Constraint(i, skills[e.skill].kb_relation, u, START if e.start == u else END))
    return tuple(out)


def ground_tree(
    tree: ReasoningTree,
    path: ReasoningPath,
    pairing_term: str,
    answer_term: str,
    store: AssertionStore,
    skills: SkillTable,
    *,
    beam_k: int = 1,
    metric: RelevanceMetric | None = None,
    rng: Stream,
    used: Iterable[str] = (),
    max_expansions: int = DEFAULT_MAX_EXPANSIONS,
) -> GroundingAssignment | Failure:
    """Ground every free variable of one tree copy.

    ``used`` lists terms that retrieved variables may not take (other answer
    choices, terms already placed in sibling copies). Candidates are ranked by
    ``metric`` with a seeded random tie-break, and the next term is drawn
    uniformly from the ``beam_k`` best untried candidates. Backtracking walks
    back to the latest variable with untried candidates, so the search is
    complete up to ``max_expansions`` tentative assignments.
    """
    if beam_k < 1:
        raise GroundingError(f"beam_k must be >= 1, got {beam_k}")
    if not pairing_term or not answer_term:
        raise GroundingError("seed terms must be non-empty")
    variables = set(tree.variables)
    if path.pairing_var not in variables or path.answer_var not in variables:
        raise GroundingError(f"seed variables {path.pairing_var}, {path.answer_var} not in tree {tree.tree_id}")
    if path.pairing_var == path.answer_var:
        raise GroundingError("pairing and answer variables coincide")
    if normalize_term(pairing_term) == normalize_term(answer_term):
        return Failure(SEED_COLLISION, path.answer_var, detail=f"answer {answer_term!r} equals the pairing term")
    metric = metric or UniformRandomMetric()

    seed_terms = {path.pairing_var: pairing_term, path.answer_var: answer_term}
    ids: dict[int, int | None] = {v: store.term_id(normalize_term(t)) for v, t in seed_terms.items()}
    banned = {store.term_id(normalize_term(t)) for t in [pairing_term, answer_term, *used]}
    banned.discard(None)

    plan = [(v, _constraints(tree, skills, cons)) for v, cons in variable_order(tree, seed_terms)]
    frames: list[list[int] | None] = [None] * len(plan)
    expansions = 0
    placed_any = False
    first_empty: int | None = None
    pos = 0
    while 0 <= pos < len(plan):
        var, cons = plan[pos]
        if frames[pos] is None:
            frames[pos] = _ranked_candidates(store, var, cons, ids, banned, metric, rng)
            if not frames[pos] and first_empty is None:
                first_empty = pos
        remaining = frames[pos]
        if not remaining:
            frames[pos] = None
            pos -= 1
            if pos >= 0:
                prev = plan[pos][0]
                banned.discard(ids.pop(prev))
            continue
        if expansions >= max_expansions:
            return Failure(EXHAUSTED_BACKTRACK, var, tuple(c.edge for c in cons),
                           f"expansion cap {max_expansions} reached", expansions)
        j = rng.integers(min(beam_k, len(remaining))) if len(remaining) > 1 else 0
        choice = remaining.pop(j)
        ids[var] = choice
        banned.add(choice)
        expansions += 1
        placed_any = True
        pos += 1

    if pos < 0:
        at = plan[first_empty if first_empty is not None else 0]
        reason = EXHAUSTED_BACKTRACK if placed_any else EMPTY_INTERSECTION
        return Failure(reason, at[0], tuple(c.edge for c in at[1]),
                       "no term satisfies every adjacent constraint", expansions)

    terms = dict(seed_terms)
    provenance = {v: SEED for v in seed_terms}
    for var, _ in plan:
        terms[var] = store.term(ids[var])
        provenance[var] = RETRIEVED
    return GroundingAssignment(dict(sorted(terms.items())), dict(sorted(provenance.items())), rng.trace(), expansions)


def _ranked_candidates(store, var, cons, ids, banned, metric, rng) -> list[int]:
    sets = [store.anti_factual_ids(c.relation, ids[c.seed_var], c.seed_slot) for c in cons]
    negative = [np.fromiter(sorted(banned), dtype=np.int64, count=len(banned))]
    cands = kernels.fused_candidates(sets, negative)
    m = len(cands)
    if m == 0:
        return []
    if m == 1:
        return [int(cands[0])]
    ctx = ConstraintContext(store, var, cons, tuple(ids[c.seed_var] for c in cons))
    scores = np.asarray(metric.score(cands, ctx), dtype=np.float64)
    if scores.shape != (m,) or not np.all(np.isfinite(scores)):
        raise GroundingError(f"metric {metric.name!r} returned invalid scores")
    order = np.lexsort((rng.random(m), -scores))
    return cands[order].tolist()


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------

def edge_terms(tree: ReasoningTree, assignment: GroundingAssignment) -> list[tuple[int, str, str]]:
    return [(i, assignment.terms[e.start], assignment.terms[e.end]) for i, e in enumerate(tree.edges)]


def check_assignment(
    tree: ReasoningTree,
    path: ReasoningPath,
    assignment: GroundingAssignment,
    store: AssertionStore,
    skills: SkillTable,
) -> list[str]:
    """Violations of the grounding invariants; empty means the assignment is valid."""
    problems = []
    terms = assignment.terms
    if set(terms) != set(tree.variables):
        problems.append("assignment does not cover exactly the tree variables")
        return problems
    norm = [normalize_term(t) for t in terms.values()]
    if len(set(norm)) != len(norm):
        problems.append("terms are not pairwise distinct")
    if assignment.provenance.get(path.pairing_var) != SEED or assignment.provenance.get(path.answer_var) != SEED:
        problems.append("seed variables not marked as seeds")
    rank = {path.pairing_var: -2, path.answer_var: -1}
    rank.update({v: k for k, (v, _) in enumerate(variable_order(tree, rank))})
    for i, e in enumerate(tree.edges):
        if assignment.provenance[e.start] == SEED and assignment.provenance[e.end] == SEED:
            continue
        rel = skills[e.skill].kb_relation
        s, t = normalize_term(terms[e.start]), normalize_term(terms[e.end])
        if store.contains(rel, s, t):
            problems.append(f"edge {i}: {rel}({s}, {t}) is a stored fact")
        # the later-grounded endpoint was retrieved from the open slot of this relation
        later, seed_slot = (e.end, START) if rank[e.end] > rank[e.start] else (e.start, END)
        tid = store.term_id(normalize_term(terms[later]))
        targets = store.index(rel).targets(seed_slot)
        if tid is None or not kernels.contains_sorted(targets, np.array([tid]))[0]:
            problems.append(f"edge {i}: {terms[later]!r} never fills that slot of {rel}")
    return problems


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundingJob:
    template: PairingTemplate
    instance: QAInstance
    tree: ReasoningTree
    path: ReasoningPath
    path_index: int

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.template.id, self.tree.tree_id, self.path_index)


@dataclass(frozen=True)
class GroundedTriple:
    job: GroundingJob
    assignments: tuple[GroundingAssignment, ...]


def ground_job(
    job: GroundingJob,
    store: AssertionStore,
    skills: SkillTable,
    *,
    beam_k: int = 1,
    metric: RelevanceMetric | None = None,
    seed: int = 0,
    max_expansions: int = DEFAULT_MAX_EXPANSIONS,
) -> tuple[list[GroundingAssignment], list[dict]]:
    """Ground one tree copy per answer choice.

    Copies are grounded in choice order and every copy avoids the terms of
    all choices and of earlier copies, so no term is shared between copies
    except the pairing term.
    """
    choices = job.instance.choices
    used: list[str] = list(choices)
    out, failures = [], []
    for ci, choice in enumerate(choices):
        rng = Stream(seed, "ground", job.template.id, job.tree.tree_id, job.path_index, ci)
        res = ground_tree(
            job.tree, job.path, job.template.pairing_term, choice, store, skills,
            beam_k=beam_k, metric=metric, rng=rng, used=used, max_expansions=max_expansions,
        )
        if isinstance(res, Failure):
            failures.append({"pairing_id": job.template.id, "tree_id": job.tree.tree_id,
                             "path_index": job.path_index, "choice_index": ci, **res.as_dict()})
            continue
        used.extend(res.retrieved_terms())
        out.append(res)
    return out, failures


def ground_all(
    jobs: Sequence[GroundingJob],
    store: AssertionStore,
    skills: SkillTable,
    *,
    beam_k: int = 1,
    metric: RelevanceMetric | None = None,
    seed: int = 0,
    max_expansions: int = DEFAULT_MAX_EXPANSIONS,
    workers: int = 1,
) -> tuple[list[GroundedTriple], list[dict]]:
    """Ground every job; a job is kept only if all of its choices ground.

    Results keep job order regardless of ``workers``.
    """
    metric = metric or UniformRandomMetric()

    def run(job):
        return ground_job(job, store, skills, beam_k=beam_k, metric=metric, seed=seed, max_expansions=max_expansions)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    corpus, report = [], []
    for job, (assignments, failures) in zip(jobs, results):
        if failures:
            report.extend(failures)
            continue
        corpus.append(GroundedTriple(job, tuple(assignments)))
    return corpus, report


def assignment_record(triple: GroundedTriple, choice_index: int) -> dict:
    a = triple.assignments[choice_index]
    return {
        "schema_version": SCHEMA_VERSION,
        "pairing_id": triple.job.template.id,
        "qa_id": triple.job.instance.id,
        "tree_id": triple.job.tree.tree_id,
        "path_index": triple.job.path_index,
        "choice_index": choice_index,
        "terms": {str(k): v for k, v in a.terms.items()},
        "provenance": {str(k): v for k, v in a.provenance.items()},
        "rng": a.rng,
    }


def assignment_from_record(rec: dict) -> GroundingAssignment:
    return GroundingAssignment(
        {int(k): v for k, v in rec["terms"].items()},
        {int(k): v for k, v in rec["provenance"].items()},
        rec.get("rng", {}),
    )
