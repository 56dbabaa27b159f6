"""Benchmark item assembly, export, and the symbolic soundness checker."""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from string import ascii_uppercase

from .grounder import GroundingAssignment
from .io import sha256_file, write_jsonl
from .pairing import PairingTemplate, QAInstance
from .rng import Stream
from .skills import RuleTable, Skill, SkillTable, VirtualTemplate, reduce_pair
from .trees import ReasoningPath, ReasoningTree

SCHEMA_VERSION = 1
PREFIX = "Suppose that "
DEFAULT_INSTRUCTION = (
    "You will be provided with statements relating to a multiple-choice question. "
    "The contents of the statements may disagree with your prior knowledge of the world. "
    "That is ok. Your task is to provide the most appropriate answer to the multiple-choice "
    "question based on the reasoning presented in the statements."
)

FACTUAL = "factual"
ANTI_FACTUAL = "anti_factual"
BOTH = "both"
BASELINE = "baseline"
SAMPLE_ONE = "sample_one"
ENUMERATE_ALL = "enumerate_all"
POSITIVE = "positive"
NEGATIVE = "negative"


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class Statement:
    text: str
    source: tuple[int, int]
    polarity: str = POSITIVE

    def __post_init__(self):
        if not self.text:
            raise AssemblyError("empty statement")


@dataclass(frozen=True)
class BenchmarkItem:
    id: str
    instruction: str
    statements: tuple[Statement, ...]
    question: str
    choices: tuple[str, ...]
    gold_index: int
    metadata: dict = field(default_factory=dict)

    @property
    def gold_letter(self) -> str:
        return ascii_uppercase[self.gold_index]

    @property
    def variant(self) -> str:
        return self.metadata["variant"]

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "instruction": self.instruction,
            "statements": [s.text for s in self.statements],
            "question": self.question,
            "choices": [f"{ascii_uppercase[i]}: {c}" for i, c in enumerate(self.choices)],
            "choice_texts": list(self.choices),
            "gold": self.gold_letter,
            "gold_index": self.gold_index,
            "metadata": self.metadata,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "BenchmarkItem":
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise AssemblyError(f"unsupported item schema_version {rec.get('schema_version')!r}")
        statements = tuple(Statement(t, (-1, -1), POSITIVE) for t in rec["statements"])
        return cls(rec["id"], rec["instruction"], statements, rec["question"],
                   tuple(rec["choice_texts"]), int(rec["gold_index"]), dict(rec["metadata"]))


@dataclass(frozen=True)
class VariantPlan:
    mode: str = BOTH
    target_policy: str = SAMPLE_ONE

    def __post_init__(self):
        if self.mode not in (FACTUAL, ANTI_FACTUAL, BOTH):
            raise AssemblyError(f"unknown variant mode {self.mode!r}")
        if self.target_policy not in (SAMPLE_ONE, ENUMERATE_ALL):
            raise AssemblyError(f"unknown target policy {self.target_policy!r}")


def letters(n: int) -> str:
    if n > len(ascii_uppercase):
        raise AssemblyError(f"at most {len(ascii_uppercase)} choices can be lettered")
    return ascii_uppercase[:n]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_statement(skill: Skill, grounding: Mapping[str, str], polarity: str = POSITIVE,
                     source: tuple[int, int] = (0, 0)) -> Statement:
    """Render ``skill`` over ``{"start": term, "end": term}`` (KB slot order)."""
    start, end = grounding.get("start"), grounding.get("end")
    if not start or not end:
        raise AssemblyError(f"{skill.name}: both slots must be grounded, got {dict(grounding)}")
    text = PREFIX + skill.fill(start, end, positive=polarity == POSITIVE)
    return Statement(text, source, polarity)


def render_pairing_statement(template: PairingTemplate, term: str, positive: bool,
                             source: tuple[int, int] = (0, 0)) -> Statement:
    return Statement(PREFIX + template.render(term, positive), source, POSITIVE if positive else NEGATIVE)


def render_copy(
    tree: ReasoningTree,
    path: ReasoningPath,
    template: PairingTemplate,
    skills: SkillTable,
    assignment: GroundingAssignment,
    copy_index: int,
    positive: bool,
) -> list[Statement]:
    """Statements of one grounded tree copy, in edge order."""
    out = []
    anchor = path.edges[0]
    for i, e in enumerate(tree.edges):
        src = (copy_index, i)
        if i == anchor:
            term = assignment.terms[e.other(path.pairing_var)]
            out.append(render_pairing_statement(template, term, positive, src))
        else:
            grounding = {"start": assignment.terms.get(e.start), "end": assignment.terms.get(e.end)}
            out.append(render_statement(skills[e.skill], grounding, POSITIVE, src))
    return out


# ---------------------------------------------------------------------------
# planning and assembly
# ---------------------------------------------------------------------------

def plan_variants(default_index: int, Q: int, plan: VariantPlan, rng: Stream) -> list[tuple[int, str]]:
    """Targets to build for one (pairing, tree, path): factual first, then anti-factual."""
    if Q < 2:
        raise AssemblyError(f"need at least 2 choices to plan variants, got Q={Q}")
    if not 0 <= default_index < Q:
        raise AssemblyError(f"default index {default_index} out of range for Q={Q}")
    out = []
    if plan.mode in (FACTUAL, BOTH):
        out.append((default_index, FACTUAL))
    if plan.mode in (ANTI_FACTUAL, BOTH):
        others = [i for i in range(Q) if i != default_index]
        if plan.target_policy == SAMPLE_ONE:
            out.append((others[rng.integers(len(others))], ANTI_FACTUAL))
        else:
            out.extend((i, ANTI_FACTUAL) for i in others)
    return out


def item_id(pairing_id: str, tree_id: str, path_index: int, variant: str, target: int) -> str:
    return f"{pairing_id}:{tree_id}:{path_index}:{variant}:{target}"


def assemble_item(
    instance: QAInstance,
    template: PairingTemplate,
    tree: ReasoningTree,
    path: ReasoningPath,
    groundings: Sequence[GroundingAssignment],
    target_choice: int,
    variant: str,
    skills: SkillTable,
    *,
    rng: Stream,
    seed: int = 0,
    path_index: int = 0,
    instruction: str = DEFAULT_INSTRUCTION,
    extra: Mapping | None = None,
) -> BenchmarkItem:
    """Render all Q copies, negate the pairing statement outside the target copy, shuffle, and dedup."""
    Q = instance.Q
    letters(Q)
    if len(groundings) != Q:
        raise AssemblyError(f"expected {Q} groundings, got {len(groundings)}")
    if not 0 <= target_choice < Q:
        raise AssemblyError(f"target choice {target_choice} out of range")
    expected = FACTUAL if target_choice == instance.default_answer_index else ANTI_FACTUAL
    if variant != expected:
        raise AssemblyError(f"target {target_choice} makes a {expected} item, not {variant}")
    statements: list[Statement] = []
    for ci, g in enumerate(groundings):
        if g is None:
            raise AssemblyError(f"missing grounding for choice {ci}")
        if g.terms.get(path.answer_var) != instance.choices[ci]:
            raise AssemblyError(f"grounding {ci} does not place choice {instance.choices[ci]!r} on the answer variable")
        statements.extend(render_copy(tree, path, template, skills, g, ci, ci == target_choice))

    order = rng.permutation(len(statements))
    seen, kept = set(), []
    for j in order:
        s = statements[j]
        if s.text in seen:
            continue
        seen.add(s.text)
        kept.append(s)
    for c in instance.choices:
        if not any(f"[{c}]" in s.text for s in kept):
            raise AssemblyError(f"choice {c!r} no longer appears after dedup")

    metadata = {
        "pairing_id": template.id,
        "qa_id": instance.id,
        "tree_id": tree.tree_id,
        "path_index": path_index,
        "T": tree.T,
        "n": path.n,
        "d": path.d,
        "variant": variant,
        "seed": seed,
        "Q": Q,
        "default_index": instance.default_answer_index,
        "pairing": {
            "skill": template.skill,
            "term": template.pairing_term,
            "slot": template.pairing_slot,
            "surface_positive": template.surface_positive,
            "surface_negative": template.surface_negative,
        },
    }
    if extra:
        metadata.update(extra)
    return BenchmarkItem(
        item_id(template.id, tree.tree_id, path_index, variant, target_choice),
        instruction, tuple(kept), instance.question, instance.choices, target_choice, metadata,
    )


def baseline_item(instance: QAInstance, *, seed: int = 0, instruction: str = DEFAULT_INSTRUCTION) -> BenchmarkItem:
    """The no-context question, gold on the default answer."""
    metadata = {
        "pairing_id": f"baseline:{instance.id}", "qa_id": instance.id, "tree_id": None, "path_index": None,
        "T": 0, "n": 0, "d": 0, "variant": BASELINE, "seed": seed, "Q": instance.Q,
        "default_index": instance.default_answer_index, "pairing": None,
    }
    return BenchmarkItem(f"baseline:{instance.id}", instruction, (), instance.question, instance.choices,
                         instance.default_answer_index, metadata)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def stratum_counts(items: Iterable[BenchmarkItem]) -> dict[str, int]:
    counts = Counter(f"{it.metadata['variant']}/n={it.metadata['n']}/d={it.metadata['d']}" for it in items)
    return dict(sorted(counts.items()))


def export_items(items: Sequence[BenchmarkItem], destination: str | Path, *, seed: int = 0) -> dict:
    """Write one item per line and return the export manifest."""
    destination = Path(destination)
    n = write_jsonl(destination, (it.to_record() for it in items))
    return {
        "schema_version": SCHEMA_VERSION,
        "path": destination.name,
        "sha256": sha256_file(destination),
        "count": n,
        "by_variant": dict(sorted(Counter(it.metadata["variant"] for it in items).items())),
        "by_stratum": stratum_counts(items),
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# soundness
# ---------------------------------------------------------------------------

_TERM = r"\[([^\[\]]+)\]"


def _surface_regex(surface: str, slots: Mapping[str, str]) -> re.Pattern:
    """Regex for a full statement; ``slots`` maps a placeholder to a group name."""
    pattern = re.escape(PREFIX + surface)
    for placeholder, group in slots.items():
        pattern = pattern.replace(re.escape("{" + placeholder + "}"), _TERM.replace("(", f"(?P<{group}>", 1))
    return re.compile("^" + pattern + "$")


@dataclass(frozen=True)
class ParsedStatement:
    skill: str
    start: str
    end: str
    positive: bool
    pairing: bool
    index: int


@dataclass
class SoundnessResult:
    passed: bool
    implied: list[int]
    contradicted: list[int]
    undetermined: list[int]
    trace: dict[int, list[str]]
    error: str | None = None

    @property
    def implied_choice(self) -> int | None:
        return self.implied[0] if len(self.implied) == 1 else None


class StatementParser:
    """Reads rendered statements back into (skill, start, end, polarity)."""

    def __init__(self, skills: SkillTable, pairing: Mapping | None):
        self.patterns: list[tuple[re.Pattern, str, bool, bool, str | None]] = []
        if pairing:
            for positive, key in ((True, "surface_positive"), (False, "surface_negative")):
                pat = _surface_regex(pairing[key], {"A": "a"})
                self.patterns.append((pat, pairing["skill"], positive, True, pairing["slot"]))
        for skill in skills:
            groups = {skill.start_slot: "s", skill.end_slot: "e"}
            for positive in (True, False):
                self.patterns.append((_surface_regex(skill.surface(positive), groups), skill.name, positive, False, None))
        self.pairing = pairing

    def parse(self, text: str, index: int) -> ParsedStatement:
        for pat, skill, positive, is_pairing, slot in self.patterns:
            m = pat.match(text)
            if not m:
                continue
            if is_pairing:
                a, p = m.group("a"), self.pairing["term"]
                start, end = (p, a) if slot == "start" else (a, p)
            else:
                start, end = m.group("s"), m.group("e")
            return ParsedStatement(skill, start, end, positive, is_pairing, index)
        raise AssemblyError(f"statement {index} is not parseable: {text!r}")


def verify_soundness(item: BenchmarkItem | Mapping, skills: SkillTable, rules: RuleTable) -> SoundnessResult:
    """Re-derive the implied choice from the statement texts alone.

    Statements are parsed into a term graph. For every choice, each simple
    path to the pairing term that ends on a pairing statement is folded from
    the pairing end outward. A fold that restates the pairing template (same
    skill, pairing term in the same slot) implies the choice when the pairing
    statement is positive and contradicts it when negative. The item passes
    iff exactly one choice is implied, it is the gold choice, and every other
    choice is contradicted.
    """
    if isinstance(item, Mapping):
        item = BenchmarkItem.from_record(item)
    md = item.metadata
    pairing = md.get("pairing")
    Q = len(item.choices)
    if md.get("variant") == BASELINE or not pairing:
        return SoundnessResult(False, [], [], list(range(Q)), {}, "item has no pairing statements")
    parser = StatementParser(skills, pairing)
    try:
        parsed = [parser.parse(s.text, i) for i, s in enumerate(item.statements)]
    except AssemblyError as exc:
        return SoundnessResult(False, [], [], list(range(Q)), {}, str(exc))

    P = pairing["term"]
    adj: dict[str, list[ParsedStatement]] = defaultdict(list)
    for st in parsed:
        adj[st.start].append(st)
        adj[st.end].append(st)

    implied, contradicted, undetermined = [], [], []
    trace: dict[int, list[str]] = {}
    for ci, choice in enumerate(item.choices):
        verdicts = set()
        lines = []
        for chain in _paths_to(adj, choice, P):
            anchor = chain[-1]
            if not anchor.pairing:
                continue
            seq = [VirtualTemplate(st.skill, st.start, st.end) for st in reversed(chain)]
            acc = seq[0]
            for t in seq[1:]:
                acc = reduce_pair(acc, t, rules)
                if acc is None:
                    break
            if acc is None:
                continue
            slot_ok = (acc.start_var == P) == (pairing["slot"] == "start")
            if acc.skill != pairing["skill"] or not slot_ok:
                continue
            verdicts.add(anchor.positive)
            lines.append(" <- ".join(f"{t.skill}({t.start_var}, {t.end_var})" for t in seq)
                         + f" => {acc.skill}({acc.start_var}, {acc.end_var})"
                         + (" [affirmed]" if anchor.positive else " [negated]"))
        trace[ci] = lines
        if verdicts == {True}:
            implied.append(ci)
        elif verdicts == {False}:
            contradicted.append(ci)
        else:
            undetermined.append(ci)
    passed = implied == [item.gold_index] and len(contradicted) == Q - 1
    return SoundnessResult(passed, implied, contradicted, undetermined, trace)


def _paths_to(adj, source: str, target: str, limit: int = 64):
    """Simple statement chains from ``source`` to ``target`` that do not pass through ``target`` early."""
    out = []

    def walk(term, visited, chain):
        if len(out) >= limit:
            return
        for st in adj.get(term, ()):
            if any(st is c for c in chain):
                continue
            nxt = st.end if st.start == term else st.start
            if nxt == target:
                out.append(chain + [st])
                continue
            if nxt in visited:
                continue
            walk(nxt, visited | {nxt}, chain + [st])

    walk(source, {source}, [])
    return out
