"""QA instances, pairing templates, relation inference, balancing, and tree matching."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kb.normalize import normalize_term
from .kb.store import AssertionStore
from .skills import ConfigError, SkillTable, _read_document
from .trees import ReasoningPath, ReasoningTree

log = logging.getLogger(__name__)

QA_SCHEMA_VERSION = 1
PAIRING_SCHEMA_VERSION = 1
SLOTS = ("start", "end")


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class QAInstance:
    id: str
    question: str
    choices: tuple[str, ...]
    default_answer_index: int
    source_concept: str | None = None
    source_relation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if not self.id:
            raise PairingError("instance id is empty")
        if len(self.choices) < 2:
            raise PairingError(f"{self.id}: needs at least 2 choices, got {len(self.choices)}")
        if len(set(self.choices)) != len(self.choices):
            raise PairingError(f"{self.id}: duplicate answer choices {list(self.choices)}")
        for c in self.choices:
            if not c or "[" in c or "]" in c:
                raise PairingError(f"{self.id}: invalid choice {c!r}")
        if not 0 <= self.default_answer_index < len(self.choices):
            raise PairingError(f"{self.id}: answer index {self.default_answer_index} out of range")

    @property
    def Q(self) -> int:
        return len(self.choices)

    @property
    def default_answer(self) -> str:
        return self.choices[self.default_answer_index]

    def with_relation(self, relation: str | None) -> "QAInstance":
        return QAInstance(self.id, self.question, self.choices, self.default_answer_index,
                          self.source_concept, relation)

    def to_record(self) -> dict:
        return {
            "schema_version": QA_SCHEMA_VERSION,
            "id": self.id,
            "question": self.question,
            "choices": list(self.choices),
            "answer_index": self.default_answer_index,
            "source_concept": self.source_concept,
            "source_relation": self.source_relation,
        }


@dataclass(frozen=True)
class PairingTemplate:
    id: str
    qa_id: str
    skill: str
    pairing_term: str
    pairing_slot: str
    surface_positive: str
    surface_negative: str

    def __post_init__(self):
        if self.pairing_slot not in SLOTS:
            raise PairingError(f"{self.id}: pairing_slot must be start or end, got {self.pairing_slot!r}")
        if not self.pairing_term:
            raise PairingError(f"{self.id}: empty pairing term")
        for name in ("surface_positive", "surface_negative"):
            text = getattr(self, name)
            if text.count("{A}") != 1:
                raise PairingError(f"{self.id}: {name} must contain exactly one {{A}} slot")
            if f"[{self.pairing_term}]" not in text:
                raise PairingError(f"{self.id}: {name} must mention [{self.pairing_term}]")
        if self.surface_positive == self.surface_negative:
            raise PairingError(f"{self.id}: positive and negative surfaces are identical")

    @property
    def answer_slot(self) -> str:
        return "end" if self.pairing_slot == "start" else "start"

    def render(self, term: str, positive: bool) -> str:
        surface = self.surface_positive if positive else self.surface_negative
        return surface.replace("{A}", f"[{term}]")

    def to_record(self) -> dict:
        return {
            "id": self.id, "qa_id": self.qa_id, "skill": self.skill,
            "pairing_term": self.pairing_term, "pairing_slot": self.pairing_slot,
            "surface_positive": self.surface_positive, "surface_negative": self.surface_negative,
        }


@dataclass(frozen=True)
class Pairing:
    qa_id: str
    pairing_template_id: str
    tree_id: str
    paths: tuple[int, ...] = field(default=())


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _lines(source) -> tuple[str, Iterable[str]]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        return str(path), path.read_text(encoding="utf-8").splitlines()
    return "<stream>", source


def _from_csqa(rec: dict) -> dict:
    q = rec["question"]
    labels = [c["label"] for c in q["choices"]]
    return {
        "id": rec["id"],
        "question": q["stem"],
        "choices": [c["text"] for c in q["choices"]],
        "answer_index": labels.index(rec["answerKey"]),
        "source_concept": q.get("question_concept"),
    }


def load_qa_instances(source) -> list[QAInstance]:
    """Read line-delimited QA records.

    Accepts the native schema (id, question, choices, answer_index,
    source_concept) and the CommonsenseQA distribution format, detected per
    record. Errors carry a ``file:line`` locator.
    """
    name, lines = _lines(source)
    out: list[QAInstance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{name}:{lineno}"
        try:
            rec = json.loads(line)
            if isinstance(rec.get("question"), dict):
                rec = _from_csqa(rec)
            version = rec.get("schema_version", QA_SCHEMA_VERSION)
            if version != QA_SCHEMA_VERSION:
                raise PairingError(f"unsupported schema_version {version!r}")
            concept = rec.get("source_concept")
            inst = QAInstance(
                id=str(rec["id"]),
                question=str(rec["question"]),
                choices=tuple(str(c).strip() for c in rec["choices"]),
                default_answer_index=int(rec["answer_index"]),
                source_concept=concept.strip().lower() if concept else None,
                source_relation=rec.get("source_relation"),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise PairingError(f"{where}: {exc}") from None
        if inst.id in seen:
            raise PairingError(f"{where}: duplicate instance id {inst.id!r}")
        seen.add(inst.id)
        out.append(inst)
    return out


def load_pairing_templates(config, skills: SkillTable, qa_ids: Iterable[str] | None = None) -> list[PairingTemplate]:
    """Load hand-written pairing templates from a YAML/JSON document."""
    doc = _read_document(config)
    version = doc.get("version")
    if version != PAIRING_SCHEMA_VERSION:
        raise ConfigError(f"pairing templates: unsupported version {version!r}")
    known = set(qa_ids) if qa_ids is not None else None
    out, ids = [], set()
    per_qa: Counter = Counter()
    for i, entry in enumerate(doc.get("templates") or []):
        where = f"templates[{i}]"
        try:
            qa_id = str(entry["qa_id"])
            per_qa[qa_id] += 1
            tpl = PairingTemplate(
                id=str(entry.get("id") or f"{qa_id}/p{per_qa[qa_id]}"),
                qa_id=qa_id,
                skill=entry["skill"],
                pairing_term=entry["pairing_term"],
                pairing_slot=entry["pairing_slot"],
                surface_positive=entry["surface_positive"],
                surface_negative=entry["surface_negative"],
            )
        except KeyError as exc:
            raise ConfigError(f"{where}: missing field {exc.args[0]!r}") from None
        except PairingError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if tpl.skill not in skills:
            raise ConfigError(f"{where}: unknown skill {tpl.skill!r}")
        if known is not None and tpl.qa_id not in known:
            raise ConfigError(f"{where}: unknown qa_id {tpl.qa_id!r}")
        if tpl.id in ids:
            raise ConfigError(f"{where}: duplicate template id {tpl.id!r}")
        ids.add(tpl.id)
        out.append(tpl)
    return out


# ---------------------------------------------------------------------------
# relation inference and balancing
# ---------------------------------------------------------------------------

def relation_votes(instance: QAInstance, store: AssertionStore) -> Counter:
    votes: Counter = Counter()
    if not instance.source_concept:
        return votes
    c = normalize_term(instance.source_concept)
    choices = [normalize_term(x) for x in instance.choices]
    for rel in store.relations:
        for choice in choices:
            votes[rel] += store.contains(rel, c, choice) + store.contains(rel, choice, c)
    return +votes


def infer_source_relation(instance: QAInstance, store: AssertionStore) -> str | None:
    """Majority relation linking the source concept to any choice; ties go to the lexicographically first name."""
    votes = relation_votes(instance, store)
    if not votes:
        return None
    return min(votes, key=lambda r: (-votes[r], r))


def annotate_relations(instances: Sequence[QAInstance], store: AssertionStore) -> tuple[list[QAInstance], list[dict]]:
    """Attach inferred relations; instances without a vote are excluded with a logged reason."""
    kept, rejected = [], []
    for inst in instances:
        rel = inst.source_relation or infer_source_relation(inst, store)
        if rel is None:
            reason = "no source concept" if not inst.source_concept else "no matching assertion"
            log.info("excluding %s: %s", inst.id, reason)
            rejected.append({"id": inst.id, "reason": reason})
            continue
        kept.append(inst.with_relation(rel))
    return kept, rejected


def relation_histogram(instances: Iterable[QAInstance]) -> dict[str, int]:
    return dict(sorted(Counter(i.source_relation for i in instances if i.source_relation).items()))


def balance_by_relation(
    instances: Sequence[QAInstance],
    quota: int,
    rng: np.random.Generator,
    rejects: Iterable[str] = (),
) -> list[QAInstance]:
    """Sample up to ``quota`` instances per relation, then drop blocklisted ids.

    Relations are visited in name order and each sample keeps input order, so
    the output depends only on the input order and the generator state.
    """
    if quota < 1:
        raise PairingError(f"quota must be >= 1, got {quota}")
    groups: dict[str, list[QAInstance]] = defaultdict(list)
    for inst in instances:
        if inst.source_relation is not None:
            groups[inst.source_relation].append(inst)
    blocked = set(rejects)
    out, seen = [], set()
    for rel in sorted(groups):
        pool = groups[rel]
        k = min(quota, len(pool))
        picked = sorted(rng.choice(len(pool), size=k, replace=False)) if k < len(pool) else range(len(pool))
        for j in picked:
            inst = pool[j]
            if inst.id in blocked or inst.id in seen:
                continue
            seen.add(inst.id)
            out.append(inst)
    return out


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def usable_paths(template: PairingTemplate, paths: Sequence[ReasoningPath]) -> tuple[int, ...]:
    return tuple(i for i, p in enumerate(paths) if p.pairing_slot == template.pairing_slot)


def match_trees(
    templates: Sequence[PairingTemplate],
    trees: Iterable[tuple[ReasoningTree, Sequence[ReasoningPath]]],
    instances: Sequence[QAInstance] | None = None,
) -> list[Pairing]:
    """One Pairing per (template, tree) whose anchor skill matches and that offers a usable path."""
    if instances is not None:
        ids = {i.id for i in instances}
        for t in templates:
            if t.qa_id not in ids:
                raise PairingError(f"template {t.id} references unknown qa_id {t.qa_id!r}")
    by_skill: dict[str, list[PairingTemplate]] = defaultdict(list)
    for t in templates:
        by_skill[t.skill].append(t)
    out = []
    for tree, paths in trees:
        for t in by_skill.get(tree.anchor_skill, ()):
            usable = usable_paths(t, paths)
            if usable:
                out.append(Pairing(t.qa_id, t.id, tree.tree_id, usable))
    return out


def instances_by_id(instances: Iterable[QAInstance]) -> Mapping[str, QAInstance]:
    return {i.id: i for i in instances}


_TERM_RE = re.compile(r"\[([^\[\]]+)\]")


def bracketed_terms(text: str) -> list[str]:
    return _TERM_RE.findall(text)


def pairing_surfaces(skill, pairing_term: str, pairing_slot: str) -> tuple[str, str]:
    """Positive and negative pairing surfaces derived from a skill's own surfaces."""
    if pairing_slot not in SLOTS:
        raise PairingError(f"pairing_slot must be start or end, got {pairing_slot!r}")
    p_slot = skill.start_slot if pairing_slot == "start" else skill.end_slot
    a_slot = skill.end_slot if pairing_slot == "start" else skill.start_slot
    fill = {p_slot: f"[{pairing_term}]", a_slot: "{A}"}
    return skill.surface_positive.format(**fill), skill.surface_negative.format(**fill)
