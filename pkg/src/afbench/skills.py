"""Reasoning skills, the reduction matrix, and template reduction.

A template instance is written ``skill(start, end)`` over the KB relation's
argument order. Two templates that share exactly one variable ``y`` fall into
one of four permutation cases according to where ``y`` sits::

    GT     row(x, y) & col(z, y)  =>  result(x, z)
    RIGHT  row(x, y) & col(y, z)  =>  result(x, z)
    LEFT   row(y, x) & col(z, y)  =>  result(z, x)
    LT     row(y, x) & col(y, z)  =>  result(x, z)

``x`` is always the row template's outer variable and ``z`` the column's.
"""

from __future__ import annotations

import enum
import re
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid skill or reduction config; the message names the offending entry."""


class StructuralError(ValueError):
    """Templates that do not share exactly one variable."""


_SLOT_RE = re.compile(r"\{([A-Za-z]+)\}")
_RELATION_RE = re.compile(r"^(/r/)?[A-Z][A-Za-z]*$")


class PermCase(enum.Enum):
    GT = ">"
    RIGHT = "→"
    LEFT = "←"
    LT = "<"

    @classmethod
    def parse(cls, value: str) -> "PermCase":
        for case in cls:
            if value in (case.name, case.value):
                return case
        raise ConfigError(f"unknown permutation case {value!r}")

    @classmethod
    def from_positions(cls, shared_is_row_end: bool, shared_is_col_end: bool) -> "PermCase":
        if shared_is_row_end:
            return cls.GT if shared_is_col_end else cls.RIGHT
        return cls.LEFT if shared_is_col_end else cls.LT

    @property
    def mirrored(self) -> "PermCase":
        return {PermCase.RIGHT: PermCase.LEFT, PermCase.LEFT: PermCase.RIGHT}.get(self, self)

    @property
    def legend_orientation(self) -> str:
        return "zx" if self is PermCase.LEFT else "xz"


@dataclass(frozen=True)
class Skill:
    name: str
    kb_relation: str
    surface_positive: str
    surface_negative: str
    start_slot: str = "X"
    template: str = ""
    definition: str = ""
    display: str = ""

    @property
    def end_slot(self) -> str:
        return "Y" if self.start_slot == "X" else "X"

    def surface(self, positive: bool) -> str:
        return self.surface_positive if positive else self.surface_negative

    def fill(self, start: str, end: str, positive: bool = True) -> str:
        """Surface text with bracketed terms, start/end mapped through the slot convention."""
        slots = {self.start_slot: f"[{start}]", self.end_slot: f"[{end}]"}
        return self.surface(positive).format(**slots)


@dataclass(frozen=True)
class SkillTable:
    skills: tuple[Skill, ...]
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {s.name: s for s in self.skills})
        object.__setattr__(self, "_by_relation", {s.kb_relation: s for s in self.skills})

    def __getitem__(self, name: str) -> Skill:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown skill {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __iter__(self):
        return iter(self.skills)

    def __len__(self) -> int:
        return len(self.skills)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.skills)

    @property
    def relations(self) -> frozenset[str]:
        return frozenset(self._by_relation)

    def by_relation(self, relation: str) -> Skill:
        return self._by_relation[relation]

    def subset(self, names: Iterable[str]) -> "SkillTable":
        keep = set(names)
        return SkillTable(tuple(s for s in self.skills if s.name in keep), self.version)


@dataclass(frozen=True)
class ReductionRule:
    row_skill: str
    col_skill: str
    case: PermCase
    result: str | None
    result_orientation: str = "xz"

    def __post_init__(self):
        if self.result_orientation not in ("xz", "zx"):
            raise ConfigError(f"orientation must be 'xz' or 'zx', got {self.result_orientation!r}")


class RuleTable(Mapping):
    """Lookup ``(row, col, case) -> ReductionRule``."""

    def __init__(self, rules: Iterable[ReductionRule] = ()):
        self._rules: dict[tuple[str, str, PermCase], ReductionRule] = {}
        for r in rules:
            self._rules[(r.row_skill, r.col_skill, r.case)] = r

    def __getitem__(self, key):
        return self._rules[key]

    def __iter__(self):
        return iter(self._rules)

    def __len__(self):
        return len(self._rules)

    def lookup(self, row: str, col: str, case: PermCase) -> ReductionRule | None:
        return self._rules.get((row, col, case))

    def rules(self) -> list[ReductionRule]:
        return list(self._rules.values())


@dataclass(frozen=True)
class VirtualTemplate:
    skill: str
    start_var: Hashable
    end_var: Hashable

    def __post_init__(self):
        if self.start_var == self.end_var:
            raise StructuralError(f"template {self.skill} relates {self.start_var!r} to itself")

    @property
    def variables(self) -> tuple[Hashable, Hashable]:
        return (self.start_var, self.end_var)

    def other(self, var: Hashable) -> Hashable:
        if var == self.start_var:
            return self.end_var
        if var == self.end_var:
            return self.start_var
        raise StructuralError(f"{var!r} is not a variable of {self}")


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _read_document(config) -> dict:
    if isinstance(config, Mapping):
        return dict(config)
    path = Path(config)
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return doc


def _bundled(name: str) -> dict:
    text = resources.files("afbench.data").joinpath(name).read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _check_surface(text: str, where: str) -> None:
    slots = _SLOT_RE.findall(text)
    if sorted(slots) != ["X", "Y"]:
        raise ConfigError(f"{where}: surface {text!r} must contain {{X}} and {{Y}} exactly once each")
    if "[" in text or "]" in text:
        raise ConfigError(f"{where}: surface {text!r} may not contain square brackets")


def load_skill_table(config=None) -> SkillTable:
    """Load and validate a skill table; ``None`` loads the bundled six-skill default."""
    doc = _bundled("skills.yaml") if config is None else _read_document(config)
    entries = doc.get("skills")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("skill config must declare at least one skill under 'skills'")
    seen: set[str] = set()
    relations: set[str] = set()
    skills = []
    for i, entry in enumerate(entries):
        where = f"skills[{i}]"
        if not isinstance(entry, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        missing = [k for k in ("name", "kb_relation", "surface_positive", "surface_negative") if k not in entry]
        if missing:
            raise ConfigError(f"{where}: missing field(s) {', '.join(missing)}")
        name = str(entry["name"])
        where = f"skills[{i}] ({name})"
        if name in seen:
            raise ConfigError(f"{where}: duplicate skill name")
        rel = str(entry["kb_relation"])
        if not _RELATION_RE.match(rel):
            raise ConfigError(f"{where}: kb_relation {rel!r} is not a relation name like 'AtLocation'")
        rel = rel.removeprefix("/r/")
        if rel in relations:
            raise ConfigError(f"{where}: kb_relation {rel} already bound to another skill")
        start_slot = str(entry.get("start_slot", "X"))
        if start_slot not in ("X", "Y"):
            raise ConfigError(f"{where}: start_slot must be X or Y")
        _check_surface(entry["surface_positive"], where)
        _check_surface(entry["surface_negative"], where)
        if entry.get("template"):
            _check_surface(entry["template"], where)
        seen.add(name)
        relations.add(rel)
        skills.append(Skill(
            name=name, kb_relation=rel,
            surface_positive=entry["surface_positive"], surface_negative=entry["surface_negative"],
            start_slot=start_slot, template=entry.get("template", ""),
            definition=entry.get("definition", ""), display=entry.get("display", ""),
        ))
    return SkillTable(tuple(skills), int(doc.get("version", 1)))


def load_reduction_matrix(config=None, skills: SkillTable | None = None, *, strict: bool = True) -> RuleTable:
    """Load the reduction matrix; ``None`` loads the bundled default.

    Entries naming unknown row/column skills always raise. A result outside
    the skill set raises in strict mode and is kept (for
    :func:`check_closure` to report) otherwise.
    """
    skills = skills if skills is not None else load_skill_table()
    doc = _bundled("reduction_matrix.yaml") if config is None else _read_document(config)
    entries = doc.get("rules", [])
    mirror = bool(doc.get("mirror", True))
    table: dict[tuple[str, str, PermCase], ReductionRule] = {}

    def put(rule: ReductionRule, where: str):
        key = (rule.row_skill, rule.col_skill, rule.case)
        old = table.get(key)
        if old is not None and old != rule:
            raise ConfigError(f"{where}: conflicts with existing entry {old}")
        table[key] = rule

    for i, entry in enumerate(entries):
        where = f"rules[{i}]"
        if isinstance(entry, Mapping):
            row, col, case, result = entry.get("row"), entry.get("col"), entry.get("case"), entry.get("result")
            orientation = entry.get("orientation")
        elif isinstance(entry, Sequence) and len(entry) in (4, 5):
            row, col, case, result = entry[:4]
            orientation = entry[4] if len(entry) == 5 else None
        else:
            raise ConfigError(f"{where}: expected [row, col, case, result] or a mapping")
        for label, name in (("row", row), ("col", col)):
            if name not in skills:
                raise ConfigError(f"{where}: unknown {label} skill {name!r}")
        case = PermCase.parse(str(case))
        if result is not None and result not in skills and strict:
            raise ConfigError(f"{where}: result {result!r} is not in the skill set (closure)")
        rule = ReductionRule(row, col, case, result, orientation or case.legend_orientation)
        put(rule, where)
        if mirror:
            twin = ReductionRule(col, row, case.mirrored, result, "zx" if rule.result_orientation == "xz" else "xz")
            if (twin.row_skill, twin.col_skill, twin.case) != (row, col, case):
                put(twin, f"{where} (mirror)")
    return RuleTable(table.values())


def check_closure(rules: RuleTable, skills: SkillTable) -> list[str]:
    """Entries whose result is not a skill of ``skills``; empty means closed."""
    return [
        f"{r.row_skill} x {r.col_skill} [{r.case.name}] -> {r.result!r}"
        for r in rules.rules()
        if r.result is not None and r.result not in skills
    ]


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------

def classify(a: VirtualTemplate, b: VirtualTemplate):
    """Return ``(case, shared, x, z)`` for two templates sharing exactly one variable."""
    shared = set(a.variables) & set(b.variables)
    if len(shared) != 1:
        raise StructuralError(f"{a} and {b} share {len(shared)} variables; exactly one is required")
    (y,) = shared
    case = PermCase.from_positions(a.end_var == y, b.end_var == y)
    return case, y, a.other(y), b.other(y)


def reduce_pair(a: VirtualTemplate, b: VirtualTemplate, rules: RuleTable) -> VirtualTemplate | None:
    """Reduce two templates sharing one variable, or ``None`` if no rule applies."""
    case, _, x, z = classify(a, b)
    rule = rules.lookup(a.skill, b.skill, case)
    if rule is None or rule.result is None:
        return None
    if rule.result_orientation == "xz":
        return VirtualTemplate(rule.result, x, z)
    return VirtualTemplate(rule.result, z, x)


def reduce_path(templates: Sequence[VirtualTemplate], rules: RuleTable) -> VirtualTemplate | None:
    """Left fold of :func:`reduce_pair` starting at ``templates[0]`` (the anchor)."""
    if not templates:
        raise StructuralError("reduce_path needs at least one template")
    acc = templates[0]
    for t in templates[1:]:
        acc = reduce_pair(acc, t, rules)
        if acc is None:
            return None
    return acc


def default_tables() -> tuple[SkillTable, RuleTable]:
    skills = load_skill_table()
    return skills, load_reduction_matrix(None, skills)
