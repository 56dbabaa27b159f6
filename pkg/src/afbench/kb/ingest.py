"""Streaming ingest of KB dumps into an :class:`AssertionStore`.

Two line formats are accepted:

* ConceptNet 5 assertion CSV: tab-separated ``assertion URI, relation URI,
  start URI, end URI, JSON metadata``; the weight comes from metadata ``weight``.
* Synthetic: tab-separated ``relation, start, end`` with an optional fourth
  weight column; ``#`` starts a comment line.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .normalize import normalize_term, relation_name, term_language
from .store import AssertionStore, EmptyStore, KBError

log = logging.getLogger(__name__)

CONCEPTNET = "conceptnet"
SYNTHETIC = "synthetic"
AUTO = "auto"


class MalformedLine(KBError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


@dataclass(frozen=True)
class IngestConfig:
    relations: frozenset[str]
    language: str = "en"
    format: str = AUTO
    strict: bool = False
    min_weight: float = 0.0

    def __post_init__(self):
        if self.format not in (AUTO, CONCEPTNET, SYNTHETIC):
            raise ValueError(f"unknown dump format {self.format!r}")
        object.__setattr__(self, "relations", frozenset(self.relations))

    def fingerprint(self) -> str:
        return json.dumps(
            {"relations": sorted(self.relations), "language": self.language,
             "format": self.format, "min_weight": self.min_weight},
            sort_keys=True,
        )


@dataclass
class IngestReport:
    lines: int = 0
    accepted: int = 0
    comments: int = 0
    off_language: int = 0
    off_relation: int = 0
    below_weight: int = 0
    duplicates: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "lines": self.lines, "accepted": self.accepted, "comments": self.comments,
            "off_language": self.off_language, "off_relation": self.off_relation,
            "below_weight": self.below_weight, "duplicates": self.duplicates,
            "malformed": [list(m) for m in self.malformed],
        }


def _detect(line: str) -> str:
    fields = line.rstrip("\n").split("\t")
    if len(fields) >= 5 and fields[0].startswith("/a/"):
        return CONCEPTNET
    return SYNTHETIC


def ingest_kb(dump: Iterable[str], config: IngestConfig) -> tuple[AssertionStore, IngestReport]:
    """Build a store from dump lines; see the module docstring for formats.

    Malformed lines are recorded in the report and skipped, or raise
    :class:`MalformedLine` when ``config.strict`` is set. An empty result
    raises :class:`EmptyStore`.
    """
    report = IngestReport()
    fmt = None if config.format == AUTO else config.format
    allow = {r: r for r in config.relations}
    lang_prefix = f"/c/{config.language}/"

    term_ids: dict[str, int] = {}
    rel_rows: dict[str, tuple[list[int], list[int], list[float]]] = {r: ([], [], []) for r in sorted(allow)}

    def intern(t: str) -> int:
        i = term_ids.get(t)
        if i is None:
            i = term_ids[t] = len(term_ids)
        return i

    def bad(lineno: int, reason: str):
        if config.strict:
            raise MalformedLine(lineno, reason)
        report.malformed.append((lineno, reason))

    for lineno, line in enumerate(dump, start=1):
        report.lines += 1
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            report.comments += 1
            continue
        if fmt is None:
            fmt = _detect(line)
        fields = line.split("\t")

        if fmt == CONCEPTNET:
            if len(fields) != 5:
                bad(lineno, f"expected 5 tab-separated fields, got {len(fields)}")
                continue
            _, rel_uri, start_uri, end_uri, meta = fields
            if not rel_uri.startswith("/r/") or not start_uri.startswith("/c/") or not end_uri.startswith("/c/"):
                bad(lineno, "relation or concept URI malformed")
                continue
            rel = allow.get(relation_name(rel_uri))
            if rel is None:
                report.off_relation += 1
                continue
            if not (start_uri.startswith(lang_prefix) and end_uri.startswith(lang_prefix)):
                if term_language(start_uri) is None or term_language(end_uri) is None:
                    bad(lineno, "concept URI has no language segment")
                else:
                    report.off_language += 1
                continue
            try:
                weight = float(json.loads(meta).get("weight", 1.0)) if meta else 1.0
            except (ValueError, AttributeError, TypeError):
                bad(lineno, "metadata is not a JSON object with numeric weight")
                continue
            start, end = normalize_term(start_uri), normalize_term(end_uri)
        else:
            if len(fields) not in (3, 4):
                bad(lineno, f"expected 3 or 4 tab-separated fields, got {len(fields)}")
                continue
            rel = allow.get(relation_name(fields[0]))
            if rel is None:
                report.off_relation += 1
                continue
            try:
                weight = float(fields[3]) if len(fields) == 4 else 1.0
            except ValueError:
                bad(lineno, f"weight {fields[3]!r} is not a number")
                continue
            start, end = normalize_term(fields[1]), normalize_term(fields[2])

        if not start or not end:
            bad(lineno, "empty term after normalization")
            continue
        if weight < 0:
            bad(lineno, "negative weight")
            continue
        if weight < config.min_weight:
            report.below_weight += 1
            continue
        s_list, e_list, w_list = rel_rows[rel]
        s_list.append(intern(start))
        e_list.append(intern(end))
        w_list.append(weight)

    raw = sum(len(v[0]) for v in rel_rows.values())
    if raw == 0:
        raise EmptyStore("ingest produced no assertions")

    # reorder provisional ids so that id order equals term order
    provisional = list(term_ids)
    order = sorted(range(len(provisional)), key=provisional.__getitem__)
    vocab = [provisional[i] for i in order]
    remap = np.empty(len(order), dtype=np.int64)
    remap[np.asarray(order, dtype=np.int64)] = np.arange(len(order), dtype=np.int64)

    arrays = {
        rel: (remap[np.asarray(s, dtype=np.int64)], remap[np.asarray(e, dtype=np.int64)], np.asarray(w, dtype=np.float64))
        for rel, (s, e, w) in rel_rows.items()
    }
    store = AssertionStore.from_arrays(vocab, arrays, relations=allow)
    report.accepted = len(store)
    report.duplicates = raw - report.accepted
    if report.malformed:
        log.warning("ingest skipped %d malformed line(s)", len(report.malformed))
    return store, report
