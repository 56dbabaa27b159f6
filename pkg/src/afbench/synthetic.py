"""Synthetic knowledge bases and QA suites for tests, benchmarks, and demos."""

from __future__ import annotations

import itertools
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .io import write_jsonl

from .pairing import PairingTemplate, QAInstance, pairing_surfaces
from .skills import SkillTable

ADJECTIVES = (
    "amber", "brisk", "copper", "dusty", "eager", "faded", "gilded", "hollow", "ivory", "jagged",
    "kindly", "lunar", "mossy", "nimble", "olive", "pale", "quiet", "rusty", "silver", "tidal",
    "umber", "velvet", "woolen", "young",
)
NOUNS = (
    "anchor", "basket", "candle", "drum", "engine", "feather", "garden", "harbor", "island", "jacket",
    "kettle", "lantern", "mirror", "needle", "orchard", "pillow", "quarry", "river", "saddle", "tower",
    "umbrella", "violin", "wagon", "yarn",
)
PLACES = (
    "the planet", "the market", "the valley", "the castle", "the desert", "the library", "the station",
    "the meadow", "the cellar", "the glacier", "the workshop", "the lagoon",
)


def vocabulary(size: int, start: int = 0) -> list[str]:
    """Readable two-word terms; sizes beyond the word lists get a numeric suffix."""
    base = [f"{a} {n}" for a, n in itertools.product(ADJECTIVES, NOUNS)]
    out = []
    for i in range(start, start + size):
        word = base[i % len(base)]
        out.append(word if i < len(base) else f"{word} {i // len(base)}")
    return out


def make_kb_lines(relations, n_terms: int = 240, per_relation: int = 250, seed: int = 0) -> list[str]:
    """Synthetic-format lines (relation, start, end) over a shared vocabulary."""
    rng = np.random.default_rng(seed)
    vocab = vocabulary(n_terms)
    lines = ["# synthetic knowledge base", f"# seed={seed} terms={n_terms} per_relation={per_relation}"]
    for rel in relations:
        pairs = set()
        while len(pairs) < per_relation:
            s, e = rng.integers(n_terms, size=2)
            if s != e:
                pairs.add((int(s), int(e)))
        for s, e in sorted(pairs):
            lines.append(f"{rel}\t{vocab[s]}\t{vocab[e]}")
    return lines


def iter_dump_lines(n: int, relations, n_terms: int = 50_000, seed: int = 0, chunk: int = 100_000) -> Iterator[str]:
    """A large synthetic dump with weights, generated in chunks."""
    rng = np.random.default_rng(seed)
    rels = list(relations)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        r = rng.integers(len(rels), size=m)
        s = rng.integers(n_terms, size=m)
        e = rng.integers(n_terms, size=m)
        w = rng.random(m).round(3)
        for i in range(m):
            yield f"{rels[r[i]]}\tterm {s[i]}\tterm {e[i]}\t{w[i]}"
        done += m


@dataclass(frozen=True)
class SyntheticSuite:
    kb_lines: list[str]
    instances: list[QAInstance]
    templates: list[PairingTemplate]


def make_suite(skills: SkillTable, n_instances: int = 36, Q: int = 5, seed: int = 0,
               n_terms: int = 240, per_relation: int = 250) -> SyntheticSuite:
    """A KB plus QA instances with one pairing template each, cycling through every skill and slot."""
    rng = np.random.default_rng(seed + 1)
    kb = make_kb_lines([s.kb_relation for s in skills], n_terms, per_relation, seed)
    vocab = vocabulary(n_terms)
    instances, templates = [], []
    names = list(skills.names)
    for i in range(n_instances):
        skill = skills[names[i % len(names)]]
        slot = ("end", "start")[(i // len(names)) % 2]
        term = PLACES[i % len(PLACES)]
        choices = tuple(vocab[j] for j in rng.choice(n_terms, size=Q, replace=False))
        qa_id = f"syn-{i:04d}"
        concept = vocab[int(rng.integers(n_terms))]
        instances.append(QAInstance(
            qa_id, f"Which of these relates to {term} by {skill.name.replace('_', ' ')}?",
            choices, int(rng.integers(Q)), concept, skill.kb_relation,
        ))
        pos, neg = pairing_surfaces(skill, term, slot)
        templates.append(PairingTemplate(f"{qa_id}/p1", qa_id, skill.name, term, slot, pos, neg))
    return SyntheticSuite(kb, instances, templates)


def write_suite(suite: SyntheticSuite, directory: str | Path, **config) -> Path:
    """Write a suite as pipeline inputs plus a ``config.yaml``; returns the config path.

    Keyword arguments are merged into the config mapping (top-level sections
    such as ``seed``, ``trees`` or ``variants``).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "kb.tsv").write_text("\n".join(suite.kb_lines) + "\n", encoding="utf-8")
    write_jsonl(d / "qa.jsonl", (i.to_record() for i in suite.instances))
    doc = {"version": 1, "templates": [t.to_record() for t in suite.templates]}
    (d / "pairings.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    cfg = {"version": 1, "seed": 0, "paths": {"kb": "kb.tsv", "qa": "qa.jsonl", "pairings": "pairings.yaml", "out": "out"}}
    cfg.update(config)
    path = d / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return path
