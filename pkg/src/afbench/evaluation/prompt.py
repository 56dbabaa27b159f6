"""Prompt rendering and answer extraction."""

from __future__ import annotations

import re
from collections.abc import Sequence
from string import ascii_uppercase

from ..assembler import BenchmarkItem

ABSTAIN = -1


def render_prompt(item: BenchmarkItem) -> str:
    """Instruction, statements, question, lettered choices, in that order."""
    parts = [f"Instruction:\n{item.instruction}"]
    if item.statements:
        parts.append("Statements:\n" + "\n".join(s.text for s in item.statements))
    parts.append(f"Question:\n{item.question}")
    parts.append("Answer choices:\n" + "\n".join(f"{ascii_uppercase[i]}: {c}" for i, c in enumerate(item.choices)))
    return "\n\n".join(parts)


def _letter_hits(text: str, valid: str) -> set[int]:
    # a letter counts when it stands alone: "C", "C:", "(C)", "C.", "answer: C"
    hits = set()
    for m in re.finditer(r"(?<![A-Za-z0-9'])([A-Za-z])(?![A-Za-z0-9'])", text):
        ch = m.group(1)
        if ch.upper() not in valid:
            continue
        nxt = text[m.end():m.end() + 1]
        prev = text[max(0, m.start() - 1):m.start()]
        if ch.islower() and not (prev in "(" and nxt in ")") and nxt not in ":)":
            # lowercase "a" is usually the article; accept only in (a) or a: / a) form
            continue
        hits.add(valid.index(ch.upper()))
    return hits


def extract_answer(response: str, choices: Sequence[str]) -> int:
    """Map a free-text response to a choice index, or :data:`ABSTAIN`.

    1. Standalone letter tokens ("C", "C:", "(C)"). One distinct letter wins;
       several distinct letters are ambiguous and abstain.
    2. Otherwise, case-insensitive whole-phrase occurrences of the choice
       texts; a unique match wins (a choice contained in a longer matched
       choice is ignored).
    3. Otherwise abstain.
    """
    if not response:
        return ABSTAIN
    valid = ascii_uppercase[: len(choices)]
    hits = _letter_hits(response, valid)
    if len(hits) == 1:
        return hits.pop()
    if len(hits) > 1:
        return ABSTAIN
    low = response.lower()
    found = [
        i for i, c in enumerate(choices)
        if re.search(r"(?<![a-z0-9])" + re.escape(c.lower()) + r"(?![a-z0-9])", low)
    ]
    found = [i for i in found if not any(j != i and choices[i].lower() in choices[j].lower() for j in found)]
    return found[0] if len(found) == 1 else ABSTAIN
