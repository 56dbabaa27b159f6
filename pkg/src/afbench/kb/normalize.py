"""Term and relation normalization for KB dumps."""

from __future__ import annotations

import re

_WS = re.compile(r"\s+")
# brackets are reserved for rendered statements
_RESERVED = str.maketrans({"[": " ", "]": " ", "_": " "})


def normalize_term(raw: str) -> str:
    """Lowercase, underscores to spaces, collapse whitespace.

    ConceptNet URIs (``/c/en/music_store/n/...``) are reduced to their term
    segment first.

    >>> normalize_term("/c/en/Music_Store/n")
    'music store'
    >>> normalize_term("  the   Planet ")
    'the planet'
    """
    if raw.startswith("/c/"):
        parts = raw.split("/")
        raw = parts[3] if len(parts) > 3 else ""
    return _WS.sub(" ", raw.translate(_RESERVED)).strip().lower()


def term_language(uri: str) -> str | None:
    """Language tag of a ConceptNet concept URI, or None for non-concept strings."""
    if not uri.startswith("/c/"):
        return None
    parts = uri.split("/")
    return parts[2] if len(parts) > 2 and parts[2] else None


def relation_name(raw: str) -> str:
    """``/r/AtLocation`` -> ``AtLocation``; plain names pass through."""
    if raw.startswith("/r/"):
        return raw[3:].split("/", 1)[0]
    return raw.strip()
