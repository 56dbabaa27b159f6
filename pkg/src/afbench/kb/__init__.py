from .ingest import IngestConfig, IngestReport, MalformedLine, ingest_kb
from .normalize import normalize_term
from .store import (
    END,
    START,
    Assertion,
    AssertionStore,
    EmptyStore,
    KBError,
    UnknownRelation,
    intersect_candidates,
    query_anti_factual,
)

__all__ = [
    "END", "START", "Assertion", "AssertionStore", "EmptyStore", "IngestConfig",
    "IngestReport", "KBError", "MalformedLine", "UnknownRelation", "ingest_kb",
    "intersect_candidates", "normalize_term", "query_anti_factual",
]
