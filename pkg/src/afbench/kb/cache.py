"""Binary store cache.

Layout: 8-byte magic ``b"AFKBSTOR"``, one version byte, 32-byte SHA-256 key
(dump checksum mixed with the ingest fingerprint), then an ``.npz`` payload
holding the vocabulary and per-relation (start, end, weight) arrays.
"""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .store import AssertionStore, KBError

MAGIC = b"AFKBSTOR"
VERSION = 1


class CacheError(KBError):
    pass


def file_sha256(path: str | Path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while block := fh.read(chunk):
            h.update(block)
    return h.hexdigest()


def cache_key(dump_checksum: str, fingerprint: str) -> bytes:
    return hashlib.sha256(f"{dump_checksum}\n{fingerprint}".encode()).digest()


def save_store(store: AssertionStore, path: str | Path, key: bytes) -> None:
    if len(key) != 32:
        raise ValueError("cache key must be 32 bytes")
    payload = {"vocab": np.asarray(store.vocab, dtype=object).astype(str)}
    rels = []
    for i, rel in enumerate(store.relations):
        ix = store.index(rel)
        payload[f"s{i}"] = np.asarray(ix.starts)
        payload[f"e{i}"] = np.asarray(ix.ends)
        payload[f"w{i}"] = np.asarray(ix.weights)
        rels.append(rel)
    payload["relations"] = np.asarray(json.dumps(rels))
    buf = io.BytesIO()
    np.savez(buf, **payload)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(key)
        fh.write(buf.getvalue())
    tmp.replace(path)


def read_key(path: str | Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 1 + 32)
    _check_header(head, path)
    return head[len(MAGIC) + 1 :]


def _check_header(head: bytes, path) -> None:
    if len(head) < len(MAGIC) + 33 or head[: len(MAGIC)] != MAGIC:
        raise CacheError(f"{path}: not a store cache (bad magic)")
    if head[len(MAGIC)] != VERSION:
        raise CacheError(f"{path}: unsupported cache version {head[len(MAGIC)]}")


def load_store(path: str | Path, key: bytes | None = None) -> AssertionStore:
    data = Path(path).read_bytes()
    _check_header(data[: len(MAGIC) + 33], path)
    stored_key = data[len(MAGIC) + 1 : len(MAGIC) + 33]
    if key is not None and stored_key != key:
        raise CacheError(f"{path}: cache key mismatch (dump or ingest settings changed)")
    with np.load(io.BytesIO(data[len(MAGIC) + 33 :]), allow_pickle=False) as npz:
        vocab = [str(t) for t in npz["vocab"]]
        rels = json.loads(str(npz["relations"]))
        arrays = {rel: (npz[f"s{i}"], npz[f"e{i}"], npz[f"w{i}"]) for i, rel in enumerate(rels)}
    return AssertionStore.from_arrays(vocab, arrays, relations=rels)
