"""Batch evaluation with bounded concurrency."""

from __future__ import annotations

import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from ..assembler import BenchmarkItem
from .clients import ClientConfigError, ModelClient
from .prompt import ABSTAIN, extract_answer

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EvalRecord:
    item_id: str
    model_id: str
    response: str
    extracted: int
    correct: bool
    latency: float
    error: str | None = None

    def to_record(self, *, with_latency: bool = True) -> dict:
        rec = asdict(self)
        rec["schema_version"] = SCHEMA_VERSION
        if not with_latency:
            rec.pop("latency")
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "EvalRecord":
        return cls(rec["item_id"], rec["model_id"], rec["response"], int(rec["extracted"]),
                   bool(rec["correct"]), float(rec.get("latency", 0.0)), rec.get("error"))


def score(item: BenchmarkItem, model_id: str, response: str, latency: float = 0.0, error: str | None = None) -> EvalRecord:
    extracted = extract_answer(response, item.choices) if error is None else ABSTAIN
    return EvalRecord(item.id, model_id, response, extracted, extracted == item.gold_index, latency, error)


def run_eval(items: Sequence[BenchmarkItem], client: ModelClient, *, concurrency: int = 4) -> list[EvalRecord]:
    """One record per item, in item order.

    Per-item failures become ABSTAIN records carrying the error text;
    configuration errors propagate and stop the batch.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")

    def one(item: BenchmarkItem) -> EvalRecord:
        t0 = time.perf_counter()
        try:
            response = client.complete(item)
        except ClientConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded, never fatal
            return score(item, client.model_id, "", time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        return score(item, client.model_id, response, time.perf_counter() - t0)

    if concurrency == 1 or len(items) <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, items))
