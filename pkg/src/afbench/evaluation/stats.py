"""Stratified accuracy with per-pairing aggregation and Wald standard errors."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from ..assembler import BenchmarkItem
from .prompt import ABSTAIN
from .runner import EvalRecord

KINDS = ("variant", "variant_n", "variant_d", "variant_n_d")
STRATA_FIELDS = ("kind", "variant", "n", "d", "p", "wald_se", "item_se", "n_items", "n_pairings", "abstain_rate")
PLOT_FIELDS = ("panel", "series", "x", "y", "se")


def wald_se(p: float, n: int) -> float:
    """sqrt(p (1 - p) / n)."""
    if n <= 0:
        raise ValueError("Wald SE needs n > 0")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class StratumStats:
    kind: str
    variant: str
    n: int | None
    d: int | None
    per_pairing: tuple[float, ...]
    p: float
    wald_se: float
    item_se: float
    n_items: int
    abstain_rate: float

    @property
    def n_pairings(self) -> int:
        return len(self.per_pairing)

    @property
    def key(self) -> tuple:
        return (self.kind, self.variant, self.n, self.d)


def _key(kind: str, md: Mapping) -> tuple:
    v, n, d = md["variant"], md["n"], md["d"]
    return {
        "variant": (kind, v, None, None),
        "variant_n": (kind, v, n, None),
        "variant_d": (kind, v, None, d),
        "variant_n_d": (kind, v, n, d),
    }[kind]


def stratify(records: Sequence[EvalRecord], items: Iterable[BenchmarkItem]) -> list[StratumStats]:
    """Accuracy per stratum: mean over pairings of per-pairing accuracy.

    ABSTAIN counts as incorrect. ``wald_se`` uses the number of pairings in
    the stratum; ``item_se`` is the plain binomial SE over items.
    """
    by_id = {it.id: it for it in items}
    # stratum -> pairing -> [correct, total]
    acc: dict[tuple, dict[str, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    abstain: dict[tuple, int] = defaultdict(int)
    for rec in records:
        item = by_id.get(rec.item_id)
        if item is None:
            raise KeyError(f"record for unknown item {rec.item_id!r}")
        md = item.metadata
        for kind in KINDS:
            key = _key(kind, md)
            cell = acc[key][md["pairing_id"]]
            cell[0] += int(rec.correct)
            cell[1] += 1
            abstain[key] += int(rec.extracted == ABSTAIN)
    out = []
    order = {k: i for i, k in enumerate(KINDS)}
    for key in sorted(acc, key=lambda k: (order[k[0]], k[1], -1 if k[2] is None else k[2], -1 if k[3] is None else k[3])):
        pairs = acc[key]
        per = tuple(c / t for c, t in (pairs[p] for p in sorted(pairs)))
        p = sum(per) / len(per)
        n_items = sum(t for _, t in pairs.values())
        raw = sum(c for c, _ in pairs.values()) / n_items
        out.append(StratumStats(key[0], key[1], key[2], key[3], per, p, wald_se(min(max(p, 0.0), 1.0), len(per)),
                                wald_se(raw, n_items), n_items, abstain[key] / n_items))
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_report(stats: Sequence[StratumStats], destination: str | Path, formats: Iterable[str] = ("table", "plotdata")) -> list[Path]:
    """Write ``strata.csv`` and/or ``plotdata.csv`` under ``destination``.

    The plot data has three panels: accuracy against hops (one series per
    variant), against distractors (one series per variant), and against
    distractors for each (variant, hops) series.
    """
    if not stats:
        raise ValueError("no strata to report")
    dest = Path(destination)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        written = []
        formats = set(formats)
        if "table" in formats:
            path = dest / "strata.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(STRATA_FIELDS)
                for s in stats:
                    w.writerow([_fmt(v) for v in (s.kind, s.variant, s.n, s.d, s.p, s.wald_se, s.item_se,
                                                  s.n_items, s.n_pairings, s.abstain_rate)])
            written.append(path)
        if "plotdata" in formats:
            path = dest / "plotdata.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(PLOT_FIELDS)
                for row in plot_rows(stats):
                    w.writerow([_fmt(v) for v in row])
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report under {dest}: {exc}") from exc
    return written


def plot_rows(stats: Sequence[StratumStats]) -> list[tuple]:
    rows = []
    for s in stats:
        if s.kind == "variant_n":
            rows.append(("hops", s.variant, s.n, s.p, s.wald_se))
        elif s.kind == "variant_d":
            rows.append(("distractors", s.variant, s.d, s.p, s.wald_se))
        elif s.kind == "variant_n_d":
            rows.append(("interaction", f"{s.variant}/n={s.n}", s.d, s.p, s.wald_se))
    return rows


def read_plotdata(path: str | Path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != PLOT_FIELDS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(panel, series, int(x), float(y), float(se)) for panel, series, x, y, se in r]
