"""Pipeline configuration."""

from __future__ import annotations

import json
import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .assembler import BOTH, ENUMERATE_ALL, SAMPLE_ONE, VariantPlan
from .grounder import DEFAULT_MAX_EXPANSIONS, METRICS
from .skills import ConfigError
from .trees import DEFAULT_MAX_SIZE

CONFIG_VERSION = 1


@dataclass(frozen=True)
class Paths:
    kb: Path | None = None
    qa: Path | None = None
    pairings: Path | None = None
    skills: Path | None = None
    reduction_matrix: Path | None = None
    out: Path = Path("out")


@dataclass(frozen=True)
class EvalConfig:
    mock: str | None = None
    endpoint: str | None = None
    model: str | None = None
    concurrency: int = 4
    timeout: float = 60.0
    retries: int = 3

    @property
    def enabled(self) -> bool:
        return bool(self.mock or self.endpoint)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    language: str = "en"
    min_weight: float = 0.0
    kb_format: str = "auto"
    sizes: tuple[int, ...] = (1, 2, 3, 4, 5)
    max_size: int = DEFAULT_MAX_SIZE
    materialize_max_size: int = 3
    quota: int = 13
    balance: bool = True
    blocklist: tuple[str, ...] = ()
    subsample: bool = True
    beam_k: int = 1
    metric: str = "uniform"
    max_expansions: int = DEFAULT_MAX_EXPANSIONS
    variants: VariantPlan = field(default_factory=VariantPlan)
    baseline: bool = True
    instruction: str | None = None
    strict: bool = False
    jobs: int = 1
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "PipelineConfig":
        if not self.sizes:
            raise ConfigError("sizes must list at least one tree size")
        for t in self.sizes:
            if not 1 <= t <= self.max_size:
                raise ConfigError(f"tree size {t} outside 1..{self.max_size}")
        if self.quota < 1:
            raise ConfigError("quota must be >= 1")
        if self.beam_k < 1:
            raise ConfigError("beam_k must be >= 1")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.evaluation.mock not in (None, "oracle", "parrot", "random"):
            raise ConfigError(f"unknown mock {self.evaluation.mock!r}")
        return self

    def fingerprint(self) -> str:
        """Hash of every setting that affects generated content."""
        d = asdict(self)
        for k in ("jobs", "strict", "evaluation", "paths"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        ev = {k: kw.pop(k) for k in ("mock", "endpoint", "model", "concurrency") if k in kw}
        cfg = replace(self, **kw)
        if ev:
            cfg = replace(cfg, evaluation=replace(cfg.evaluation, **ev))
        return cfg.validate()


def _path(base: Path, value) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Read a YAML config; relative paths resolve against the config file's directory."""
    if path is None:
        doc, base = {}, Path.cwd()
    else:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = path.resolve().parent
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    known = {"version", "seed", "paths", "ingest", "trees", "pairing", "subsample", "grounding",
             "variants", "instruction", "evaluation", "jobs", "strict"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    p = doc.get("paths") or {}
    paths = Paths(
        kb=_path(base, p.get("kb")), qa=_path(base, p.get("qa")), pairings=_path(base, p.get("pairings")),
        skills=_path(base, p.get("skills")), reduction_matrix=_path(base, p.get("reduction_matrix")),
        out=_path(base, p.get("out", "out")),
    )
    ing = doc.get("ingest") or {}
    trees = doc.get("trees") or {}
    pairing = doc.get("pairing") or {}
    grounding = doc.get("grounding") or {}
    variants = doc.get("variants") or {}
    ev = doc.get("evaluation") or {}
    sub = doc.get("subsample", True)
    try:
        cfg = PipelineConfig(
            seed=int(doc.get("seed", 0)),
            paths=paths,
            language=ing.get("language", "en"),
            min_weight=float(ing.get("min_weight", 0.0)),
            kb_format=ing.get("format", "auto"),
            sizes=tuple(int(t) for t in trees.get("sizes", (1, 2, 3, 4, 5))),
            max_size=int(trees.get("max_size", DEFAULT_MAX_SIZE)),
            materialize_max_size=int(trees.get("materialize_max_size", 3)),
            quota=int(pairing.get("quota", 13)),
            balance=bool(pairing.get("balance", True)),
            blocklist=tuple(str(x) for x in pairing.get("blocklist", ()) or ()),
            subsample=bool(sub.get("enabled", True) if isinstance(sub, dict) else sub),
            beam_k=int(grounding.get("beam_k", 1)),
            metric=str(grounding.get("metric", "uniform")),
            max_expansions=int(grounding.get("max_expansions", DEFAULT_MAX_EXPANSIONS)),
            variants=VariantPlan(variants.get("mode", BOTH), variants.get("target_policy", SAMPLE_ONE)),
            baseline=bool(variants.get("baseline", True)),
            instruction=doc.get("instruction"),
            strict=bool(doc.get("strict", False)),
            jobs=int(doc.get("jobs", 1)),
            evaluation=EvalConfig(
                mock=ev.get("mock"), endpoint=ev.get("endpoint"), model=ev.get("model"),
                concurrency=int(ev.get("concurrency", 4)), timeout=float(ev.get("timeout", 60.0)),
                retries=int(ev.get("retries", 3)),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    out_override = overrides.pop("out", None)
    if out_override is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, out=Path(out_override)))
    return cfg.with_overrides(**overrides)


__all__ = ["ENUMERATE_ALL", "EvalConfig", "Paths", "PipelineConfig", "load_config"]
