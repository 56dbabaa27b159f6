"""Resumable pipeline stages with manifests.

Each stage reads the previous stages' files under the output directory,
writes its own files plus ``manifest.json`` (input and output checksums,
seed, counts, duration), and is byte-reproducible from those inputs.
"""

from __future__ import annotations

import logging
import time
from collections import Counter, defaultdict
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .assembler import (
    DEFAULT_INSTRUCTION,
    AssemblyError,
    BenchmarkItem,
    assemble_item,
    baseline_item,
    export_items,
    plan_variants,
    verify_soundness,
)
from .config import PipelineConfig
from .evaluation import EvalRecord, HTTPChatClient, RetryPolicy, emit_report, make_mock, run_eval, stratify
from .grounder import GroundingJob, assignment_from_record, assignment_record, ground_all, make_metric
from .io import iter_jsonl, read_json, read_jsonl, sha256_file, write_json, write_jsonl
from .kb import IngestConfig, ingest_kb
from .kb.cache import CacheError, cache_key, file_sha256, load_store, read_key, save_store
from .pairing import (
    annotate_relations,
    balance_by_relation,
    load_pairing_templates,
    load_qa_instances,
    relation_histogram,
)
from .rng import Stream
from .skills import ConfigError, check_closure, load_reduction_matrix, load_skill_table
from .trees import (
    ShapeSampler,
    count_trees,
    find_reasoning_paths,
    iter_trees,
    tree_from_record,
    tree_record,
)

log = logging.getLogger(__name__)

STAGES = ("ingest", "trees", "pair", "subsample", "ground", "assemble", "evaluate", "report")
PREREQUISITES = {
    "ingest": (),
    "trees": (),
    "pair": ("ingest",),
    "subsample": ("pair",),
    "ground": ("ingest", "subsample"),
    "assemble": ("ground",),
    "evaluate": ("assemble",),
    "report": ("evaluate",),
}
MANIFEST_VERSION = 1
MAX_UNSAMPLED_PAIRS = 50_000
# reference asset counts for the full CommonsenseQA build, compared in the run manifest
REPLICATION_TARGETS = {
    "histogram_max": ["AtLocation", 607],
    "histogram_min": ["IsA", 13],
    "instances_balanced": 74,
    "min_trees_per_pairing": 143,
    "total_pairing_trees": 245_514,
    "subsampled": 2_864,
}


class StageError(RuntimeError):
    """A stage could not run or failed."""


class SoundnessGateError(StageError):
    """Emitted items failed the exactly-one-implied check."""


@dataclass
class Context:
    cfg: PipelineConfig

    def __post_init__(self):
        try:
            self.skills = load_skill_table(self.cfg.paths.skills)
            self.rules = load_reduction_matrix(self.cfg.paths.reduction_matrix, self.skills, strict=True)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        problems = check_closure(self.rules, self.skills)
        if problems:
            raise ConfigError("reduction matrix is not closed: " + "; ".join(problems))

    @property
    def out(self) -> Path:
        return Path(self.cfg.paths.out)

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    def manifest_path(self, stage: str) -> Path:
        return self.stage_dir(stage) / "manifest.json"

    def require(self, stage: str) -> None:
        for pre in PREREQUISITES[stage]:
            if not self.manifest_path(pre).exists():
                raise StageError(f"stage '{stage}' needs the outputs of stage '{pre}'; run '{pre}' first")

    def input_file(self, label: str, path: Path | None) -> Path:
        if path is None:
            raise ConfigError(f"config does not set paths.{label}")
        if not Path(path).exists():
            raise ConfigError(f"paths.{label} does not exist: {path}")
        return Path(path)


def _manifest(ctx: Context, stage: str, inputs: dict[str, Path], outputs: list[Path], counts: dict,
              started: float, extra: dict | None = None) -> dict:
    out_dir = ctx.stage_dir(stage)
    m = {
        "schema_version": MANIFEST_VERSION,
        "stage": stage,
        "tool_version": __version__,
        "seed": ctx.cfg.seed,
        "config_fingerprint": ctx.cfg.fingerprint(),
        "inputs": {k: sha256_file(v) for k, v in sorted(inputs.items())},
        "outputs": {str(p.relative_to(out_dir)): sha256_file(p) for p in sorted(outputs)},
        "counts": counts,
        "duration_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        m.update(extra)
    write_json(ctx.manifest_path(stage), m)
    return m


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_ingest(ctx: Context) -> dict:
    t0 = time.perf_counter()
    kb = ctx.input_file("kb", ctx.cfg.paths.kb)
    icfg = IngestConfig(ctx.skills.relations, ctx.cfg.language, ctx.cfg.kb_format, ctx.cfg.strict, ctx.cfg.min_weight)
    key = cache_key(file_sha256(kb), icfg.fingerprint())
    d = ctx.stage_dir("ingest")
    d.mkdir(parents=True, exist_ok=True)
    cache, report_path = d / "store.afkb", d / "report.json"
    reused = False
    if cache.exists() and report_path.exists():
        try:
            reused = read_key(cache) == key
        except CacheError:
            reused = False
    if reused:
        report = read_json(report_path)
        store = load_store(cache, key)
    else:
        with open(kb, encoding="utf-8") as fh:
            store, rep = ingest_kb(fh, icfg)
        report = rep.as_dict()
        save_store(store, cache, key)
        write_json(report_path, report)
    counts = {"assertions": len(store), "terms": len(store.vocab),
              "by_relation": {r: store.count(r) for r in store.relations}}
    return _manifest(ctx, "ingest", {"kb": kb}, [cache, report_path], counts, t0, {"cache_reused": reused})


def _load_store(ctx: Context):
    return load_store(ctx.stage_dir("ingest") / "store.afkb")


def _templates(ctx: Context, qa_ids=None):
    return load_pairing_templates(ctx.input_file("pairings", ctx.cfg.paths.pairings), ctx.skills, qa_ids)


def stage_trees(ctx: Context) -> dict:
    """Materialize small trees with their paths and count every size exactly."""
    t0 = time.perf_counter()
    d = ctx.stage_dir("trees")
    d.mkdir(parents=True, exist_ok=True)
    sizes = sorted(ctx.cfg.sizes)
    outputs = []
    per_skill = {}
    for skill in ctx.skills.names:
        per_skill[skill] = {str(T): count_trees(ctx.skills, T) for T in sizes}
        for T in sizes:
            if T > ctx.cfg.materialize_max_size:
                continue
            path = d / f"trees_T{T}_{skill}.jsonl.gz"
            write_jsonl(path, (tree_record(t, find_reasoning_paths(t, 0, ctx.rules))
                               for t in iter_trees(ctx.skills, T, skill)))
            outputs.append(path)
    templates = _templates(ctx)
    per_pairing = {
        t.id: {str(T): per_skill[t.skill][str(T)] for T in sizes} for t in templates
    }
    counts = {
        "trees_by_skill": per_skill,
        "trees_by_pairing": per_pairing,
        "total_trees": sum(sum(v.values()) for v in per_skill.values()),
        "total_pairing_trees": sum(sum(v.values()) for v in per_pairing.values()),
    }
    write_json(d / "counts.json", counts)
    outputs.append(d / "counts.json")
    inputs = {"pairings": ctx.cfg.paths.pairings}
    return _manifest(ctx, "trees", inputs, outputs, {"total_trees": counts["total_trees"],
                                                     "materialized_files": len(outputs) - 1}, t0)


def stage_pair(ctx: Context) -> dict:
    t0 = time.perf_counter()
    ctx.require("pair")
    qa_path = ctx.input_file("qa", ctx.cfg.paths.qa)
    store = _load_store(ctx)
    instances = load_qa_instances(qa_path)
    annotated, rejected = annotate_relations(instances, store)
    histogram = relation_histogram(annotated)
    if ctx.cfg.balance:
        balanced = balance_by_relation(annotated, ctx.cfg.quota, Stream(ctx.cfg.seed, "balance").generator,
                                       ctx.cfg.blocklist)
    else:
        blocked = set(ctx.cfg.blocklist)
        balanced = [i for i in annotated if i.id not in blocked]
    keep = {i.id for i in balanced}
    templates = [t for t in _templates(ctx, [i.id for i in instances]) if t.qa_id in keep]
    sizes = sorted(ctx.cfg.sizes)
    samplers: dict[tuple[str, str], ShapeSampler] = {}
    records = []
    for t in templates:
        key = (t.skill, t.pairing_slot)
        if key not in samplers:
            samplers[key] = ShapeSampler(ctx.skills, ctx.rules, *key, max_size=ctx.cfg.max_size)
        shapes = samplers[key].shapes(sizes)
        records.append({
            **t.to_record(),
            "trees_by_T": {str(T): count_trees(ctx.skills, T) for T in sizes},
            "pairs_by_shape": {f"{n},{d}": c for (n, d), c in shapes.items()},
        })
    d = ctx.stage_dir("pair")
    outputs = [d / "instances.jsonl", d / "pairings.jsonl", d / "rejected.jsonl"]
    write_jsonl(outputs[0], (i.to_record() for i in balanced))
    write_jsonl(outputs[1], records)
    write_jsonl(outputs[2], rejected)
    trees_per_pairing = [sum(r["trees_by_T"].values()) for r in records]
    counts = {
        "instances_loaded": len(instances),
        "instances_with_relation": len(annotated),
        "relation_histogram": histogram,
        "instances_balanced": len(balanced),
        "pairings": len(records),
        "min_trees_per_pairing": min(trees_per_pairing, default=0),
        "total_pairing_trees": sum(trees_per_pairing),
    }
    return _manifest(ctx, "pair", {"qa": qa_path, "pairings": ctx.cfg.paths.pairings}, outputs, counts, t0)


def _pair_inputs(ctx: Context):
    d = ctx.stage_dir("pair")
    instances = {i.id: i for i in load_qa_instances(d / "instances.jsonl")}
    templates = _templates(ctx, instances)
    return instances, {t.id: t for t in templates}


def stage_subsample(ctx: Context) -> dict:
    """Pick one (tree, path) per (pairing, n, d), or every pair when subsampling is off."""
    t0 = time.perf_counter()
    ctx.require("subsample")
    instances, templates = _pair_inputs(ctx)
    sizes = sorted(ctx.cfg.sizes)
    samplers: dict[tuple[str, str], ShapeSampler] = {}
    rows = []
    for tid in sorted(templates):
        tpl = templates[tid]
        key = (tpl.skill, tpl.pairing_slot)
        if key not in samplers:
            samplers[key] = ShapeSampler(ctx.skills, ctx.rules, *key, max_size=ctx.cfg.max_size)
        sampler = samplers[key]
        for T in sizes:
            rng = Stream(ctx.cfg.seed, "subsample", tpl.id, T)
            for (n, d), total in sampler.shapes([T]).items():
                if ctx.cfg.subsample:
                    picks = [sampler.sample(n, d, rng)]
                else:
                    if total > MAX_UNSAMPLED_PAIRS:
                        raise StageError(f"shape ({n}, {d}) has {total} pairs; enable subsampling")
                    picks = [sampler.decode(n, d, r) for r in range(total)]
                for tree, path in picks:
                    paths = find_reasoning_paths(tree, 0, ctx.rules)
                    index = [(p.edges, p.pairing_var) for p in paths].index((path.edges, path.pairing_var))
                    rows.append({"pairing_id": tpl.id, "qa_id": tpl.qa_id, "n": n, "d": d,
                                 "path_index": index, "tree": tree_record(tree, paths)})
    d = ctx.stage_dir("subsample")
    out = d / "selection.jsonl"
    write_jsonl(out, rows)
    shapes = Counter(f"{r['n']},{r['d']}" for r in rows)
    counts = {
        "selections": len(rows),
        "unique_trees": len({r["tree"]["tree_id"] for r in rows}),
        "unique_pairing_trees": len({(r["pairing_id"], r["tree"]["tree_id"]) for r in rows}),
        "pairings": len(templates),
        "by_shape": dict(sorted(shapes.items())),
    }
    return _manifest(ctx, "subsample", {"instances": ctx.stage_dir("pair") / "instances.jsonl"}, [out], counts, t0)


def _jobs(ctx: Context, instances, templates) -> list[GroundingJob]:
    jobs = []
    for r in iter_jsonl(ctx.stage_dir("subsample") / "selection.jsonl"):
        tree, paths = tree_from_record(r["tree"])
        tpl = templates[r["pairing_id"]]
        jobs.append(GroundingJob(tpl, instances[tpl.qa_id], tree, paths[r["path_index"]], r["path_index"]))
    return jobs


def stage_ground(ctx: Context) -> dict:
    t0 = time.perf_counter()
    ctx.require("ground")
    store = _load_store(ctx)
    instances, templates = _pair_inputs(ctx)
    jobs = _jobs(ctx, instances, templates)
    corpus, failures = ground_all(
        jobs, store, ctx.skills, beam_k=ctx.cfg.beam_k, metric=make_metric(ctx.cfg.metric),
        seed=ctx.cfg.seed, max_expansions=ctx.cfg.max_expansions, workers=ctx.cfg.jobs,
    )
    d = ctx.stage_dir("ground")
    outputs = [d / "grounded.jsonl", d / "failures.jsonl"]
    write_jsonl(outputs[0], (assignment_record(g, ci) for g in corpus for ci in range(len(g.assignments))))
    write_jsonl(outputs[1], failures)
    counts = {
        "jobs": len(jobs),
        "grounded_jobs": len(corpus),
        "dropped_jobs": len(jobs) - len(corpus),
        "failures_by_reason": dict(sorted(Counter(f["reason"] for f in failures).items())),
    }
    inputs = {"selection": ctx.stage_dir("subsample") / "selection.jsonl",
              "store": ctx.stage_dir("ingest") / "store.afkb"}
    return _manifest(ctx, "ground", inputs, outputs, counts, t0)


def build_items(ctx: Context) -> list[BenchmarkItem]:
    instances, templates = _pair_inputs(ctx)
    jobs = {j.key: j for j in _jobs(ctx, instances, templates)}
    grouped: dict[tuple, dict[int, object]] = defaultdict(dict)
    for rec in iter_jsonl(ctx.stage_dir("ground") / "grounded.jsonl"):
        grouped[(rec["pairing_id"], rec["tree_id"], rec["path_index"])][rec["choice_index"]] = assignment_from_record(rec)
    seed = ctx.cfg.seed
    instruction = ctx.cfg.instruction or DEFAULT_INSTRUCTION
    items = []
    for key, job in jobs.items():
        if key not in grouped:
            continue
        by_choice = grouped[key]
        groundings = [by_choice[i] for i in range(job.instance.Q)]
        plan_rng = Stream(seed, "variants", *key)
        for target, variant in plan_variants(job.instance.default_answer_index, job.instance.Q, ctx.cfg.variants, plan_rng):
            rng = Stream(seed, "assemble", *key, variant, target)
            items.append(assemble_item(
                job.instance, job.template, job.tree, job.path, groundings, target, variant, ctx.skills,
                rng=rng, seed=seed, path_index=job.path_index, instruction=instruction,
                extra={"target_policy": ctx.cfg.variants.target_policy},
            ))
    if ctx.cfg.baseline:
        qa_with_items = sorted({j.instance.id for j in jobs.values()})
        items.extend(baseline_item(instances[q], seed=seed, instruction=instruction) for q in qa_with_items)
    return items


def stage_assemble(ctx: Context) -> dict:
    t0 = time.perf_counter()
    ctx.require("assemble")
    try:
        items = build_items(ctx)
    except AssemblyError as exc:
        raise StageError(f"assembly failed: {exc}") from None
    unsound = []
    for it in items:
        if it.metadata["variant"] == "baseline":
            continue
        res = verify_soundness(it, ctx.skills, ctx.rules)
        if not res.passed:
            unsound.append({"id": it.id, "implied": res.implied, "error": res.error})
    d = ctx.stage_dir("assemble")
    path = d / "items.jsonl"
    export = export_items(items, path, seed=ctx.cfg.seed)
    counts = {"items": export["count"], "by_variant": export["by_variant"], "by_stratum": export["by_stratum"],
              "unsound": len(unsound)}
    inputs = {"grounded": ctx.stage_dir("ground") / "grounded.jsonl",
              "selection": ctx.stage_dir("subsample") / "selection.jsonl"}
    m = _manifest(ctx, "assemble", inputs, [path], counts, t0, {"soundness_failures": unsound[:20]})
    if unsound:
        raise SoundnessGateError(f"{len(unsound)} item(s) failed the soundness gate, e.g. {unsound[0]['id']}")
    return m


def load_items(path: Path) -> list[BenchmarkItem]:
    return [BenchmarkItem.from_record(r) for r in iter_jsonl(path)]


def make_client(ctx: Context):
    ev = ctx.cfg.evaluation
    if ev.mock:
        return make_mock(ev.mock, ctx.skills, ctx.rules, ctx.cfg.seed)
    if ev.endpoint:
        return HTTPChatClient(ev.endpoint, ev.model or "", timeout=ev.timeout, retry=RetryPolicy(attempts=ev.retries))
    raise ConfigError("evaluation needs --mock or --endpoint")


def stage_evaluate(ctx: Context) -> dict:
    t0 = time.perf_counter()
    ctx.require("evaluate")
    client = make_client(ctx)
    items_path = ctx.stage_dir("assemble") / "items.jsonl"
    items = load_items(items_path)
    records = run_eval(items, client, concurrency=ctx.cfg.evaluation.concurrency)
    d = ctx.stage_dir("evaluate")
    out = d / "transcripts.jsonl"
    write_jsonl(out, (r.to_record(with_latency=False) for r in records))
    counts = {"records": len(records), "correct": sum(r.correct for r in records),
              "abstain": sum(r.extracted < 0 for r in records), "errors": sum(r.error is not None for r in records)}
    extra = {"model": client.model_id, "mean_latency_s": round(sum(r.latency for r in records) / max(len(records), 1), 6)}
    return _manifest(ctx, "evaluate", {"items": items_path}, [out], counts, t0, extra)


def stage_report(ctx: Context) -> dict:
    t0 = time.perf_counter()
    ctx.require("report")
    items_path = ctx.stage_dir("assemble") / "items.jsonl"
    trans = ctx.stage_dir("evaluate") / "transcripts.jsonl"
    items = load_items(items_path)
    records = [EvalRecord.from_record(r) for r in read_jsonl(trans)]
    stats = stratify(records, items)
    outputs = emit_report(stats, ctx.stage_dir("report"))
    counts = {"strata": len(stats), "records": len(records)}
    return _manifest(ctx, "report", {"items": items_path, "transcripts": trans}, outputs, counts, t0)


STAGE_FUNCS: dict[str, Callable[[Context], dict]] = {
    "ingest": stage_ingest,
    "trees": stage_trees,
    "pair": stage_pair,
    "subsample": stage_subsample,
    "ground": stage_ground,
    "assemble": stage_assemble,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def stage_run(stage: str, cfg: PipelineConfig) -> dict:
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    ctx = Context(cfg)
    log.info("running stage %s", stage)
    return STAGE_FUNCS[stage](ctx)


def replication_deltas(counts: dict) -> dict:
    """Observed asset counts next to the reference targets (informational, never fatal)."""
    pair, sub = counts.get("pair", {}), counts.get("subsample", {})
    hist = pair.get("relation_histogram") or {}
    hi = max(hist.items(), key=lambda kv: (kv[1], kv[0]), default=None)
    lo = min(hist.items(), key=lambda kv: (kv[1], kv[0]), default=None)
    observed = {
        "histogram_max": list(hi) if hi else None,
        "histogram_min": list(lo) if lo else None,
        "instances_balanced": pair.get("instances_balanced"),
        "min_trees_per_pairing": pair.get("min_trees_per_pairing"),
        "total_pairing_trees": pair.get("total_pairing_trees"),
        "subsampled": sub.get("selections"),
    }
    out = {}
    for key, target in REPLICATION_TARGETS.items():
        got = observed[key]
        if key == "min_trees_per_pairing":
            match = got is not None and got >= target
        else:
            match = got == target
        row = {"target": target, "observed": got, "match": match}
        if isinstance(got, int) and isinstance(target, int):
            row["delta"] = got - target
        out[key] = row
    return out


def run_all(cfg: PipelineConfig, *, include_trees: bool = True) -> dict:
    """Run every generation stage in order, then evaluate/report when a model is configured."""
    ctx = Context(cfg)
    order = ["ingest"] + (["trees"] if include_trees else []) + ["pair", "subsample", "ground", "assemble"]
    if cfg.evaluation.enabled:
        order += ["evaluate", "report"]
    manifests = {}
    for stage in order:
        log.info("running stage %s", stage)
        manifests[stage] = STAGE_FUNCS[stage](ctx)
    summary = {
        "schema_version": MANIFEST_VERSION,
        "seed": cfg.seed,
        "stages": list(manifests),
        "outputs": {s: m["outputs"] for s, m in manifests.items()},
        "counts": {s: m["counts"] for s, m in manifests.items()},
    }
    summary["replication"] = replication_deltas(summary["counts"])
    write_json(ctx.out / "pipeline_manifest.json", summary)
    return summary
