from __future__ import annotations

import json
import shutil
from collections import Counter
from pathlib import Path

import pytest
import yaml

from afbench import pipeline
from afbench.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOUNDNESS, EXIT_STAGE, main
from afbench.io import read_jsonl
from afbench.trees import find_reasoning_paths, iter_trees

from .conftest import SAMPLE_DIR

CONFIG = str(SAMPLE_DIR / "config.yaml")
# anchored trees of each size over the six default skills
TREES_BY_T = {"1": 1, "2": 24, "3": 588, "4": 14840, "5": 387582}


def payload_files(out: Path) -> dict[str, bytes]:
    """Every stage output except manifests, which record wall-clock durations."""
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and not p.name.endswith("manifest.json")}


def test_golden_tree_counts_per_pairing(sample_run):
    out, summary = sample_run
    pairings = read_jsonl(out / "pair" / "pairings.jsonl")
    assert len(pairings) == 7
    for p in pairings:
        assert p["trees_by_T"] == TREES_BY_T
    assert summary["counts"]["pair"]["min_trees_per_pairing"] == 403035
    counts = json.loads((out / "trees" / "counts.json").read_text())
    assert all(v == TREES_BY_T for v in counts["trees_by_pairing"].values())


def test_shape_counts_match_enumeration(sample_run, skills, rules):
    out, _ = sample_run
    for p in read_jsonl(out / "pair" / "pairings.jsonl"):
        got = Counter()
        for T in (1, 2, 3):
            for tree in iter_trees(skills, T, p["skill"]):
                for path in find_reasoning_paths(tree, 0, rules):
                    if path.pairing_slot == p["pairing_slot"]:
                        got[f"{path.n},{path.d}"] += 1
        small = {k: v for k, v in p["pairs_by_shape"].items() if sum(map(int, k.split(","))) <= 3}
        assert small == dict(got)


def test_sample_run_outputs(sample_run, sample_items):
    out, summary = sample_run
    assert summary["stages"] == list(pipeline.STAGES)
    assert summary["counts"]["assemble"]["unsound"] == 0
    assert summary["counts"]["ground"]["jobs"] > 100
    by_variant = Counter(it.metadata["variant"] for it in sample_items)
    assert by_variant["factual"] == by_variant["anti_factual"] and by_variant["baseline"] == 6
    for stage in pipeline.STAGES:
        m = json.loads((out / stage / "manifest.json").read_text())
        assert m["stage"] == stage and m["seed"] == 13 and m["outputs"]
    strata = (out / "report" / "strata.csv").read_text().splitlines()
    assert strata[0].startswith("kind,variant,n,d,p")


def test_run_all_is_deterministic(sample_run, tmp_path, capsys):
    out, _ = sample_run
    assert main(["run-all", "--config", CONFIG, "--out", str(tmp_path), "--mock", "oracle"]) == EXIT_OK
    assert payload_files(tmp_path) == payload_files(out)
    counts = json.loads(capsys.readouterr().out)
    assert counts["assemble"]["unsound"] == 0


def test_seed_changes_output(sample_run, tmp_path):
    out, _ = sample_run
    assert main(["run-all", "--config", CONFIG, "--out", str(tmp_path), "--seed", "14"]) == EXIT_OK
    ours = (tmp_path / "assemble" / "items.jsonl").read_bytes()
    assert ours != (out / "assemble" / "items.jsonl").read_bytes()


def test_stage_isolation(sample_run, tmp_path):
    out, _ = sample_run
    work = tmp_path / "out"
    shutil.copytree(out, work)
    for stage in ("ground", "assemble"):
        shutil.rmtree(work / stage)
    for stage in ("ground", "assemble"):
        assert main([stage, "--config", CONFIG, "--out", str(work)]) == EXIT_OK
    for name in ("ground/grounded.jsonl", "ground/failures.jsonl", "assemble/items.jsonl"):
        assert (work / name).read_bytes() == (out / name).read_bytes()


def test_missing_prerequisite(tmp_path, capsys):
    assert main(["evaluate", "--config", CONFIG, "--out", str(tmp_path), "--mock", "oracle"]) == EXIT_STAGE
    err = capsys.readouterr().err
    assert "stage 'evaluate' needs the outputs of stage 'assemble'" in err


def test_config_errors(tmp_path, sample_run, capsys):
    assert main(["ingest", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: 1\nmystery: 3\n")
    assert main(["ingest", "--config", str(bad)]) == EXIT_CONFIG
    # evaluation with no model configured
    work = tmp_path / "out"
    shutil.copytree(sample_run[0], work)
    assert main(["evaluate", "--config", CONFIG, "--out", str(work)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_verify(sample_run, tmp_path, capsys):
    out, _ = sample_run
    assert main(["verify", "--config", CONFIG, "--out", str(out)]) == EXIT_OK
    recs = read_jsonl(out / "assemble" / "items.jsonl")
    rec = next(r for r in recs if r["statements"] and " not " in " ".join(r["statements"]))
    rec["statements"] = [s.replace(" not ", " ", 1) for s in rec["statements"]]
    bad = tmp_path / "tampered.jsonl"
    bad.write_text(json.dumps(rec) + "\n")
    assert main(["verify", "--config", CONFIG, str(bad)]) == EXIT_SOUNDNESS
    assert rec["id"] in capsys.readouterr().out


def test_soundness_gate_exit_code(sample_run, tmp_path, monkeypatch):
    work = tmp_path / "out"
    shutil.copytree(sample_run[0], work)

    class Fail:
        passed, implied, error = False, [], "planted"

    monkeypatch.setattr(pipeline, "verify_soundness", lambda *a, **k: Fail())
    assert main(["assemble", "--config", CONFIG, "--out", str(work)]) == EXIT_SOUNDNESS
    m = json.loads((work / "assemble" / "manifest.json").read_text())
    assert m["counts"]["unsound"] > 0


def test_sizes_restrict_trees(tmp_path):
    doc = yaml.safe_load(Path(CONFIG).read_text())
    for k in ("kb", "qa", "pairings"):
        doc["paths"][k] = str(SAMPLE_DIR / doc["paths"][k])
    doc["paths"]["out"] = str(tmp_path / "out")
    doc["trees"]["sizes"] = [1, 2]
    cfg = tmp_path / "small.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    assert main(["run-all", "--config", str(cfg)]) == EXIT_OK
    sel = read_jsonl(tmp_path / "out" / "subsample" / "selection.jsonl")
    assert {r["tree"]["T"] for r in sel} == {1, 2}
    for p in read_jsonl(tmp_path / "out" / "pair" / "pairings.jsonl"):
        assert p["trees_by_T"] == {"1": 1, "2": 24}
    doc["trees"]["sizes"] = [0, 9]
    cfg.write_text(yaml.safe_dump(doc))
    assert main(["ingest", "--config", str(cfg)]) == EXIT_CONFIG


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and "afbench" in capsys.readouterr().out
