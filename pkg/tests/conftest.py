from __future__ import annotations

from pathlib import Path

import pytest

from afbench.kb import IngestConfig, ingest_kb
from afbench.skills import default_tables
from afbench.synthetic import make_suite

SAMPLE_DIR = Path(__file__).resolve().parents[1] / "src" / "afbench" / "data" / "sample"


@pytest.fixture(scope="session")
def tables():
    return default_tables()


@pytest.fixture(scope="session")
def skills(tables):
    return tables[0]


@pytest.fixture(scope="session")
def rules(tables):
    return tables[1]


@pytest.fixture(scope="session")
def suite(skills):
    return make_suite(skills, n_instances=12, Q=4, seed=3)


@pytest.fixture(scope="session")
def suite_store(skills, suite):
    store, _ = ingest_kb(suite.kb_lines, IngestConfig(skills.relations))
    return store


@pytest.fixture(scope="session")
def sample_dir():
    return SAMPLE_DIR


@pytest.fixture(scope="session")
def sample_run(tmp_path_factory):
    """One full run of the bundled sample config with the oracle mock."""
    from afbench.config import load_config
    from afbench.pipeline import run_all

    out = tmp_path_factory.mktemp("sample_run")
    cfg = load_config(SAMPLE_DIR / "config.yaml", out=str(out), mock="oracle")
    summary = run_all(cfg)
    return out, summary


@pytest.fixture(scope="session")
def sample_items(sample_run):
    from afbench.pipeline import load_items

    return load_items(sample_run[0] / "assemble" / "items.jsonl")
