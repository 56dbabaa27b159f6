from __future__ import annotations

import json
import math
import threading
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from afbench.assembler import BenchmarkItem, Statement
from afbench.evaluation import (
    ABSTAIN,
    ClientConfigError,
    EvalRecord,
    HTTPChatClient,
    RetryPolicy,
    emit_report,
    extract_answer,
    make_mock,
    read_plotdata,
    render_prompt,
    run_eval,
    stratify,
    wald_se,
)
from afbench.evaluation.runner import score

CHOICES = ("pay debts", "galaxy", "outer space", "orbit", "universe")


@pytest.mark.parametrize("response,expected", [
    ("C", 2),
    ("The answer is C.", 2),
    ("(b)", 1),
    ("C: outer space", 2),
    ("I would say outer space", 2),
    ("A or B", ABSTAIN),
    ("It is a galaxy", 1),
    ("", ABSTAIN),
    ("no idea", ABSTAIN),
    ("galaxy and orbit", ABSTAIN),
    ("F", ABSTAIN),
])
def test_extract_answer(response, expected):
    assert extract_answer(response, CHOICES) == expected


def test_nested_choice_text_prefers_longer():
    assert extract_answer("the outer space", ("space", "outer space")) == 1


def test_wald_se():
    assert wald_se(0.5, 93) == pytest.approx(0.05184758, abs=1e-8)
    assert wald_se(1.0, 10) == 0.0
    with pytest.raises(ValueError):
        wald_se(0.5, 0)
    with pytest.raises(ValueError):
        wald_se(1.5, 3)


def item(i, pairing, n=1, d=0, variant="factual", gold=0):
    md = {"pairing_id": pairing, "variant": variant, "n": n, "d": d, "default_index": 0, "T": n + d}
    return BenchmarkItem(f"it{i}", "instr", (Statement("Suppose that [a] is a part of [b]", (0, 0)),), "q?",
                         ("a", "b", "c"), gold, md)


def rec(it, correct, abstain=False):
    ext = ABSTAIN if abstain else (it.gold_index if correct else (it.gold_index + 1) % 3)
    return EvalRecord(it.id, "m", "", ext, correct and not abstain, 0.0)


def test_per_pairing_mean():
    items = [item(0, "A"), item(1, "B"), item(2, "B")]
    records = [rec(items[0], True), rec(items[1], True), rec(items[2], False)]
    (top,) = [s for s in stratify(records, items) if s.kind == "variant"]
    # pairing A: 1/1, pairing B: 1/2; the mean over pairings differs from the item mean 2/3
    assert top.p == pytest.approx(0.75)
    assert top.item_se == pytest.approx(wald_se(2 / 3, 3))
    assert top.wald_se == pytest.approx(wald_se(0.75, 2))
    assert top.n_items == 3 and top.n_pairings == 2


def test_stratify_conserves_items():
    items = [item(i, f"p{i % 4}", n=1 + i % 3, d=i % 2, variant=("factual", "anti_factual")[i % 2]) for i in range(24)]
    records = [rec(it, i % 3 != 0) for i, it in enumerate(items)]
    stats = stratify(records, items)
    for kind in ("variant", "variant_n", "variant_d", "variant_n_d"):
        assert sum(s.n_items for s in stats if s.kind == kind) == len(items)
    assert all(0.0 <= s.p <= 1.0 for s in stats)


def test_orphan_record_is_an_error():
    with pytest.raises(KeyError):
        stratify([EvalRecord("ghost", "m", "", 0, True, 0.0)], [item(0, "A")])


def test_abstain_never_helps():
    items = [item(i, f"p{i % 3}") for i in range(12)]
    base = [rec(it, True) for it in items]
    prev = stratify(base, items)[0].p
    for k in range(len(items)):
        base[k] = rec(items[k], True, abstain=True)
        (cur,) = [s for s in stratify(base, items) if s.kind == "variant"]
        assert cur.p <= prev
        prev = cur.p
    assert prev == 0.0 and cur.abstain_rate == 1.0


def test_report_round_trip(tmp_path):
    items = [item(i, f"p{i % 2}", n=1 + i % 2, d=i % 3) for i in range(12)]
    stats = stratify([rec(it, i % 2 == 0) for i, it in enumerate(items)], items)
    paths = emit_report(stats, tmp_path)
    assert [p.name for p in paths] == ["strata.csv", "plotdata.csv"]
    rows = read_plotdata(tmp_path / "plotdata.csv")
    assert {r[0] for r in rows} == {"hops", "distractors", "interaction"}
    want = {(s.variant, s.n): s.p for s in stats if s.kind == "variant_n"}
    for panel, series, x, y, se in rows:
        if panel == "hops":
            assert y == want[(series, x)]
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_mock_models(sample_items, skills, rules):
    assert len(sample_items) > 100
    oracle = run_eval(sample_items, make_mock("oracle", skills, rules))
    assert all(r.correct for r in oracle)
    parrot = run_eval(sample_items, make_mock("parrot", skills, rules), concurrency=1)
    for it, r in zip(sample_items, parrot):
        assert r.correct == (it.metadata["variant"] != "anti_factual")
    rnd = run_eval(sample_items, make_mock("random", skills, rules, seed=1))
    acc = sum(r.correct for r in rnd) / len(rnd)
    p0 = sum(1 / len(it.choices) for it in sample_items) / len(sample_items)
    assert abs(acc - p0) <= 3 * math.sqrt(p0 * (1 - p0) / len(rnd))
    with pytest.raises(ClientConfigError):
        make_mock("genius", skills, rules)


def test_render_prompt_order(sample_items):
    it = next(i for i in sample_items if i.statements)
    text = render_prompt(it)
    assert text.index("Instruction:") < text.index("Statements:") < text.index("Question:") < text.index("Answer choices:")
    assert f"A: {it.choices[0]}" in text


def test_transcript_round_trip():
    it = item(0, "A")
    r = score(it, "m", "A", latency=0.3)
    assert r.correct and EvalRecord.from_record(r.to_record()) == r
    assert "latency" not in r.to_record(with_latency=False)


class _Handler(BaseHTTPRequestHandler):
    script: list = []
    seen: list = []

    def do_POST(self):  # noqa: N802
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        status, payload = type(self).script.pop(0) if type(self).script else (200, "B")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if status == 200:
            self.wfile.write(json.dumps({"choices": [{"message": {"content": payload}}]}).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.script, _Handler.seen = [], []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_port}/v1/chat/completions", _Handler
    srv.shutdown()


def test_http_client(server):
    url, handler = server
    fast = RetryPolicy(attempts=3, backoff=0.0)
    client = HTTPChatClient(url, "tiny", api_key="k", retry=fast)
    handler.script = [(503, None), (429, None), (200, "The answer is A")]
    (r,) = run_eval([item(0, "A")], client)
    assert r.correct and r.error is None and len(handler.seen) == 3
    body, auth = handler.seen[0]
    assert body["model"] == "tiny" and body["temperature"] == 0 and auth == "Bearer k"
    assert "Question:" in body["messages"][0]["content"]

    handler.script = [(400, None)]
    (r,) = run_eval([item(1, "A")], client)
    assert r.extracted == ABSTAIN and not r.correct and "HTTP 400" in r.error

    handler.script = [(401, None)]
    with pytest.raises(ClientConfigError):
        run_eval([item(2, "A")], client)
    with pytest.raises(ClientConfigError):
        HTTPChatClient("", "tiny")


def test_run_eval_keeps_order(server):
    url, handler = server
    client = HTTPChatClient(url, "tiny", retry=RetryPolicy(attempts=1))
    items = [replace(item(i, "A"), gold_index=1) for i in range(8)]
    out = run_eval(items, client, concurrency=4)
    assert [r.item_id for r in out] == [i.id for i in items] and all(r.correct for r in out)
    with pytest.raises(ValueError):
        run_eval(items, client, concurrency=0)
