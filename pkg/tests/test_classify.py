import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from tabxcheck.classify import (
    DECISION_ABSTAIN,
    DECISION_EQUIVALENT,
    DECISION_NOT_EQUIVALENT,
    PLACEHOLDER,
    BackendUnavailable,
    NoisyOracleBackend,
    OracleBackend,
    RemoteBackend,
    build_prompt,
    classify_pairs,
    mask_table,
    parse_response,
)
from tabxcheck.documents import linearize_table, parse_document


def doc_with_value(value="49,120"):
    return parse_document(
        {
            "doc_id": "d",
            "doc_type": "synthetic",
            "sections": [{"section_id": "s", "title": "Chapter A"}],
            "tables": [
                {
                    "table_id": "t1",
                    "section_id": "s",
                    "chapter_title": "Chapter A",
                    "text_before": "before text",
                    "text_after": "after text",
                    "cells": [["metric", "amount"], ["net assets", value], ["other", "7"]],
                },
                {
                    "table_id": "t2",
                    "section_id": "s",
                    "chapter_title": "Chapter A",
                    "text_before": "",
                    "text_after": "",
                    "cells": [["metric", "amount"], ["net assets", value]],
                },
            ],
        }
    )


class TestMasking:
    def test_placeholder_replaces_value(self):
        d = doc_with_value("49,120")
        m_i = d.mentions[0]
        m_j = d.mentions[-1]
        prompt = build_prompt(d, m_i, m_j)
        assert PLACEHOLDER in prompt.context_block
        assert "49,120" not in prompt.context_block
        assert "49120" not in prompt.context_block

    def test_same_table_context_included_once(self):
        d = doc_with_value()
        m_i, m_j = d.mentions[0], d.mentions[1]  # both in t1
        assert m_i.table_id == m_j.table_id
        prompt = build_prompt(d, m_i, m_j)
        assert prompt.context_block.count("Chapter A") == 1
        assert f"row {m_i.row}, column {m_i.col}" in prompt.output_instruction
        assert f"row {m_j.row}, column {m_j.col}" in prompt.output_instruction

    def test_masking_touches_only_numeric_cells(self):
        d = doc_with_value()
        t = d.tables[0]
        masked_lines = mask_table(t).splitlines()
        plain_lines = linearize_table(t).splitlines()
        assert len(masked_lines) == len(plain_lines)
        for r, (ml, pl) in enumerate(zip(masked_lines, plain_lines)):
            mcells = [c.strip() for c in ml.strip("|").split("|")]
            pcells = [c.strip() for c in pl.strip("|").split("|")]
            grid_row = 0 if r == 0 else r - 1  # separator line offset
            for c, (mc, pc) in enumerate(zip(mcells, pcells)):
                if r == 1:  # separator line
                    assert mc == pc
                elif t.cells[grid_row][c].kind == "numeric":
                    assert mc == PLACEHOLDER
                else:
                    assert mc == pc

    def test_completeness_on_generated_corpus(self, small_corpus):
        checked = 0
        for d, gold in zip(small_corpus.documents, small_corpus.gold):
            pairs = sorted(gold.pairs())[:40]
            for i, j in pairs:
                prompt = build_prompt(d, d.mention(i), d.mention(j))
                for m in d.mentions:
                    assert m.value.canonical() not in prompt.context_block
                checked += 1
        assert checked > 50


class TestParseResponse:
    def test_affirmative(self):
        v = parse_response("Yes, they are semantically equivalent.")
        assert v.decision == DECISION_EQUIVALENT

    def test_negative_precedence(self):
        v = parse_response("not equivalent")
        assert v.decision == DECISION_NOT_EQUIVALENT

    def test_abstain(self):
        assert parse_response("cannot determine").decision == DECISION_ABSTAIN

    @pytest.mark.parametrize(
        "raw,decision",
        [
            ("No.", DECISION_NOT_EQUIVALENT),
            ("yes", DECISION_EQUIVALENT),
            ("They are NOT EQUIVALENT at all", DECISION_NOT_EQUIVALENT),
            ("these are equivalent", DECISION_EQUIVALENT),
            ("The answer is no, different periods", DECISION_NOT_EQUIVALENT),
            ("", DECISION_ABSTAIN),
            ("analysis without a verdict word", DECISION_ABSTAIN),
        ],
    )
    def test_marker_rules(self, raw, decision):
        assert parse_response(raw).decision == decision


class TestBackends:
    def test_oracle_matches_gold(self, small_corpus):
        d = small_corpus.documents[0]
        gold = small_corpus.gold[0]
        backend = OracleBackend(list(small_corpus.gold))
        gold_pairs = gold.pairs()
        some_gold = sorted(gold_pairs)[:10]
        some_non = []
        for i in range(len(d.mentions)):
            for j in range(i + 1, len(d.mentions)):
                if (i, j) not in gold_pairs:
                    some_non.append((i, j))
                if len(some_non) >= 10:
                    break
            if len(some_non) >= 10:
                break
        prompts = [build_prompt(d, d.mention(i), d.mention(j)) for i, j in some_gold + some_non]
        verdicts = classify_pairs(backend, prompts)
        for (i, j), v in zip(some_gold + some_non, verdicts):
            expected = DECISION_EQUIVALENT if (i, j) in gold_pairs else DECISION_NOT_EQUIVALENT
            assert v.decision == expected
            assert v.pair == (i, j)

    def test_noisy_flip_fraction(self, small_corpus):
        d = small_corpus.documents[0]
        gold = small_corpus.gold[0]
        oracle = OracleBackend(list(small_corpus.gold))
        noisy = NoisyOracleBackend(list(small_corpus.gold), flip_rate=0.1, seed=5)
        n = len(d.mentions)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, min(i + 60, n))]
        prompts = [build_prompt(d, d.mention(i), d.mention(j)) for i, j in pairs]
        flips = sum(
            1
            for p in prompts
            if noisy.classify(p) != oracle.classify(p)
        )
        frac = flips / len(prompts)
        assert abs(frac - 0.1) <= 0.02
        # determinism: same seed, same flips
        again = sum(1 for p in prompts if noisy.classify(p) != oracle.classify(p))
        assert again == flips

    def test_empty_pairs(self, small_corpus):
        assert classify_pairs(OracleBackend(list(small_corpus.gold)), []) == []

    def test_order_and_cardinality_preserved(self, small_corpus):
        d = small_corpus.documents[0]
        backend = OracleBackend(list(small_corpus.gold))
        pairs = [(0, 1), (3, 9), (1, 2), (0, 5)]
        prompts = [build_prompt(d, d.mention(i), d.mention(j)) for i, j in pairs]
        verdicts = classify_pairs(backend, prompts, max_in_flight=3)
        assert [v.pair for v in verdicts] == pairs


class _StubHandler(BaseHTTPRequestHandler):
    fail_first = 0
    seen_bodies = []

    def do_POST(self):
        cls = type(self)
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        cls.seen_bodies.append(body)
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        text = body["messages"][0]["content"]
        answer = "yes" if "row 1, column 1" in text else "no"
        payload = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": answer}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.fail_first = 0
    _StubHandler.seen_bodies = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestRemoteBackend:
    def test_wire_format_and_parsing(self, stub_server, monkeypatch):
        monkeypatch.setenv("TABXCHECK_API_TOKEN", "sekrit")
        d = doc_with_value()
        backend = RemoteBackend(url=stub_server, model="test-model")
        prompt = build_prompt(d, d.mentions[0], d.mentions[-1])
        raw = backend.classify(prompt)
        assert raw in ("yes", "no")
        body = _StubHandler.seen_bodies[-1]
        assert body["temperature"] == 0
        assert body["model"] == "test-model"
        assert body["messages"][0]["role"] == "user"
        assert PLACEHOLDER in body["messages"][0]["content"]

    def test_retry_then_success(self, stub_server):
        _StubHandler.fail_first = 2
        d = doc_with_value()
        backend = RemoteBackend(url=stub_server, max_retries=3, backoff=0.01)
        assert backend.classify(build_prompt(d, d.mentions[0], d.mentions[1]))

    def test_unavailable_after_retries(self, stub_server):
        _StubHandler.fail_first = 99
        d = doc_with_value()
        backend = RemoteBackend(url=stub_server, max_retries=2, backoff=0.01)
        with pytest.raises(BackendUnavailable):
            backend.classify(build_prompt(d, d.mentions[0], d.mentions[1]))
