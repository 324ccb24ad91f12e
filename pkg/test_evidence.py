"""Evidence stages: trust table, re-ranking, relevance judging, filters and metrics."""
import random
from types import SimpleNamespace

import pytest
import requests

from config.settings import SAMPLE_DIR
from src.evidence.pipeline import (
    POST_RERANK,
    PRE_RERANK,
    EvidenceItem,
    EvidencePipeline,
    RelevanceJudge,
    RetrievalMetrics,
    compute_metrics,
    delta,
    filter_top3_trusted,
    filter_top10_relevant,
    judge_relevance,
    parse_verdict,
    rerank,
    retrieve,
    strategy_summary,
    trec_run_lines,
)
from src.evidence.reranker import HttpRerankerScorer, StubScorer, make_scorer
from src.evidence.trust import TrustTable, host_of, load_trust_table, trust_of
from src.expansion.planners import plan_baseline
from src.llm.gateway import JsonHttpClient, LLMGateway, StubBackend
from src.utils.errors import TransportError, TrustTableError

QUESTION = "Who funded the fluoride study?"


def item(rank, relevant=None, trust=0.0, doc_id=None, body="", url=""):
    return EvidenceItem(doc_id or f"d{rank:03d}", url, 100.0 - rank, rank, relevant=relevant,
                        trust=trust, body=body)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class CountingJudge:
    """Relevance judge double that answers from a fixed set and counts calls."""

    def __init__(self, relevant_ids):
        self.relevant_ids = set(relevant_ids)
        self.calls = []

    def verdict(self, question, evidence):
        self.calls.append(evidence.doc_id)
        return evidence.doc_id in self.relevant_ids, None


# --- trust table ----------------------------------------------------------------

@pytest.fixture
def table(tmp_path):
    return load_trust_table(write_csv(tmp_path / "trust.csv",
                                      "domain,score\nnytimes.com,0.93\nbbc.co.uk,0.9\nWWW.Example.org,0.4\n"))


@pytest.mark.parametrize("url,score", [
    ("https://www.nytimes.com/2024/01/01/story.html", 0.93),
    ("https://NYTimes.com/x", 0.93),
    ("nytimes.com/path", 0.93),
    ("https://news.bbc.co.uk/world", 0.9),
    ("http://example.org", 0.4),
    ("https://unknown.example", 0.0),
    ("https://co.uk/", 0.0),
])
def test_trust_lookup(table, url, score):
    assert trust_of(table, url) == score


@pytest.mark.parametrize("url", ["", "   ", "https://"])
def test_unparseable_url_flagged(table, url):
    assert table.lookup(url) == (0.0, "unparseable_url")


def test_out_of_range_score_names_line(tmp_path):
    path = write_csv(tmp_path / "t.csv", "domain,score\nnytimes.com,0.93\nx.com,1.7\n")
    with pytest.raises(TrustTableError, match="line 3"):
        load_trust_table(path)


def test_lenient_mode_skips_bad_rows(tmp_path):
    path = write_csv(tmp_path / "t.csv", "domain,score\nnytimes.com,0.93\nx.com,1.7\ny.com,abc\nz.com,0.5\n")
    loaded = load_trust_table(path, strict=False)
    assert loaded.scores == {"nytimes.com": 0.93, "z.com": 0.5}
    assert loaded.skipped_count == 2


def test_line_numbers_survive_blank_lines(tmp_path):
    path = write_csv(tmp_path / "t.csv", "domain,score\n\nnytimes.com,0.93\n\n\nx.com,1.7\n")
    with pytest.raises(TrustTableError, match="line 6"):
        load_trust_table(path)


def test_extra_field_row(tmp_path):
    path = write_csv(tmp_path / "t.csv", "domain,score\nnytimes.com,0.93\n\nbad.com,0.5,extra\nx.com,1.7\n")
    with pytest.raises(TrustTableError, match="line 4"):
        load_trust_table(path)
    with pytest.raises(TrustTableError, match="line 5"):
        load_trust_table(write_csv(tmp_path / "u.csv", "domain,score\nnytimes.com,0.93\n\n\nx.com,1.7\n"))
    loaded = load_trust_table(path, strict=False)
    assert loaded.scores == {"nytimes.com": 0.93}
    assert loaded.skipped_count == 2


def test_invalid_utf8_row(tmp_path):
    path = tmp_path / "t.csv"
    path.write_bytes(b"domain,score\nnytimes.com,0.93\n\xff\xfe.com,0.5\nz.com,0.5\n")
    with pytest.raises(TrustTableError, match="line 3"):
        load_trust_table(path)
    loaded = load_trust_table(path, strict=False)
    assert loaded.scores == {"nytimes.com": 0.93, "z.com": 0.5}
    assert loaded.skipped_count == 1


def test_pc1_column_accepted(tmp_path):
    path = write_csv(tmp_path / "t.csv", "domain,pc1\nnytimes.com,0.93\n")
    assert load_trust_table(path).scores == {"nytimes.com": 0.93}


def test_missing_columns_rejected(tmp_path):
    with pytest.raises(TrustTableError):
        load_trust_table(write_csv(tmp_path / "t.csv", "site,rating\nnytimes.com,0.9\n"))


def test_empty_file_rejected(tmp_path):
    with pytest.raises(TrustTableError):
        load_trust_table(write_csv(tmp_path / "t.csv", ""))


def test_sample_trust_table():
    loaded = load_trust_table(SAMPLE_DIR / "trust.csv")
    assert len(loaded) >= 10
    assert all(0.0 <= v <= 1.0 for v in loaded.scores.values())


def test_host_of():
    assert host_of("https://www.Daily-Ledger.com:8080/a?b=c") == "daily-ledger.com"
    assert host_of("") is None


# --- re-ranking ------------------------------------------------------------------

def test_stub_scorer_counts_shared_tokens():
    scores = StubScorer().score(QUESTION, ["fluoride study funding", "battery plant", "the fluoride"])
    assert scores == [3.0, 0.0, 1.0]


def test_rerank_orders_by_score_with_bm25_tiebreak():
    items = [item(1, body="battery plant"), item(2, body="fluoride study funded"),
             item(3, body="fluoride"), item(4, body="fluoride")]
    result = rerank(QUESTION, items, StubScorer())
    assert [i.doc_id for i in result] == ["d002", "d003", "d004", "d001"]
    assert [i.rerank_rank for i in result] == [1, 2, 3, 4]
    # inputs untouched
    assert items[0].rerank_score is None


@pytest.mark.parametrize("seed", range(10))
def test_rerank_is_permutation(seed):
    rng = random.Random(seed)
    words = ["fluoride", "study", "funded", "battery", "water", "council"]
    items = [item(r, body=" ".join(rng.sample(words, rng.randint(0, 4)))) for r in range(1, 31)]
    result = rerank(QUESTION, items, StubScorer(), window=20, batch_size=7)
    assert sorted(i.doc_id for i in result) == sorted(i.doc_id for i in items)
    assert [i.doc_id for i in result[20:]] == [i.doc_id for i in items[20:]]
    assert all(i.rerank_rank is None for i in result[20:])
    head = result[:20]
    assert all(a.rerank_score >= b.rerank_score for a, b in zip(head, head[1:]))


class FlakyScorer:
    def score(self, query, passages):
        if any("boom" in p for p in passages):
            raise TransportError("scorer down", 503)
        return [float(len(p)) for p in passages]


def test_failed_items_follow_scored_ones():
    items = [item(1, body="a"), item(2, body="boom"), item(3, body="ccc")]
    result = rerank(QUESTION, items, FlakyScorer())
    assert [i.doc_id for i in result] == ["d003", "d001", "d002"]
    assert result[-1].flags == ["rerank_failed"] and result[-1].rerank_rank is None


class FakeClient:
    def __init__(self, reply):
        self.reply = reply
        self.calls = []

    def post(self, path, payload):
        self.calls.append((path, payload))
        return self.reply


def test_http_scorer_contract():
    client = FakeClient({"scores": [0.5, 2]})
    scorer = HttpRerankerScorer(client=client)
    assert scorer.score("q", ["a", "b"]) == [0.5, 2.0]
    assert client.calls == [("score", {"query": "q", "passages": ["a", "b"]})]


@pytest.mark.parametrize("reply", [{"scores": [1.0]}, {"nope": []}, {"scores": ["x", 1]}, []])
def test_http_scorer_rejects_bad_replies(reply):
    with pytest.raises(TransportError):
        HttpRerankerScorer(client=FakeClient(reply)).score("q", ["a", "b"])


def test_broken_http_reads_send_items_to_the_tail(monkeypatch):
    def fake_post(url, json=None, **kwargs):
        if any("boom" in p for p in json["passages"]):
            raise requests.exceptions.ChunkedEncodingError("connection cut mid-body")
        return SimpleNamespace(status_code=200, headers={},
                               json=lambda: {"scores": [float(len(p)) for p in json["passages"]]})

    monkeypatch.setattr("src.llm.gateway.requests.post", fake_post)
    client = JsonHttpClient("http://reranker", max_retries=1, sleep=lambda s: None)
    items = [item(1, body="a"), item(2, body="boom"), item(3, body="ccc")]
    result = rerank(QUESTION, items, HttpRerankerScorer(client=client))
    assert [i.doc_id for i in result] == ["d003", "d001", "d002"]
    assert result[-1].flags == ["rerank_failed"]


def test_make_scorer():
    assert isinstance(make_scorer("stub"), StubScorer)
    with pytest.raises(ValueError):
        make_scorer("gpu")


# --- relevance judging -------------------------------------------------------------

@pytest.mark.parametrize("reply,verdict", [
    ("RELEVANT - it discusses funding", True),
    ("Relevant.", True),
    ("**NOT RELEVANT**", False),
    ("not  relevant: off topic", False),
    ("Irrelevant", False),
    ("maybe", None),
    ("", None),
    ("The document is relevant", None),
])
def test_parse_verdict(reply, verdict):
    assert parse_verdict(reply) is verdict


def test_unparseable_judge_defaults_to_not_relevant():
    backend = StubBackend(seed=42)
    backend.register_canned("relevance_judge", ["maybe"])
    judge = RelevanceJudge(LLMGateway(backend))
    evidence = item(1, body="fluoride study")
    assert judge_relevance(QUESTION, evidence, judge) is False
    assert evidence.flags == ["judge_unparseable"]


def test_judge_caches_per_question_and_doc():
    calls = []
    backend = StubBackend(seed=42)
    backend.register("relevance_judge", lambda req, h: calls.append(1) or "RELEVANT")
    judge = RelevanceJudge(LLMGateway(backend))
    evidence = item(1, body="x")
    for _ in range(3):
        assert judge.verdict(QUESTION, evidence) == (True, None)
    assert len(calls) == 1


@pytest.mark.parametrize("reply", ["I'm not sure.", "", "Yes", "RELEVANCE UNKNOWN", "n/a"])
def test_judge_fault_injection(reply):
    backend = StubBackend(seed=42)
    backend.register_canned("relevance_judge", [reply])
    verdict, flag = RelevanceJudge(LLMGateway(backend)).verdict(QUESTION, item(1, body="y"))
    assert (verdict, flag) == (False, "judge_unparseable")


# --- filters --------------------------------------------------------------------

def expected_top10(items, window=100, quota=10):
    return [i.doc_id for i in items[:window] if i.relevant][:quota]


def expected_top3(items, threshold=0.7, window=100, quota=3):
    return [i.doc_id for i in items[:window] if i.relevant and i.trust >= threshold][:quota]


def test_filter_examples():
    items = [item(r, relevant=r >= 3) for r in range(1, 21)]
    assert [i.doc_id for i in filter_top10_relevant(items)] == [f"d{r:03d}" for r in range(3, 13)]


def test_trust_threshold_inclusive():
    items = [item(1, True, 0.7), item(2, True, 0.69), item(3, False, 0.99), item(4, True, 0.95)]
    assert [i.doc_id for i in filter_top3_trusted(items)] == ["d001", "d004"]


def test_filters_respect_window():
    items = [item(r, relevant=r > 100) for r in range(1, 151)]
    assert filter_top10_relevant(items) == []


def test_filters_on_empty_list():
    assert filter_top10_relevant([]) == []
    assert filter_top3_trusted([]) == []


def test_random_filter_invariants():
    rng = random.Random(1234)
    for _ in range(10_000):
        n = rng.randint(0, 40)
        window = rng.randint(1, 30)
        items = [item(r, relevant=rng.random() < 0.4, trust=rng.choice((0.0, 0.5, 0.69, 0.7, 0.9)))
                 for r in range(1, n + 1)]
        top10 = filter_top10_relevant(items, window=window)
        top3 = filter_top3_trusted(items, window=window)
        assert [i.doc_id for i in top10] == expected_top10(items, window)
        assert [i.doc_id for i in top3] == expected_top3(items, window=window)
        assert len(top10) <= 10 and len(top3) <= 3
        assert all(i.relevant and i.trust >= 0.7 for i in top3)


def test_full_window_invariants():
    rng = random.Random(99)
    thresholds = [0.0, 0.3, 0.5, 0.69, 0.7, 0.85, 1.0]
    for _ in range(500):
        items = [item(r, relevant=rng.random() < 0.08, trust=round(rng.random(), 2))
                 for r in range(1, rng.randint(100, 150) + 1)]
        top10 = filter_top10_relevant(items)
        top3 = filter_top3_trusted(items)
        assert [i.doc_id for i in top10] == expected_top10(items)
        assert [i.doc_id for i in top3] == expected_top3(items)
        assert all(int(i.doc_id[1:]) <= 100 for i in top10 + top3)
        sizes = [len(filter_top3_trusted(items, threshold=t)) for t in thresholds]
        assert sizes == sorted(sizes, reverse=True)


def test_judging_stops_once_quota_is_met():
    items = [item(r) for r in range(1, 51)]
    judge = CountingJudge({f"d{r:03d}" for r in range(1, 51)})
    kept = filter_top10_relevant(items, QUESTION, judge, chunk=10)
    assert len(kept) == 10
    assert judge.calls == [f"d{r:03d}" for r in range(1, 11)]
    assert all(i.relevant is None for i in items[10:])


def test_trusted_filter_only_judges_trusted_items():
    items = [item(r, trust=0.9 if r % 2 else 0.1) for r in range(1, 21)]
    judge = CountingJudge({i.doc_id for i in items})
    kept = filter_top3_trusted(items, question=QUESTION, judge=judge, chunk=4)
    assert [i.doc_id for i in kept] == ["d001", "d003", "d005"]
    assert set(judge.calls) <= {i.doc_id for i in items if i.trust >= 0.7}


def test_parallel_judging_matches_serial():
    relevant = {f"d{r:03d}" for r in range(1, 61) if r % 3 == 0}
    serial_items = [item(r) for r in range(1, 61)]
    parallel_items = [item(r) for r in range(1, 61)]
    serial = filter_top10_relevant(serial_items, QUESTION, CountingJudge(relevant), jobs=1)
    parallel = filter_top10_relevant(parallel_items, QUESTION, CountingJudge(relevant), jobs=4)
    assert [i.doc_id for i in serial] == [i.doc_id for i in parallel]
    assert [i.relevant for i in serial_items] == [i.relevant for i in parallel_items]


def test_filter_attaches_trust_from_table(table):
    items = [item(1, True, url="https://nytimes.com/a"), item(2, True, url="https://unknown.test/b")]
    kept = filter_top3_trusted(items, table)
    assert [i.doc_id for i in kept] == ["d001"]
    assert items[0].trust == 0.93


# --- metrics ------------------------------------------------------------------------

def test_metrics_example():
    items = [item(r, relevant=r <= 7, trust=0.5) for r in range(1, 11)] + [item(11, True, 1.0)]
    metrics = compute_metrics(items, PRE_RERANK)
    assert metrics.relevance_at_10 == pytest.approx(0.7)
    assert metrics.mean_trust_at_10 == pytest.approx(0.5)
    assert metrics.depth == 10


def test_metrics_short_list_uses_its_length():
    items = [item(r, relevant=True, trust=0.2 * r) for r in range(1, 6)]
    metrics = compute_metrics(items, POST_RERANK)
    assert metrics.relevance_at_10 == 1.0
    assert metrics.mean_trust_at_10 == pytest.approx(0.6)
    assert metrics.depth == 5


def test_metrics_empty_result():
    metrics = compute_metrics([], PRE_RERANK)
    assert (metrics.relevance_at_10, metrics.mean_trust_at_10) == (0.0, 0.0)
    assert metrics.flags == ["empty_result"]


def test_metrics_unknown_stage():
    with pytest.raises(ValueError):
        compute_metrics([item(1, True)], "final")


def test_metrics_need_judge_for_unlabelled_items():
    with pytest.raises(ValueError):
        compute_metrics([item(1)], PRE_RERANK)


@pytest.mark.parametrize("seed", range(50))
def test_random_metrics(seed):
    rng = random.Random(seed)
    items = [item(r, relevant=rng.random() < 0.5, trust=rng.random()) for r in range(1, rng.randint(2, 25))]
    metrics = compute_metrics(items, PRE_RERANK)
    top = items[:10]
    assert metrics.relevance_at_10 == pytest.approx(sum(i.relevant for i in top) / len(top))
    assert metrics.mean_trust_at_10 == pytest.approx(sum(i.trust for i in top) / len(top))
    assert 0.0 <= metrics.relevance_at_10 <= 1.0


def test_delta():
    pre = compute_metrics([item(1, False, 0.2), item(2, True, 0.4)], PRE_RERANK)
    post = compute_metrics([item(2, True, 0.4), item(1, True, 0.8)], POST_RERANK)
    d = delta(post, pre)
    assert d["delta_relevance_at_10"] == pytest.approx(0.5)
    assert d["delta_mean_trust_at_10"] == pytest.approx(0.3)


# --- full pipeline on the sample corpus -------------------------------------------------

@pytest.fixture
def pipeline(sample_index, stub_gateway):
    return EvidencePipeline(sample_index, load_trust_table(SAMPLE_DIR / "trust.csv"),
                            RelevanceJudge(stub_gateway), StubScorer(),
                            k_retrieve=100, rerank_window=100, filter_window=100)


def test_pipeline_on_sample(pipeline):
    result = pipeline.run("topic_fluoride_01", 0, QUESTION, plan_baseline(QUESTION))
    assert result.qid == "topic_fluoride_01_0"
    assert result.pre_rerank, "sample corpus should match the question"
    assert sorted(i.doc_id for i in result.post_rerank) == sorted(i.doc_id for i in result.pre_rerank)
    assert [i.bm25_rank for i in result.pre_rerank] == list(range(1, len(result.pre_rerank) + 1))
    assert all(i.relevant for i in result.top10_relevant) and len(result.top10_relevant) <= 10
    assert all(i.relevant and i.trust >= 0.7 for i in result.top3_trusted)
    for metrics in (result.pre_metrics, result.post_metrics):
        assert 0.0 <= metrics.relevance_at_10 <= 1.0
        assert 0.0 <= metrics.mean_trust_at_10 <= 1.0
    data = result.to_json()
    assert data["metrics"]["delta"]["delta_relevance_at_10"] == pytest.approx(
        result.post_metrics.relevance_at_10 - result.pre_metrics.relevance_at_10)


def test_pipeline_rejects_bad_windows(sample_index, stub_gateway):
    with pytest.raises(ValueError):
        EvidencePipeline(sample_index, TrustTable(), RelevanceJudge(stub_gateway), StubScorer(),
                         k_retrieve=10, rerank_window=50, filter_window=5)


def test_retrieve_attaches_trust(sample_index):
    table = load_trust_table(SAMPLE_DIR / "trust.csv")
    items = retrieve(sample_index, plan_baseline(QUESTION), 5, table)
    assert len(items) <= 5
    for evidence in items:
        assert evidence.trust == trust_of(table, evidence.url)


def test_summary_and_run_lines(pipeline):
    results = [pipeline.run("topic_fluoride_01", i, q, plan_baseline(q))
               for i, q in enumerate([QUESTION, "Who sits on the city council?"])]
    rows = strategy_summary(results)
    assert [row["stage"] for row in rows] == [PRE_RERANK, POST_RERANK]
    assert rows[0]["delta_relevance_at_10"] == pytest.approx(
        rows[1]["relevance_at_10"] - rows[0]["relevance_at_10"])
    lines = trec_run_lines(results, "baseline")
    assert lines
    qid, q0, doc_id, rank, score, tag = lines[0].split()
    assert (qid, q0, rank, tag) == ("topic_fluoride_01_0", "Q0", "1", "baseline")
    assert strategy_summary([]) == []


def test_summary_statistics():
    def result(pre, post, fallback=False):
        return SimpleNamespace(pre_metrics=RetrievalMetrics(PRE_RERANK, pre, 0.5),
                               post_metrics=RetrievalMetrics(POST_RERANK, post, 0.9),
                               plan=SimpleNamespace(fallback=fallback))

    pre_row, post_row = strategy_summary([result(0.2, 0.6), result(0.4, 1.0, fallback=True)])
    assert pre_row["relevance_at_10"] == pytest.approx(0.3)
    # population standard deviation
    assert pre_row["relevance_at_10_std"] == pytest.approx(0.1)
    assert post_row["relevance_at_10"] == pytest.approx(0.8)
    assert post_row["mean_trust_at_10_std"] == pytest.approx(0.0)
    assert pre_row["fallback_rate"] == post_row["fallback_rate"] == 0.5
    assert post_row["delta_relevance_at_10"] == pytest.approx(0.5)
    assert post_row["delta_mean_trust_at_10"] == pytest.approx(0.4)
    single = strategy_summary([result(0.7, 0.7)])
    assert single[0]["relevance_at_10_std"] == 0.0
