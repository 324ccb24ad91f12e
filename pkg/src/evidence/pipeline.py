"""
Evidence pipeline for a single question:

    plan -> BM25 top-k -> re-rank -> relevance judge -> domain trust
         -> Top-10-Relevant and Top-3-Relevant-and-Trusted filters -> metrics

Filters scan the re-ranked list by position inside `filter_window` and judge
lazily in fixed-size chunks, so the outcome does not depend on how many
judge calls run in parallel.
"""
from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from config.settings import (
    FILTER_WINDOW,
    JUDGE_BATCH_SIZE,
    JUDGE_SNIPPET_CHARS,
    K_RETRIEVE,
    METRICS_DEPTH,
    RERANK_BATCH_SIZE,
    RERANK_WINDOW,
    TOP_RELEVANT,
    TOP_TRUSTED,
    TRUST_THRESHOLD,
)
from src.evidence.trust import TrustTable
from src.utils.errors import PipelineError
from src.utils.helpers import parallel_map

logger = logging.getLogger(__name__)

PRE_RERANK = "pre_rerank"
POST_RERANK = "post_rerank"
STAGES = (PRE_RERANK, POST_RERANK)

_VERDICT = re.compile(r"^[\W_]*(not\s+relevant|irrelevant|relevant)\b", re.IGNORECASE)


@dataclass
class EvidenceItem:
    doc_id: str
    url: str
    bm25_score: float
    bm25_rank: int
    rerank_score: Optional[float] = None
    rerank_rank: Optional[int] = None
    relevant: Optional[bool] = None
    trust: float = 0.0
    title: str = field(default="", repr=False)
    body: str = field(default="", repr=False)
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.bm25_rank < 1:
            raise ValueError("bm25_rank is 1-based")
        if self.rerank_rank is not None and self.rerank_score is None:
            raise ValueError("rerank_rank requires rerank_score")

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "url": self.url,
            "bm25_score": self.bm25_score,
            "bm25_rank": self.bm25_rank,
            "rerank_score": self.rerank_score,
            "rerank_rank": self.rerank_rank,
            "relevant": self.relevant,
            "trust": self.trust,
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvidenceItem":
        return cls(data["doc_id"], data.get("url", ""), data["bm25_score"], data["bm25_rank"],
                   data.get("rerank_score"), data.get("rerank_rank"), data.get("relevant"),
                   data.get("trust", 0.0), flags=list(data.get("flags", [])))


@dataclass
class RetrievalMetrics:
    stage: str
    relevance_at_10: float
    mean_trust_at_10: float
    depth: int = 0
    flags: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"stage": self.stage, "relevance_at_10": self.relevance_at_10,
                "mean_trust_at_10": self.mean_trust_at_10, "depth": self.depth, "flags": list(self.flags)}


def delta(post: RetrievalMetrics, pre: RetrievalMetrics) -> Dict[str, float]:
    return {
        "delta_relevance_at_10": post.relevance_at_10 - pre.relevance_at_10,
        "delta_mean_trust_at_10": post.mean_trust_at_10 - pre.mean_trust_at_10,
    }


# --- retrieval & re-ranking ------------------------------------------------

def retrieve(index, plan, k: int = K_RETRIEVE, table: TrustTable = None) -> List[EvidenceItem]:
    items = []
    for rank, (doc_id, score) in enumerate(index.search(plan, k), start=1):
        doc = index.document(doc_id)
        item = EvidenceItem(doc_id, doc.url, score, rank, title=doc.title, body=doc.body)
        if table is not None:
            attach_trust(item, table)
        items.append(item)
    return items


def attach_trust(item: EvidenceItem, table: TrustTable) -> EvidenceItem:
    score, flag = table.lookup(item.url)
    item.trust = score
    if flag and flag not in item.flags:
        item.flags.append(flag)
    return item


def _score_batch(scorer, question: str, batch: List[EvidenceItem]) -> List[Optional[float]]:
    try:
        return list(scorer.score(question, [item.body for item in batch]))
    except (PipelineError, ValueError) as e:
        logger.warning("re-rank batch of %d failed (%s); retrying per item", len(batch), e)
    scores: List[Optional[float]] = []
    for item in batch:
        try:
            scores.append(scorer.score(question, [item.body])[0])
        except (PipelineError, ValueError, IndexError) as e:
            logger.warning("re-rank failed for %s: %s", item.doc_id, e)
            scores.append(None)
    return scores


def rerank(question: str, items: Sequence[EvidenceItem], scorer, window: int = RERANK_WINDOW,
           batch_size: int = RERANK_BATCH_SIZE) -> List[EvidenceItem]:
    """Re-sort the first `window` items by scorer output; returns new items.

    Items the scorer could not score follow the scored ones in BM25 order and
    get no rerank_rank; items beyond the window follow after them.
    """
    ordered = sorted(items, key=lambda item: item.bm25_rank)
    head, tail = ordered[:window], ordered[window:]

    scored, failed = [], []
    for start in range(0, len(head), batch_size):
        batch = head[start: start + batch_size]
        for item, score in zip(batch, _score_batch(scorer, question, batch)):
            if score is None:
                failed.append(replace(item, flags=item.flags + ["rerank_failed"]))
            else:
                scored.append(replace(item, rerank_score=float(score), flags=list(item.flags)))

    scored.sort(key=lambda item: (-item.rerank_score, item.bm25_rank))
    for rank, item in enumerate(scored, start=1):
        item.rerank_rank = rank
    return scored + failed + [replace(item, flags=list(item.flags)) for item in tail]


# --- relevance judging -----------------------------------------------------

def parse_verdict(reply: str) -> Optional[bool]:
    match = _VERDICT.match(reply or "")
    if not match:
        return None
    return match.group(1).lower() == "relevant"


class RelevanceJudge:
    """LLM relevance judge with a per-(question, doc) cache."""

    def __init__(self, gateway, snippet_chars: int = JUDGE_SNIPPET_CHARS):
        self.gateway = gateway
        self.snippet_chars = snippet_chars
        self._cache: Dict[Tuple[str, str], Tuple[bool, Optional[str]]] = {}
        self._lock = threading.Lock()

    def verdict(self, question: str, item: EvidenceItem) -> Tuple[bool, Optional[str]]:
        key = (question, item.doc_id)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        result = self._ask(question, item)
        with self._lock:
            self._cache.setdefault(key, result)
        return result

    def _ask(self, question: str, item: EvidenceItem) -> Tuple[bool, Optional[str]]:
        retry_note = ""
        for attempt in range(2):
            reply = self.gateway.complete("relevance_judge", question=question, title=item.title,
                                          text=item.body[: self.snippet_chars], retry_note=retry_note)
            verdict = parse_verdict(reply)
            if verdict is not None:
                return verdict, None
            retry_note = "\n\nStart your answer with RELEVANT or NOT RELEVANT."
        logger.warning("unparseable relevance verdict for %s", item.doc_id)
        return False, "judge_unparseable"


def judge_relevance(question: str, item: EvidenceItem, judge: RelevanceJudge) -> bool:
    """Label `item` in place; returns the label."""
    verdict, flag = judge.verdict(question, item)
    item.relevant = verdict
    if flag and flag not in item.flags:
        item.flags.append(flag)
    return verdict


def _judge_all(question: str, items: Sequence[EvidenceItem], judge: Optional[RelevanceJudge],
               jobs: int) -> None:
    pending = [item for item in items if item.relevant is None]
    if not pending:
        return
    if judge is None:
        raise ValueError("unjudged items and no relevance judge")
    verdicts = parallel_map(lambda item: judge.verdict(question, item), pending, jobs)
    # applied in rank order regardless of completion order
    for item, (verdict, flag) in zip(pending, verdicts):
        item.relevant = verdict
        if flag and flag not in item.flags:
            item.flags.append(flag)


def _lazy_filter(items: Sequence[EvidenceItem], quota: int, window: int, eligible, question: str,
                 judge: Optional[RelevanceJudge], jobs: int, chunk: int) -> List[EvidenceItem]:
    kept: List[EvidenceItem] = []
    scan = list(items[:window])
    for start in range(0, len(scan), chunk):
        block = scan[start: start + chunk]
        _judge_all(question, [item for item in block if eligible(item)], judge, jobs)
        for item in block:
            if eligible(item) and item.relevant:
                kept.append(item)
                if len(kept) == quota:
                    return kept
    return kept


def filter_top10_relevant(items: Sequence[EvidenceItem], question: str = "", judge: RelevanceJudge = None,
                          window: int = FILTER_WINDOW, quota: int = TOP_RELEVANT, jobs: int = 1,
                          chunk: int = JUDGE_BATCH_SIZE) -> List[EvidenceItem]:
    """First `quota` relevant items within the top `window`, in list order."""
    return _lazy_filter(items, quota, window, lambda item: True, question, judge, jobs, chunk)


def filter_top3_trusted(items: Sequence[EvidenceItem], table: TrustTable = None,
                        threshold: float = TRUST_THRESHOLD, question: str = "",
                        judge: RelevanceJudge = None, window: int = FILTER_WINDOW,
                        quota: int = TOP_TRUSTED, jobs: int = 1,
                        chunk: int = JUDGE_BATCH_SIZE) -> List[EvidenceItem]:
    """First `quota` items within the top `window` that are relevant with trust >= threshold."""
    if table is not None:
        for item in items[:window]:
            attach_trust(item, table)
    return _lazy_filter(items, quota, window, lambda item: item.trust >= threshold,
                        question, judge, jobs, chunk)


def compute_metrics(items: Sequence[EvidenceItem], stage: str, question: str = "",
                    judge: RelevanceJudge = None, depth: int = METRICS_DEPTH,
                    jobs: int = 1) -> RetrievalMetrics:
    """Relevance and mean trust over the top min(depth, n) items of the stage's ordering."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage: {stage}")
    top = list(items[:depth])
    if not top:
        return RetrievalMetrics(stage, 0.0, 0.0, 0, ["empty_result"])
    _judge_all(question, top, judge, jobs)
    relevant = sum(1 for item in top if item.relevant)
    return RetrievalMetrics(stage, relevant / len(top), sum(item.trust for item in top) / len(top), len(top))


# --- per-question orchestration -------------------------------------------

@dataclass
class QuestionEvidence:
    topic_id: str
    question_index: int
    question: str
    plan: object
    pre_rerank: List[EvidenceItem]
    post_rerank: List[EvidenceItem]
    top10_relevant: List[EvidenceItem]
    top3_trusted: List[EvidenceItem]
    pre_metrics: RetrievalMetrics
    post_metrics: RetrievalMetrics
    flags: List[str] = field(default_factory=list)

    @property
    def qid(self) -> str:
        return f"{self.topic_id}_{self.question_index}"

    @property
    def report_evidence(self) -> List[EvidenceItem]:
        """Trusted set when non-empty, otherwise the relevant set."""
        return self.top3_trusted or self.top10_relevant

    def to_json(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "question_index": self.question_index,
            "question": self.question,
            "strategy": self.plan.strategy,
            "plan": self.plan.to_json(),
            "pre_rerank": [item.to_json() for item in self.pre_rerank],
            "post_rerank": [item.to_json() for item in self.post_rerank],
            "top10_relevant": [item.doc_id for item in self.top10_relevant],
            "top3_trusted": [item.doc_id for item in self.top3_trusted],
            "metrics": {
                PRE_RERANK: self.pre_metrics.to_json(),
                POST_RERANK: self.post_metrics.to_json(),
                "delta": delta(self.post_metrics, self.pre_metrics),
            },
            "flags": list(self.flags),
        }


class EvidencePipeline:
    """Runs every evidence stage for one question at a time; safe to share across threads."""

    def __init__(self, index, table: TrustTable, judge: RelevanceJudge, scorer,
                 k_retrieve: int = K_RETRIEVE, rerank_window: int = RERANK_WINDOW,
                 filter_window: int = FILTER_WINDOW, trust_threshold: float = TRUST_THRESHOLD,
                 jobs: int = 1):
        if not filter_window <= rerank_window <= k_retrieve:
            raise ValueError("need filter_window <= rerank_window <= k_retrieve")
        self.index = index
        self.table = table
        self.judge = judge
        self.scorer = scorer
        self.k_retrieve = k_retrieve
        self.rerank_window = rerank_window
        self.filter_window = filter_window
        self.trust_threshold = trust_threshold
        self.jobs = jobs

    def run(self, topic_id: str, question_index: int, question: str, plan) -> QuestionEvidence:
        pre = retrieve(self.index, plan, self.k_retrieve, self.table)
        post = rerank(question, pre, self.scorer, self.rerank_window)

        pre_metrics = compute_metrics(pre, PRE_RERANK, question, self.judge, jobs=self.jobs)
        post_metrics = compute_metrics(post, POST_RERANK, question, self.judge, jobs=self.jobs)

        top10 = filter_top10_relevant(post, question, self.judge, self.filter_window, jobs=self.jobs)
        top3 = filter_top3_trusted(post, None, self.trust_threshold, question, self.judge,
                                   self.filter_window, jobs=self.jobs)

        flags = []
        if plan.fallback:
            flags.append("plan_fallback")
        if not pre:
            flags.append("no_results")
        if any("rerank_failed" in item.flags for item in post):
            flags.append("rerank_failed")
        return QuestionEvidence(topic_id, question_index, question, plan, pre, post,
                                top10, top3, pre_metrics, post_metrics, flags)


def strategy_summary(results: Iterable[QuestionEvidence]) -> List[dict]:
    """Mean/std per stage plus fallback rate and deltas for one strategy's questions."""
    results = list(results)
    if not results:
        return []
    frame = pd.DataFrame([
        {"stage": stage, "relevance_at_10": m.relevance_at_10, "mean_trust_at_10": m.mean_trust_at_10}
        for r in results
        for stage, m in ((PRE_RERANK, r.pre_metrics), (POST_RERANK, r.post_metrics))
    ])
    grouped = frame.groupby("stage")
    means, stds = grouped.mean(), grouped.std(ddof=0)
    fallback_rate = sum(1 for r in results if r.plan.fallback) / len(results)
    rows = [{
        "stage": stage,
        "questions": len(results),
        "relevance_at_10": float(means.loc[stage, "relevance_at_10"]),
        "relevance_at_10_std": float(stds.loc[stage, "relevance_at_10"]),
        "mean_trust_at_10": float(means.loc[stage, "mean_trust_at_10"]),
        "mean_trust_at_10_std": float(stds.loc[stage, "mean_trust_at_10"]),
        "fallback_rate": fallback_rate,
    } for stage in STAGES]
    pre_row, post_row = rows
    for row in rows:
        row["delta_relevance_at_10"] = post_row["relevance_at_10"] - pre_row["relevance_at_10"]
        row["delta_mean_trust_at_10"] = post_row["mean_trust_at_10"] - pre_row["mean_trust_at_10"]
    return rows


def trec_run_lines(results: Iterable[QuestionEvidence], tag: str, stage: str = POST_RERANK) -> List[str]:
    """`qid Q0 docid rank score tag` lines for the chosen ordering."""
    lines = []
    for result in results:
        if stage == PRE_RERANK:
            ranked = [(item.doc_id, item.bm25_score) for item in result.pre_rerank]
        else:
            ranked = [(item.doc_id, item.rerank_score if item.rerank_score is not None else item.bm25_score)
                      for item in result.post_rerank]
        for rank, (doc_id, score) in enumerate(ranked, start=1):
            lines.append(f"{result.qid} Q0 {doc_id} {rank} {score:.6f} {tag}")
    return lines
