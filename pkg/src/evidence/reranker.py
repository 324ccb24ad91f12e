"""
Relevance scorers for re-ranking.

HTTP contract of the external cross-encoder service:

    POST {url}/score
    request:  {"query": "<question>", "passages": ["<text>", ...]}
    response: {"scores": [<float>, ...]}     # one score per passage, same order
"""
from __future__ import annotations

import logging
import math
from typing import List, Protocol, Sequence

from config.settings import RERANKER_URL, GATEWAY_MAX_RETRIES, GATEWAY_TIMEOUT_SECONDS
from src.indexing.analyzer import analyze
from src.llm.gateway import JsonHttpClient
from src.utils.errors import TransportError

logger = logging.getLogger(__name__)


class RelevanceScorer(Protocol):
    def score(self, query: str, passages: Sequence[str]) -> List[float]:
        ...


class StubScorer:
    """Number of distinct analyzed question tokens present in the passage."""

    def score(self, query: str, passages: Sequence[str]) -> List[float]:
        q_tokens = set(analyze(query))
        return [float(len(q_tokens & set(analyze(p)))) for p in passages]


class HttpRerankerScorer:
    def __init__(self, url: str = RERANKER_URL, client: JsonHttpClient = None,
                 max_retries: int = GATEWAY_MAX_RETRIES, timeout: float = GATEWAY_TIMEOUT_SECONDS):
        self.client = client or JsonHttpClient(url, max_retries=max_retries, timeout=timeout)

    def score(self, query: str, passages: Sequence[str]) -> List[float]:
        data = self.client.post("score", {"query": query, "passages": list(passages)})
        scores = data.get("scores") if isinstance(data, dict) else None
        if not isinstance(scores, list) or len(scores) != len(passages):
            raise TransportError("re-ranker returned a malformed score list")
        try:
            values = [float(s) for s in scores]
        except (TypeError, ValueError) as e:
            raise TransportError("re-ranker returned non-numeric scores") from e
        if not all(math.isfinite(v) for v in values):
            raise TransportError("re-ranker returned non-finite scores")
        return values


def make_scorer(backend: str = "stub", url: str = RERANKER_URL) -> RelevanceScorer:
    if backend == "stub":
        return StubScorer()
    if backend == "http":
        return HttpRerankerScorer(url)
    raise ValueError(f"unknown re-ranker backend: {backend}")
