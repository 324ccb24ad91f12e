"""
Question quality diagnostics: lexical overlap with the article, embedding
similarity and LLM-assigned CRAAP component scores.

None of these gate selection; they are recorded for the quality dashboard.
"""
from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from src.indexing.analyzer import analyze
from src.indexing.index import Document, IndexStats
from config.settings import ARTICLE_PROMPT_CHARS

logger = logging.getLogger(__name__)

CRAAP_COMPONENTS = ("currency", "relevance", "authority", "accuracy", "purpose")
_CRAAP_ALIASES = {"relevant": "relevance", "relevancy": "relevance"}
_CRAAP_LINE = re.compile(
    r"^[\s*#\-]*(currency|relevance|relevancy|relevant|authority|accuracy|purpose)\**\s*[:=\-]\s*\**\s*([1-5])\b",
    re.IGNORECASE | re.MULTILINE,
)
_RETRY_NOTE = ("\n\nYour previous reply could not be read. Answer with exactly five lines "
               "of the form 'Component: n' where n is an integer from 1 to 5.")


@dataclass
class QualityMetrics:
    tfidf_cosine: float
    jaccard: float
    embed_cosine: float
    craap: Optional[Dict[str, int]] = None
    flags: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "tfidf_cosine": self.tfidf_cosine,
            "jaccard": self.jaccard,
            "embed_cosine": self.embed_cosine,
            "craap": dict(self.craap) if self.craap is not None else None,
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, data: dict) -> "QualityMetrics":
        return cls(data["tfidf_cosine"], data["jaccard"], data["embed_cosine"],
                   data.get("craap"), list(data.get("flags", [])))


def jaccard(a_tokens, b_tokens) -> float:
    a, b = set(a_tokens), set(b_tokens)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def tfidf_cosine(a_tokens, b_tokens, stats: IndexStats) -> float:
    """Cosine of raw-count TF x BM25-style IDF vectors."""
    a, b = Counter(a_tokens), Counter(b_tokens)
    if not a or not b:
        return 0.0
    idf = {term: stats.idf(term) for term in set(a) | set(b)}
    dot = sum(a[t] * b[t] * idf[t] ** 2 for t in set(a) & set(b))
    norm_a = math.sqrt(sum((count * idf[t]) ** 2 for t, count in a.items()))
    norm_b = math.sqrt(sum((count * idf[t]) ** 2 for t, count in b.items()))
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return min(1.0, dot / (norm_a * norm_b))


def parse_craap(text: str) -> Optional[Dict[str, int]]:
    scores = {}
    for name, value in _CRAAP_LINE.findall(text or ""):
        key = _CRAAP_ALIASES.get(name.lower(), name.lower())
        scores.setdefault(key, int(value))
    if set(scores) != set(CRAAP_COMPONENTS):
        return None
    return {name: scores[name] for name in CRAAP_COMPONENTS}


def score_craap(question: str, article: Document, gateway) -> Optional[Dict[str, int]]:
    """CRAAP scores for one question, re-prompting once on an unreadable reply."""
    for retry_note in ("", _RETRY_NOTE):
        reply = gateway.complete("craap_scoring", question=question,
                                 article=article.body[:ARTICLE_PROMPT_CHARS], retry_note=retry_note)
        scores = parse_craap(reply)
        if scores is not None:
            return scores
    logger.warning("CRAAP reply unparseable for question %r", question)
    return None


def quality_metrics(question, article: Document, stats: IndexStats, gateway,
                    with_craap: bool = True) -> QualityMetrics:
    text = getattr(question, "text", question)
    q_tokens = analyze(text)
    a_tokens = analyze(article.body)
    q_vec, a_vec = gateway.embed([text, article.body or article.title or " "])
    metrics = QualityMetrics(
        tfidf_cosine=tfidf_cosine(q_tokens, a_tokens, stats),
        jaccard=jaccard(q_tokens, a_tokens),
        embed_cosine=q_vec.cosine(a_vec),
    )
    if with_craap:
        metrics.craap = score_craap(text, article, gateway)
        if metrics.craap is None:
            metrics.flags.append("craap_unparseable")
    return metrics
