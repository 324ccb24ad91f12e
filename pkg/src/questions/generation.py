"""
Critical-question generation for news articles.

Stage order per article: generate candidates -> rule filter (compound / too
long) -> optional LLM filter -> embed + k-means -> centroid-nearest selection
-> quality diagnostics for the selected questions.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence

from config.settings import (
    ARTICLE_PROMPT_CHARS,
    CANDIDATE_SLACK,
    CANDIDATES_PER_ARTICLE,
    MAX_QUESTION_WORDS,
    QUESTIONS_PER_ARTICLE,
    RANDOM_SEED,
)
from src.indexing.index import Document, IndexStats
from src.llm.gateway import Embedding
from src.questions.clustering import ClusterSelection, kmeans
from src.questions.quality import QualityMetrics, quality_metrics
from src.utils.errors import GenerationError

logger = logging.getLogger(__name__)

_MARKER = re.compile(r"^\s*(?:\(?\d+[.):]|[-*•])\s*")
_INTERROGATIVES = r"(?:who|whom|whose|what|when|where|why|how|which)"
_COMPOUND = re.compile(
    rf"^\W*(?:{_INTERROGATIVES}|is|are|was|were|do|does|did|can|could|should|will|would|has|have)\b"
    rf".*?\b(?:and|or)\s+{_INTERROGATIVES}\b",
    re.IGNORECASE,
)
_RETRY_NOTE = ("\n\nYour previous reply contained no usable questions. Reply with numbered "
               "questions only, one per line, each ending with a question mark.")


class QuestionStatus(str, Enum):
    CANDIDATE = "candidate"
    REJECTED_COMPOUND = "rejected_compound"
    REJECTED_LENGTH = "rejected_length"
    SELECTED = "selected"


@dataclass(frozen=True)
class Question:
    topic_id: str
    text: str
    status: QuestionStatus = QuestionStatus.CANDIDATE
    embedding: Optional[Embedding] = field(default=None, compare=False)
    quality: Optional[QualityMetrics] = field(default=None, compare=False)
    flags: tuple = ()

    def __post_init__(self):
        if not self.text.strip().endswith("?"):
            raise ValueError(f"question must end with '?': {self.text!r}")
        if self.status == QuestionStatus.SELECTED and self.embedding is None:
            raise ValueError("selected questions need an embedding")

    def with_flag(self, flag: str) -> "Question":
        return replace(self, flags=self.flags + (flag,))

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "status": self.status.value,
            "quality": self.quality.to_json() if self.quality else None,
            "flags": list(self.flags),
        }


@dataclass
class TopicQuestions:
    """All candidates for one article with their final statuses."""
    topic_id: str
    questions: List[Question]
    selection: Optional[ClusterSelection] = None
    flags: List[str] = field(default_factory=list)

    @property
    def selected(self) -> List[Question]:
        return [q for q in self.questions if q.status == QuestionStatus.SELECTED]

    def to_json(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "questions": [q.to_json() for q in self.questions],
            "flags": list(self.flags),
        }


def parse_question_lines(text: str) -> List[str]:
    """One question per line; list markers stripped, non-questions dropped."""
    questions = []
    for line in (text or "").splitlines():
        line = _MARKER.sub("", line).strip().strip("*\"'").strip()
        if line.endswith("?") and len(line) > 1:
            questions.append(line)
    return questions


def generate_questions(article: Document, n_target: int = CANDIDATES_PER_ARTICLE, gateway=None,
                       slack: int = CANDIDATE_SLACK) -> List[Question]:
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    if not article.body.strip():
        raise GenerationError(f"article {article.doc_id} has an empty body")

    for retry_note in ("", _RETRY_NOTE):
        reply = gateway.complete("question_generation", title=article.title,
                                 article=article.body[:ARTICLE_PROMPT_CHARS],
                                 n_target=n_target, retry_note=retry_note)
        texts = parse_question_lines(reply)
        if texts:
            break
        logger.warning("no questions parsed for %s, re-prompting", article.doc_id)
    else:
        raise GenerationError(f"no parseable questions for article {article.doc_id}")

    return [Question(article.doc_id, text) for text in texts[: n_target + slack]]


def is_compound(text: str) -> bool:
    return text.count("?") > 1 or bool(_COMPOUND.search(text))


def semantic_filter(questions: Sequence[Question], max_words: int = MAX_QUESTION_WORDS) -> List[Question]:
    """Rule filter; returns new Question objects, order preserved."""
    result = []
    for question in questions:
        if question.status != QuestionStatus.CANDIDATE:
            result.append(question)
        elif is_compound(question.text):
            result.append(replace(question, status=QuestionStatus.REJECTED_COMPOUND))
        elif len(question.text.split()) > max_words:
            result.append(replace(question, status=QuestionStatus.REJECTED_LENGTH))
        else:
            result.append(question)
    return result


def llm_filter(questions: Sequence[Question], gateway) -> List[Question]:
    """KEEP/REJECT judgement for candidates that passed the rule filter."""
    result = []
    for question in questions:
        if question.status == QuestionStatus.CANDIDATE:
            reply = gateway.complete("question_filter", question=question.text).strip().upper()
            if reply.startswith("REJECT"):
                question = replace(question, status=QuestionStatus.REJECTED_COMPOUND).with_flag("llm_rejected")
        result.append(question)
    return result


def select_diverse(questions: Sequence[Question], k: int = QUESTIONS_PER_ARTICLE, seed: int = RANDOM_SEED,
                   gateway=None) -> List[Question]:
    """One question per k-means cluster, ordered by cluster id."""
    selected, _ = _select(list(questions), k, seed, gateway)
    return selected


def _select(questions: List[Question], k: int, seed: int, gateway):
    candidates = [q for q in questions if q.status == QuestionStatus.CANDIDATE]
    if not candidates:
        logger.warning("no candidates left to select from")
        return [], None
    embeddings = gateway.embed([q.text for q in candidates])
    unit = [Embedding(e.normalized()) for e in embeddings]

    if len(candidates) < k:
        logger.warning("only %d candidates for k=%d; selecting all", len(candidates), k)
        return [replace(q, status=QuestionStatus.SELECTED, embedding=e).with_flag("fewer_candidates_than_k")
                for q, e in zip(candidates, unit)], None

    selection = kmeans([e.vector for e in unit], k, seed=seed)
    selected = [replace(candidates[i], status=QuestionStatus.SELECTED, embedding=unit[i])
                for i in selection.selected_indices]
    return selected, selection


def process_article(article: Document, gateway, stats: IndexStats, k: int = QUESTIONS_PER_ARTICLE,
                    n_candidates: int = CANDIDATES_PER_ARTICLE, max_words: int = MAX_QUESTION_WORDS,
                    seed: int = RANDOM_SEED, use_llm_filter: bool = False,
                    with_quality: bool = True) -> TopicQuestions:
    """Full question stage for one article."""
    questions = generate_questions(article, n_candidates, gateway)
    questions = semantic_filter(questions, max_words)
    if use_llm_filter:
        questions = llm_filter(questions, gateway)

    selected, selection = _select(questions, k, seed, gateway)
    if with_quality:
        selected = [replace(q, quality=quality_metrics(q, article, stats, gateway)) for q in selected]

    by_position = {}
    candidate_positions = [i for i, q in enumerate(questions) if q.status == QuestionStatus.CANDIDATE]
    if selection is not None:
        for question, index in zip(selected, selection.selected_indices):
            by_position[candidate_positions[index]] = question
    else:
        for question, position in zip(selected, candidate_positions):
            by_position[position] = question

    final = [by_position.get(i, q) for i, q in enumerate(questions)]
    # selected questions listed first, in cluster order
    order = [candidate_positions[i] for i in selection.selected_indices] if selection else sorted(by_position)
    ordered = [final[i] for i in order] + [q for i, q in enumerate(final) if i not in by_position]

    flags = []
    if len(selected) < k:
        flags.append("fewer_candidates_than_k")
    logger.info("topic %s: %d candidates, %d selected", article.doc_id, len(questions), len(selected))
    return TopicQuestions(article.doc_id, ordered, selection, flags)
