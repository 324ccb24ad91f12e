"""
Rubric-based scoring of generated questions.

Each rubric question has an importance weight (4/2/1). It is matched to the
most similar system question(s), the match is labelled on a four-step
similarity scale (1/0.5/0/0), and the rubric question scores
weight x best label. The topic score is the mean of those (raw) or their sum
divided by the summed weights (normalized, the default).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from config.settings import MATCH_TOP_M, MAX_MATCH_TOP_M
from src.utils.errors import ScoringError

logger = logging.getLogger(__name__)

ALL_TOPICS = "*"


class Importance(Enum):
    HAVE_TO_KNOW = "have_to_know"
    GOOD_TO_KNOW = "good_to_know"
    NICE_TO_KNOW = "nice_to_know"

    @property
    def weight(self) -> int:
        return {"have_to_know": 4, "good_to_know": 2, "nice_to_know": 1}[self.value]


class SimilarityLabel(Enum):
    VERY_SIMILAR = "very_similar"
    SIMILAR = "similar"
    DIFFERENT = "different"
    VERY_DIFFERENT = "very_different"

    @property
    def points(self) -> float:
        return {"very_similar": 1.0, "similar": 0.5, "different": 0.0, "very_different": 0.0}[self.value]

    @classmethod
    def parse(cls, text: str) -> "SimilarityLabel":
        norm = (text or "").strip().lower().replace("-", "_").replace(" ", "_")
        for label in (cls.VERY_SIMILAR, cls.VERY_DIFFERENT, cls.SIMILAR, cls.DIFFERENT):
            if norm.startswith(label.value):
                return label
        raise ScoringError(f"unknown similarity label: {text!r}")


@dataclass(frozen=True)
class RubricEntry:
    question: str
    importance: Importance

    @property
    def weight(self) -> int:
        return self.importance.weight


@dataclass
class SimilarityJudgment:
    rubric_question: str
    matched_system_questions: List[str]
    labels: List[SimilarityLabel]
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.labels) != len(self.matched_system_questions):
            raise ScoringError("one label per matched system question is required")

    @property
    def best_points(self) -> float:
        return max((label.points for label in self.labels), default=0.0)


def parse_rubric(entries: Sequence[Mapping]) -> List[RubricEntry]:
    rubric = []
    for i, entry in enumerate(entries):
        try:
            rubric.append(RubricEntry(entry["question"], Importance(entry["importance"])))
        except (KeyError, TypeError, ValueError) as e:
            raise ScoringError(f"rubric entry {i} is malformed: {e}") from e
    return rubric


def load_rubrics(data) -> Dict[str, List[RubricEntry]]:
    """A bare list applies to every topic; a mapping is keyed by topic id."""
    if isinstance(data, list):
        return {ALL_TOPICS: parse_rubric(data)}
    if isinstance(data, dict):
        return {topic: parse_rubric(entries) for topic, entries in data.items()}
    raise ScoringError("rubric file must hold a list or a topic -> list mapping")


def parse_judgments(entries: Sequence[Mapping], rubric: Sequence[RubricEntry],
                    system_questions: Sequence[str]) -> List[SimilarityJudgment]:
    """Judgments ordered by rubric index; every rubric entry must be covered exactly once."""
    by_index: Dict[int, SimilarityJudgment] = {}
    for entry in entries:
        try:
            index = int(entry["rubric_index"])
            matches = entry.get("matches", [])
            system = [system_questions[int(m["system_index"])] for m in matches]
            labels = [SimilarityLabel.parse(m["label"]) for m in matches]
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ScoringError(f"malformed judgment {entry!r}: {e}") from e
        if not 0 <= index < len(rubric) or index in by_index:
            raise ScoringError(f"judgment rubric_index {index} is out of range or repeated")
        by_index[index] = SimilarityJudgment(rubric[index].question, system, labels)
    if len(by_index) != len(rubric):
        raise ScoringError(f"{len(by_index)} judgments for {len(rubric)} rubric questions")
    return [by_index[i] for i in range(len(rubric))]


def match_questions(rubric: Sequence[RubricEntry], system_questions: Sequence[str], gateway,
                    top_m: int = MATCH_TOP_M) -> List[Tuple[int, List[int]]]:
    """Top-m system questions per rubric question by embedding cosine; ties -> lower index."""
    if not system_questions:
        raise ScoringError("no system questions to match against")
    if not 1 <= top_m <= MAX_MATCH_TOP_M:
        raise ValueError(f"top_m must be between 1 and {MAX_MATCH_TOP_M}")
    if not rubric:
        return []
    top_m = min(top_m, len(system_questions))
    rubric_vecs = np.array([e.normalized() for e in gateway.embed([r.question for r in rubric])])
    system_vecs = np.array([e.normalized() for e in gateway.embed(list(system_questions))])
    cosines = rubric_vecs @ system_vecs.T
    matches = []
    for i, row in enumerate(cosines):
        order = np.argsort(-row, kind="stable")[:top_m]
        matches.append((i, [int(j) for j in order]))
    return matches


def llm_judgments(rubric: Sequence[RubricEntry], system_questions: Sequence[str],
                  matches: Sequence[Tuple[int, List[int]]], gateway) -> List[SimilarityJudgment]:
    """Similarity labels from the LLM judge; unofficial, for offline comparison only."""
    judgments = []
    for rubric_index, candidates in matches:
        texts, labels, flags = [], [], []
        for j in candidates:
            reply = gateway.complete("similarity_judge", rubric_question=rubric[rubric_index].question,
                                     system_question=system_questions[j])
            try:
                label = SimilarityLabel.parse(reply)
            except ScoringError:
                logger.warning("unreadable similarity label %r", reply)
                label = SimilarityLabel.VERY_DIFFERENT
                flags.append("label_unparseable")
            texts.append(system_questions[j])
            labels.append(label)
        judgments.append(SimilarityJudgment(rubric[rubric_index].question, texts, labels, flags))
    return judgments


def qgen_score(rubric: Sequence[RubricEntry], judgments: Sequence[SimilarityJudgment],
               normalize: bool = True) -> float:
    if not rubric:
        raise ScoringError("empty rubric")
    if len(judgments) != len(rubric):
        raise ScoringError(f"{len(judgments)} judgments for {len(rubric)} rubric questions")
    scores = [entry.weight * judgment.best_points for entry, judgment in zip(rubric, judgments)]
    if normalize:
        return sum(scores) / sum(entry.weight for entry in rubric)
    return sum(scores) / len(scores)
