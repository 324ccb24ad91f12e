"""
Cited answers per question and the article-level trustworthiness report.

The model cites numbered evidence as "[n]"; answers are rewritten to cite
"[doc_id]" so that the report prompt and the final artifacts carry stable ids.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Set, Tuple

from config.settings import (
    ANSWER_SNIPPET_CHARS,
    INSUFFICIENT_EVIDENCE_TEXT,
    MAX_REPORT_WORDS,
    VERBATIM_TOKEN_LIMIT,
)
from src.indexing.analyzer import tokenize
from src.utils.errors import CitationIntegrityError
from src.utils.helpers import word_count

logger = logging.getLogger(__name__)

_INDEX_CITATION = re.compile(r"\[\s*(\d+(?:\s*,\s*\d+)*)\s*\]")
_ID_CITATION = re.compile(r"\[([^\[\]\s][^\[\]]*)\]")
_SENTENCE_END = re.compile(r"[.!?](?:\[[^\[\]]*\])*[\"')\]]*$")


@dataclass
class CitedAnswer:
    question: str
    answer_text: str
    citations: List[str]
    flags: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"question": self.question, "answer_text": self.answer_text,
                "citations": list(self.citations), "flags": list(self.flags)}

    @classmethod
    def from_json(cls, data: dict) -> "CitedAnswer":
        return cls(data["question"], data["answer_text"], list(data.get("citations", [])),
                   list(data.get("flags", [])))


@dataclass
class TrustReport:
    topic_id: str
    answers: List[CitedAnswer]
    report_text: str
    report_citations: List[str]
    word_count: int
    flags: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "report_text": self.report_text,
            "citations": list(self.report_citations),
            "word_count": self.word_count,
            "flags": list(self.flags),
            "answers": [a.to_json() for a in self.answers],
        }


def _clean_spacing(text: str) -> str:
    text = re.sub(r"[ \t]+", " ", text)
    text = re.sub(r" +([.,;:!?])", r"\1", text)
    return text.strip()


def map_index_citations(text: str, doc_ids: Sequence[str]) -> Tuple[str, List[str], int]:
    """Rewrite "[n]" / "[n, m]" into "[doc_id]" markers.

    Returns (rewritten text, cited doc_ids in order of first appearance,
    number of out-of-range indices dropped).
    """
    cited: List[str] = []
    dropped = 0

    def _rewrite(match):
        nonlocal dropped
        parts = []
        for raw in match.group(1).split(","):
            n = int(raw)
            if 1 <= n <= len(doc_ids):
                doc_id = doc_ids[n - 1]
                parts.append(f"[{doc_id}]")
                if doc_id not in cited:
                    cited.append(doc_id)
            else:
                dropped += 1
        return "".join(parts)

    return _clean_spacing(_INDEX_CITATION.sub(_rewrite, text)), cited, dropped


def filter_id_citations(text: str, allowed: Iterable[str]) -> Tuple[str, List[str], int]:
    """Keep "[doc_id]" markers whose id is allowed; drop the rest."""
    allowed = set(allowed)
    cited: List[str] = []
    dropped = 0

    def _check(match):
        nonlocal dropped
        doc_id = match.group(1).strip()
        if doc_id in allowed:
            if doc_id not in cited:
                cited.append(doc_id)
            return f"[{doc_id}]"
        dropped += 1
        return ""

    return _clean_spacing(_ID_CITATION.sub(_check, text)), cited, dropped


def citations_in(text: str) -> List[str]:
    return list(dict.fromkeys(m.strip() for m in _ID_CITATION.findall(text)))


def longest_shared_run(text: str, sources: Iterable[str], limit: int = VERBATIM_TOKEN_LIMIT) -> bool:
    """True when `text` shares more than `limit` consecutive tokens with any source."""
    n = limit + 1
    tokens = tokenize(text)
    if len(tokens) < n:
        return False
    grams = {tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1)}
    for source in sources:
        src = tokenize(source)
        for i in range(len(src) - n + 1):
            if tuple(src[i: i + n]) in grams:
                return True
    return False


def truncate_to_words(text: str, max_words: int) -> Tuple[str, bool]:
    """Cut at the last sentence end within `max_words`; hard cut when there is none."""
    words = text.split()
    if len(words) <= max_words:
        return text, False
    head = words[:max_words]
    for i in range(len(head) - 1, -1, -1):
        if _SENTENCE_END.search(head[i]):
            return " ".join(head[: i + 1]), True
    return " ".join(head), True


def evidence_block(evidence: Sequence, snippet_chars: int = ANSWER_SNIPPET_CHARS) -> str:
    lines = []
    for n, item in enumerate(evidence, start=1):
        header = f"[{n}] {item.title}".rstrip()
        if item.url:
            header += f" ({item.url})"
        lines.append(f"{header}\n{item.body[:snippet_chars]}")
    return "\n\n".join(lines)


def answer_question(question: str, evidence: Sequence, gateway,
                    snippet_chars: int = ANSWER_SNIPPET_CHARS) -> CitedAnswer:
    """One cited answer from filtered evidence items (which carry title/body text)."""
    if not evidence:
        return CitedAnswer(question, INSUFFICIENT_EVIDENCE_TEXT, [], ["no_evidence"])

    doc_ids = [item.doc_id for item in evidence]
    block = evidence_block(evidence, snippet_chars)
    flags: List[str] = []
    retry_note = ""
    for attempt in range(2):
        reply = gateway.complete("answer_question", question=question, evidence=block,
                                 evidence_titles=[item.title for item in evidence], retry_note=retry_note)
        text, cited, dropped = map_index_citations(reply, doc_ids)
        if cited:
            break
        retry_note = (f"\n\nYour previous answer cited no evidence. Cite the documents you use "
                      f"with bracketed numbers between 1 and {len(evidence)}.")
    if dropped:
        flags.append("citation_out_of_range")
    if not cited:
        flags.append("no_valid_citations")
        logger.warning("answer without valid citations for %r", question)
    if longest_shared_run(text, (item.body for item in evidence)):
        flags.append("verbatim_overlap")
        logger.warning("answer copies more than %d tokens from its evidence", VERBATIM_TOKEN_LIMIT)
    return CitedAnswer(question, text, cited, flags)


def _answers_block(answers: Sequence[CitedAnswer]) -> str:
    return "\n\n".join(f"Q: {a.question}\nA: {a.answer_text}" for a in answers)


def synthesize_report(topic_id: str, answers: Sequence[CitedAnswer], gateway,
                      max_words: int = MAX_REPORT_WORDS) -> TrustReport:
    if not answers:
        raise ValueError("synthesize_report needs at least one answer")
    allowed = {doc_id for a in answers for doc_id in a.citations}
    flags: List[str] = []

    retry_note = ""
    for attempt in range(2):
        reply = gateway.complete("synthesize_report", answers=_answers_block(answers), max_words=max_words,
                                 answer_texts=[a.answer_text for a in answers], retry_note=retry_note)
        text, _, dropped = filter_id_citations(reply, allowed)
        if word_count(text) <= max_words:
            break
        retry_note = f"\n\nYour previous report was too long. Use at most {max_words} words."

    if dropped:
        flags.append("report_citation_dropped")
    text, truncated = truncate_to_words(text, max_words)
    if truncated:
        flags.append("truncated")
    if not any(a.citations for a in answers):
        flags.append("low_evidence")
    if not text:
        flags.append("empty_report")

    return TrustReport(topic_id, list(answers), text, citations_in(text), word_count(text), flags)


def check_citations(reports: Iterable[Mapping], evidence: Mapping[str, Set[str]]) -> int:
    """Verify every cited doc_id appears in its topic's evidence; returns citations checked."""
    checked = 0
    for report in reports:
        topic_id = report["topic_id"]
        known = evidence.get(topic_id, set())
        cited = list(report.get("citations", []))
        cited += citations_in(report.get("report_text", ""))
        for answer in report.get("answers", []):
            cited += list(answer.get("citations", []))
        for doc_id in cited:
            if doc_id not in known:
                raise CitationIntegrityError(topic_id, doc_id)
            checked += 1
    return checked


def evidence_doc_ids(records: Iterable[Mapping]) -> Dict[str, Set[str]]:
    """topic_id -> every doc_id present in that topic's evidence dump records."""
    known: Dict[str, Set[str]] = {}
    for record in records:
        ids = known.setdefault(record["topic_id"], set())
        for stage in ("pre_rerank", "post_rerank"):
            ids.update(item["doc_id"] for item in record.get(stage, []))
    return known
