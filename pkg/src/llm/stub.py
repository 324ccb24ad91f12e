"""
Default responders for the stub backend.

Each responder gets the chat request (with its template variables) and a keyed
hash of the prompt text, and returns plausible model output for that template.
Everything is a pure function of its inputs.
"""
from __future__ import annotations

import json
from collections import Counter
from typing import Dict, List

from src.indexing.analyzer import STOPWORDS, analyze, tokenize

QUESTION_TEMPLATES = [
    "Who owns the outlet that published this story about {kw}?",
    "Who funds the organizations quoted on {kw}?",
    "What expertise do the sources cited about {kw} have?",
    "What evidence supports the main claim about {kw}?",
    "Have independent sources confirmed the reported facts on {kw}?",
    "What is the track record of the reporter covering {kw}?",
    "Does the publisher have a known political leaning on {kw}?",
    "Which perspectives on {kw} are missing from the article?",
    "How have other outlets reported on {kw}?",
    "Why is the story about {kw} being published now?",
    "Who benefits if readers accept the claims about {kw}?",
    "Are the statistics about {kw} presented with full context?",
    "What editorial policies govern corrections at this outlet?",
    "Is the study on {kw} peer reviewed?",
    "What conflicts of interest might affect the coverage of {kw}?",
    "When was the information about {kw} last updated?",
    "Who wrote this article? And why was it written?",
    "What do we know about the funding of the groups involved in {kw} and how did the authors verify every number, quote and chart they used across the whole piece before publication?",
]

EXPANSIONS = {
    "fund": ["financial backing", "donors"],
    "own": ["media ownership", "parent company"],
    "owner": ["media ownership", "parent company"],
    "publish": ["publisher", "editorial policy"],
    "expert": ["credentials", "qualifications"],
    "evid": ["fact check", "data"],
    "bias": ["editorial slant", "partisan"],
    "polit": ["partisan", "political affiliation"],
    "studi": ["peer review", "research"],
    "sourc": ["primary sources", "attribution"],
    "claim": ["fact check", "verification"],
    "report": ["investigative reporting", "journalist"],
    "statist": ["data", "numbers"],
    "conflict": ["conflict of interest", "disclosure"],
}


def content_words(text: str) -> List[str]:
    """Unstemmed non-stopword words in order of first appearance (deduplicated)."""
    seen = []
    for token in tokenize(text):
        if token not in STOPWORDS and len(token) > 2 and not token.isdigit() and token not in seen:
            seen.append(token)
    return seen


def salient_keywords(text: str, limit: int = 6) -> List[str]:
    tokens = [t for t in tokenize(text) if t not in STOPWORDS and len(t) > 3 and not t.isdigit()]
    counts = Counter(tokens)
    first = {}
    for i, token in enumerate(tokens):
        first.setdefault(token, i)
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return ranked[:limit] or ["this topic"]


def question_generation(req, h: int) -> str:
    variables = req.variables
    keywords = salient_keywords(f"{variables.get('title', '')} {variables.get('article', '')}")
    n_target = int(variables.get("n_target", 10))
    start = h % len(QUESTION_TEMPLATES)
    lines = []
    for i in range(n_target):
        template = QUESTION_TEMPLATES[(start + i) % len(QUESTION_TEMPLATES)]
        keyword = keywords[(h >> (8 + i)) % len(keywords)] if keywords else "this topic"
        lines.append(f"{i + 1}. {template.format(kw=keyword)}")
    return "\n".join(lines)


def question_filter(req, h: int) -> str:
    return "KEEP"


def craap_scoring(req, h: int) -> str:
    names = ["Currency", "Relevance", "Authority", "Accuracy", "Purpose"]
    return "\n".join(f"{name}: {1 + (h >> (3 * i)) % 5}" for i, name in enumerate(names))


def boolean_keyphrases(req, h: int) -> str:
    words = content_words(req.variables.get("question", ""))
    phrases: List[str] = []
    for left, right in zip(words, words[1:]):
        phrases.append(f"{left} {right}")
    for word in words:
        for stem in analyze(word):
            phrases.extend(EXPANSIONS.get(stem, []))
    phrases.extend(words)
    unique = list(dict.fromkeys(phrases))
    limit = int(req.variables.get("max_phrases", 8))
    return "\n".join(unique[:limit])


def cot_expansion(req, h: int) -> str:
    question = req.variables.get("question", "")
    words = content_words(question)
    terms = list(words)
    for word in words:
        for stem in analyze(word):
            terms.extend(EXPANSIONS.get(stem, []))
    terms = list(dict.fromkeys(terms))[:8] or ["news"]
    reasoning = [
        f"The question asks about: {question}",
        "To answer it we need documents that describe the people and organizations involved,",
        "their funding and track record, and independent reporting on the same facts.",
        "Useful documents will mention the key entities and related vocabulary.",
    ]
    return "\n".join(reasoning + ["TERMS: " + "; ".join(terms)])


def structured_query(req, h: int) -> str:
    words = content_words(req.variables.get("question", ""))[:5] or ["news"]
    should = []
    for word in words:
        should.append({"match": {"title": {"query": word, "boost": 2.0}}})
        should.append({"match": {"body": {"query": word, "boost": 1.0}}})
    return json.dumps({"bool": {"should": should}})


def relevance_judge(req, h: int) -> str:
    q_terms = set(analyze(req.variables.get("question", "")))
    d_terms = set(analyze(f"{req.variables.get('title', '')} {req.variables.get('text', '')}"))
    overlap = len(q_terms & d_terms)
    needed = min(2, len(q_terms)) or 1
    if overlap >= needed:
        return f"RELEVANT - the document shares {overlap} key terms with the question"
    return "NOT RELEVANT - the document does not address the question"


def answer_question(req, h: int) -> str:
    titles = list(req.variables.get("evidence_titles", []))
    question = req.variables.get("question", "").rstrip("?")
    if not titles:
        return "No evidence is available."
    first = titles[0] or "the first source"
    sentence = f"According to {first} [1], the available reporting bears on the question of {question.lower()}"
    if len(titles) > 1:
        second = titles[1] or "another source"
        sentence += f", and {second} [2] adds further context"
    return sentence + "."


def synthesize_report(req, h: int) -> str:
    answers = list(req.variables.get("answer_texts", []))
    return "Trustworthiness report. " + " ".join(answers)


def similarity_judge(req, h: int) -> str:
    a = set(analyze(req.variables.get("rubric_question", "")))
    b = set(analyze(req.variables.get("system_question", "")))
    union = a | b
    jaccard = len(a & b) / len(union) if union else 0.0
    if jaccard >= 0.6:
        return "very_similar"
    if jaccard >= 0.3:
        return "similar"
    if jaccard >= 0.1:
        return "different"
    return "very_different"


DEFAULT_RESPONDERS: Dict[str, object] = {
    "question_generation": question_generation,
    "question_filter": question_filter,
    "craap_scoring": craap_scoring,
    "boolean_keyphrases": boolean_keyphrases,
    "cot_expansion": cot_expansion,
    "structured_query": structured_query,
    "relevance_judge": relevance_judge,
    "answer_question": answer_question,
    "synthesize_report": synthesize_report,
    "similarity_judge": similarity_judge,
}
