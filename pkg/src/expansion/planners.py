"""
Query planners: turn a question into a boolean QueryPlan.

    baseline    analyzed question tokens, OR-ed
    boolean     baseline OR-ed with LLM keyphrases (multi-word phrases AND-ed)
    cot         same shape, terms taken from the TERMS line of step-by-step reasoning
    structured  LLM-written bool/must/should/match JSON mapped onto the AST

LLM-backed planners re-prompt once on unusable output and then fall back to
the baseline plan with `fallback=True`.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple

from config.settings import BOOLEAN_COMBINATOR, MAX_KEYPHRASES, MAX_QUERY_DEPTH, MIN_KEYPHRASES
from src.expansion.query_ast import (
    FIELDS,
    And,
    Or,
    QueryNode,
    Term,
    from_dict,
    parse_query_string,
    term_texts,
    to_dict,
    to_query_string,
    validate_ast,
)
from src.indexing.analyzer import analyze
from src.utils.errors import QueryPlanError

logger = logging.getLogger(__name__)

STRATEGIES = ("baseline", "boolean", "cot", "structured")

_LIST_MARKER = re.compile(r"^\s*(?:\(?\d+[.):]|[-*•])\s*")
_TERMS_LINE = re.compile(r"^\s*\**\s*TERMS\s*\**\s*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


@dataclass
class QueryPlan:
    strategy: str
    ast: QueryNode
    source_question: str
    expansion_text: Optional[str] = None
    requested_strategy: Optional[str] = None
    fallback: bool = False
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise QueryPlanError(f"unknown strategy: {self.strategy}")
        if self.requested_strategy is None:
            self.requested_strategy = self.strategy
        if self.strategy == "baseline" and self.expansion_text is not None:
            raise QueryPlanError("baseline plans carry no expansion text")
        validate_ast(self.ast)

    @property
    def query_string(self) -> str:
        return to_query_string(self.ast)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "requested_strategy": self.requested_strategy,
            "question": self.source_question,
            "ast": to_dict(self.ast),
            "query_string": self.query_string,
            "expansion_text": self.expansion_text,
            "fallback": self.fallback,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, data: dict) -> "QueryPlan":
        return cls(strategy=data["strategy"], ast=from_dict(data["ast"]),
                   source_question=data["question"], expansion_text=data.get("expansion_text"),
                   requested_strategy=data.get("requested_strategy"),
                   fallback=bool(data.get("fallback", False)), warnings=list(data.get("warnings", [])))


def _dedup(tokens: Sequence[str]) -> Tuple[str, ...]:
    return tuple(dict.fromkeys(tokens))


def _group_node(tokens: Sequence[str], field_name: str = "all", boost: float = 1.0) -> QueryNode:
    if len(tokens) == 1:
        return Term(field_name, tokens[0], boost)
    return And(tuple(Term(field_name, token, boost) for token in tokens))


def baseline_ast(question: str) -> QueryNode:
    tokens = _dedup(analyze(question))
    if not tokens:
        raise QueryPlanError("empty query")
    if len(tokens) == 1:
        return Term("all", tokens[0])
    return Or(tuple(Term("all", token) for token in tokens))


def plan_baseline(question: str) -> QueryPlan:
    if not question or not question.strip():
        raise QueryPlanError("empty query")
    return QueryPlan("baseline", baseline_ast(question), question)


def _fallback(question: str, requested: str, reason: str) -> QueryPlan:
    logger.warning("%s expansion fell back to baseline: %s", requested, reason)
    plan = plan_baseline(question)
    plan.requested_strategy = requested
    plan.fallback = True
    plan.warnings.append(f"fallback: {reason}")
    return plan


def expansion_groups(phrases: Sequence[str], question: str) -> List[Tuple[str, ...]]:
    """Analyzed token groups for keyphrases, minus anything the baseline already holds."""
    base_tokens = _dedup(analyze(question))
    seen_groups = {base_tokens}
    seen_singles = set(base_tokens)
    groups = []
    for phrase in phrases:
        tokens = _dedup(analyze(phrase))
        if not tokens or tokens in seen_groups:
            continue
        if len(tokens) == 1 and tokens[0] in seen_singles:
            continue
        seen_groups.add(tokens)
        if len(tokens) == 1:
            seen_singles.add(tokens[0])
        groups.append(tokens)
    return groups


def _expanded_ast(question: str, groups: Sequence[Tuple[str, ...]], combinator: str) -> QueryNode:
    base = baseline_ast(question)
    if not groups:
        return base
    nodes = tuple(_group_node(g) for g in groups)
    if combinator == "and":
        return And((base, nodes[0] if len(nodes) == 1 else Or(nodes)))
    return Or((base,) + nodes)


def parse_keyphrases(text: str, limit: int = MAX_KEYPHRASES) -> List[str]:
    phrases = []
    for line in (text or "").splitlines():
        line = _LIST_MARKER.sub("", line).strip().strip("\"'*").strip()
        if line and analyze(line):
            phrases.append(line)
    return phrases[:limit]


def plan_boolean(question: str, gateway, combinator: str = BOOLEAN_COMBINATOR) -> QueryPlan:
    retry_note = ""
    for attempt in range(2):
        reply = gateway.complete("boolean_keyphrases", question=question, min_phrases=MIN_KEYPHRASES,
                                 max_phrases=MAX_KEYPHRASES, retry_note=retry_note)
        phrases = parse_keyphrases(reply)
        if phrases:
            groups = expansion_groups(phrases, question)
            return QueryPlan("boolean", _expanded_ast(question, groups, combinator), question,
                             expansion_text=reply)
        retry_note = (f"\n\nYour previous reply had no usable keyphrases. List {MIN_KEYPHRASES} to "
                      f"{MAX_KEYPHRASES} keyphrases, one per line, nothing else.")
    return _fallback(question, "boolean", "no parseable keyphrases")


def parse_terms_line(text: str) -> Optional[List[str]]:
    matches = _TERMS_LINE.findall(text or "")
    if not matches:
        return None
    terms = [t.strip().strip("\"'*.").strip() for t in matches[-1].split(";")]
    return [t for t in terms if t and analyze(t)]


def plan_cot(question: str, gateway, combinator: str = BOOLEAN_COMBINATOR) -> QueryPlan:
    retry_note = ""
    for attempt in range(2):
        reply = gateway.complete("cot_expansion", question=question, retry_note=retry_note)
        terms = parse_terms_line(reply)
        if terms:
            groups = expansion_groups(terms, question)
            return QueryPlan("cot", _expanded_ast(question, groups, combinator), question,
                             expansion_text=reply)
        retry_note = ("\n\nYour previous reply did not end with a usable line of the form "
                      "'TERMS: term one; term two'. Finish with that line.")
    return _fallback(question, "cot", "missing TERMS line")


# --- structured DSL --------------------------------------------------------

def extract_json(text: str) -> Any:
    text = text or ""
    fenced = _FENCE.search(text)
    if fenced:
        text = fenced.group(1)
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise QueryPlanError("no JSON object in reply")
    try:
        return json.loads(text[start: end + 1])
    except json.JSONDecodeError as e:
        raise QueryPlanError(f"invalid JSON: {e.msg}") from e


def _match_node(clause: Any) -> Optional[QueryNode]:
    if not isinstance(clause, dict) or len(clause) != 1 or not isinstance(clause.get("match"), dict):
        raise QueryPlanError(f"clause must be {{\"match\": {{...}}}}: {clause!r}")
    match = clause["match"]
    if len(match) != 1:
        raise QueryPlanError("match must name exactly one field")
    (field_name, options), = match.items()
    if isinstance(options, str):
        options = {"query": options}
    if not isinstance(options, dict) or not isinstance(options.get("query"), str):
        raise QueryPlanError(f"match on '{field_name}' needs a string 'query'")
    if set(options) - {"query", "boost"}:
        raise QueryPlanError(f"unsupported match options: {sorted(set(options) - {'query', 'boost'})}")
    boost = options.get("boost", 1.0)
    if isinstance(boost, bool) or not isinstance(boost, (int, float)) or not boost > 0:
        raise QueryPlanError(f"boost must be a number > 0, got {boost!r}")
    field_name = field_name if field_name in FIELDS else "all"
    tokens = _dedup(analyze(options["query"]))
    if not tokens:
        logger.debug("match query %r has no indexable tokens, skipped", options["query"])
        return None
    return _group_node(tokens, field_name, float(boost))


def _bool_node(obj: Any) -> QueryNode:
    if not isinstance(obj, dict) or set(obj) != {"bool"} or not isinstance(obj["bool"], dict):
        raise QueryPlanError("query must be a single {\"bool\": {...}} object")
    body = obj["bool"]
    if not body:
        raise QueryPlanError("empty bool query")
    unknown = set(body) - {"must", "should"}
    if unknown:
        raise QueryPlanError(f"unsupported bool keys: {sorted(unknown)}")

    parts = {}
    for key in ("must", "should"):
        clauses = body.get(key, [])
        if isinstance(clauses, dict):
            clauses = [clauses]
        if not isinstance(clauses, list):
            raise QueryPlanError(f"'{key}' must be a list")
        nodes = []
        for clause in clauses:
            node = _bool_node(clause) if isinstance(clause, dict) and "bool" in clause else _match_node(clause)
            if node is not None:
                nodes.append(node)
        parts[key] = nodes

    must, should = parts["must"], parts["should"]
    if not must and not should:
        raise QueryPlanError("bool query has no usable clauses")
    if must and should:
        return And(tuple(must) + (Or(tuple(should)),))
    if must:
        return And(tuple(must))
    return Or(tuple(should))


def parse_structured(text: str, max_depth: int = MAX_QUERY_DEPTH) -> QueryNode:
    return validate_ast(_bool_node(extract_json(text)), max_depth)


def plan_structured(question: str, gateway) -> QueryPlan:
    retry_note = ""
    for attempt in range(2):
        reply = gateway.complete("structured_query", question=question, retry_note=retry_note)
        try:
            ast = parse_structured(reply)
        except QueryPlanError as e:
            logger.debug("structured reply rejected: %s", e)
            retry_note = (f"\n\nYour previous reply was rejected ({e}). Reply with one JSON object "
                          "that follows the grammar exactly.")
            continue
        plan = QueryPlan("structured", ast, question, expansion_text=reply)
        missing = set(analyze(question)) - term_texts(ast)
        if missing:
            plan.warnings.append("omits baseline tokens: " + ", ".join(sorted(missing)))
        return plan
    return _fallback(question, "structured", "invalid query DSL")


def analyze_ast(node: QueryNode) -> Optional[QueryNode]:
    """Run term texts through the analyzer; terms with no tokens left are dropped."""
    if isinstance(node, Term):
        tokens = _dedup(analyze(node.text))
        return _group_node(tokens, node.field, node.boost) if tokens else None
    children = tuple(c for c in (analyze_ast(child) for child in node.children) if c is not None)
    if not children:
        return None
    return And(children) if isinstance(node, And) else Or(children)


_QUERY_SYNTAX = re.compile(r"\b(?:AND|OR)\b|[:^()]")


def plan_from_text(text: str) -> QueryPlan:
    """Ad-hoc plan: query-string syntax when the text uses it, else a baseline plan."""
    if not _QUERY_SYNTAX.search(text or ""):
        return plan_baseline(text)
    try:
        ast = analyze_ast(parse_query_string(text))
    except QueryPlanError:
        logger.debug("not a query string, searching as a question: %r", text)
        return plan_baseline(text)
    if ast is None:
        raise QueryPlanError("empty query")
    return QueryPlan("baseline", validate_ast(ast), text)


def make_plan(question: str, strategy: str, gateway=None, combinator: str = BOOLEAN_COMBINATOR) -> QueryPlan:
    if strategy == "baseline":
        return plan_baseline(question)
    if strategy == "boolean":
        return plan_boolean(question, gateway, combinator)
    if strategy == "cot":
        return plan_cot(question, gateway, combinator)
    if strategy == "structured":
        return plan_structured(question, gateway)
    raise QueryPlanError(f"unknown strategy: {strategy}")
