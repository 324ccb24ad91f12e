"""
Boolean query AST shared by the planners and the index.

Leaves are single analyzed tokens bound to a field with a boost; And/Or
combine them. Two serial forms exist: a JSON-friendly dict and a query string
(`AND(title:ownership^2.0, OR(fund, publish))`, infix `a AND b OR c` also
accepted on input).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterator, Tuple

import pyparsing as pp

from config.settings import MAX_QUERY_DEPTH
from src.utils.errors import QueryPlanError

FIELDS = ("title", "headings", "body", "all")


class QueryNode:
    """Marker base class for AST nodes."""


@dataclass(frozen=True)
class Term(QueryNode):
    field: str
    text: str
    boost: float = 1.0

    def __post_init__(self):
        if self.field not in FIELDS:
            raise QueryPlanError(f"unknown field: {self.field}")
        if not self.text:
            raise QueryPlanError("empty term text")
        if not self.boost > 0:
            raise QueryPlanError(f"boost must be > 0, got {self.boost}")
        object.__setattr__(self, "boost", float(self.boost))


@dataclass(frozen=True)
class And(QueryNode):
    children: Tuple[QueryNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise QueryPlanError("And needs at least one child")


@dataclass(frozen=True)
class Or(QueryNode):
    children: Tuple[QueryNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise QueryPlanError("Or needs at least one child")


def depth(node: QueryNode) -> int:
    if isinstance(node, Term):
        return 1
    return 1 + max(depth(child) for child in node.children)


def validate_ast(node: QueryNode, max_depth: int = MAX_QUERY_DEPTH) -> QueryNode:
    if not isinstance(node, QueryNode):
        raise QueryPlanError(f"not a query node: {node!r}")
    if depth(node) > max_depth:
        raise QueryPlanError(f"query tree deeper than {max_depth}")
    return node


def iter_terms(node: QueryNode) -> Iterator[Term]:
    if isinstance(node, Term):
        yield node
        return
    for child in node.children:
        yield from iter_terms(child)


def term_texts(node: QueryNode) -> set:
    return {term.text for term in iter_terms(node)}


# --- dict form -------------------------------------------------------------

def to_dict(node: QueryNode) -> Dict[str, Any]:
    if isinstance(node, Term):
        return {"term": {"field": node.field, "text": node.text, "boost": node.boost}}
    key = "and" if isinstance(node, And) else "or"
    return {key: [to_dict(child) for child in node.children]}


def from_dict(data: Dict[str, Any]) -> QueryNode:
    if not isinstance(data, dict) or len(data) != 1:
        raise QueryPlanError(f"malformed query node: {data!r}")
    (key, value), = data.items()
    if key == "term":
        return Term(value["field"], value["text"], value.get("boost", 1.0))
    if key in ("and", "or"):
        if not isinstance(value, list):
            raise QueryPlanError(f"'{key}' expects a list")
        children = tuple(from_dict(child) for child in value)
        return And(children) if key == "and" else Or(children)
    raise QueryPlanError(f"unknown query node type: {key}")


# --- query string form -----------------------------------------------------

def to_query_string(node: QueryNode) -> str:
    if isinstance(node, Term):
        prefix = "" if node.field == "all" else f"{node.field}:"
        suffix = "" if node.boost == 1.0 else f"^{node.boost!r}"
        return f"{prefix}{node.text}{suffix}"
    op = "AND" if isinstance(node, And) else "OR"
    return f"{op}(" + ", ".join(to_query_string(child) for child in node.children) + ")"


def _build_grammar() -> pp.ParserElement:
    pp.ParserElement.enable_packrat()

    and_kw = pp.Keyword("AND")
    or_kw = pp.Keyword("OR")
    lpar, rpar, colon, caret = map(pp.Suppress, "():^")

    field = pp.one_of(list(FIELDS), as_keyword=True)
    word = pp.Regex(r"[\w']+")
    number = pp.pyparsing_common.fnumber

    term = (
        ~(and_kw | or_kw)
        + pp.Opt(field("field") + colon)
        + word("text")
        + pp.Opt(caret + number("boost"))
    )
    term.set_parse_action(
        lambda t: Term(t.get("field", "all"), t["text"], float(t.get("boost", 1.0)))
    )

    expr = pp.Forward()
    call = (and_kw | or_kw)("op") + lpar + pp.Group(pp.DelimitedList(expr))("args") + rpar

    def _call_action(t):
        children = tuple(t["args"])
        return And(children) if t["op"] == "AND" else Or(children)

    call.set_parse_action(_call_action)

    def _nodes(t):
        return tuple(x for x in t[0] if isinstance(x, QueryNode))

    expr <<= pp.infix_notation(
        call | term,
        [
            (and_kw, 2, pp.OpAssoc.LEFT, lambda t: And(_nodes(t))),
            (pp.Opt(or_kw), 2, pp.OpAssoc.LEFT, lambda t: Or(_nodes(t))),
        ],
    )
    return expr


_GRAMMAR = _build_grammar()


def parse_query_string(text: str) -> QueryNode:
    try:
        node = _GRAMMAR.parse_string(text, parse_all=True)[0]
    except pp.ParseBaseException as e:
        raise QueryPlanError(f"cannot parse query '{text}': {e}") from e
    return validate_ast(node)
