"""Class-expression rule language.

A small Manchester-syntax subset used to define threat-actor types::

    ((hasVisibilityAttribute some Visibility) or
     (hasVisibilityAttribute value visibility:dontCare))
    and (hasResourcesAttribute value resources:government)

Grammar (``and`` binds tighter than ``or``; both are left-associative)::

    expr     := and_expr ("or" and_expr)*
    and_expr := atom ("and" atom)*
    atom     := "(" expr ")"
              | property ("value" | "atLeast" | "atMost") vocabulary ":" term
              | property "some" ClassName

Expressions are resolved against a :class:`~actortype.profile.Profile` at
parse time, so evaluation never fails.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping, Union

from .errors import (
    ExpressionError,
    ExpressionSyntaxError,
    UnknownReferenceError,
    UnknownTermError,
)

if TYPE_CHECKING:
    from .profile import Profile

#: Placeholder term reported by :func:`expression_terms` for ``some`` leaves.
SOME = "*"


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class And:
    children: tuple[ClassExpression, ...]

    def __post_init__(self) -> None:
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple[ClassExpression, ...]

    def __post_init__(self) -> None:
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


@dataclass(frozen=True)
class Some:
    """Holds when the attribute has at least one value."""

    property: str
    kind: str
    vocabulary: str


@dataclass(frozen=True)
class Value:
    property: str
    kind: str
    vocabulary: str
    term: str


@dataclass(frozen=True)
class AtLeast:
    """Some observed term ranks at or above ``term``."""

    property: str
    kind: str
    vocabulary: str
    term: str


@dataclass(frozen=True)
class AtMost:
    """Observed terms exist and all rank at or below ``term``."""

    property: str
    kind: str
    vocabulary: str
    term: str


ClassExpression = Union[And, Or, Some, Value, AtLeast, AtMost]
Leaf = Union[Some, Value, AtLeast, AtMost]
_KEYWORD_FOR = {Value: "value", AtLeast: "atLeast", AtMost: "atMost"}
_CLASS_FOR = {v: k for k, v in _KEYWORD_FOR.items()}


def is_leaf(node: ClassExpression) -> bool:
    return not isinstance(node, (And, Or))


# ---------------------------------------------------------------------------
# Attribute profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeProfile:
    """Observed attribute terms for one activity, keyed by attribute kind.

    Empty sets are dropped, so a missing kind and an empty kind compare equal.
    Construct through :meth:`from_mapping` to validate and canonicalise terms
    against a profile.
    """

    entries: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {k: frozenset(v) for k, v in self.entries.items() if v}
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    def __hash__(self) -> int:
        return hash(tuple(self.entries.items()))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Iterable[str]], profile: Profile) -> AttributeProfile:
        entries: dict[str, set[str]] = {}
        for kind, terms in data.items():
            attr = profile.attribute(kind)
            if isinstance(terms, str):
                terms = [terms]
            entries[kind] = {profile.canonical_term(attr.vocabulary, t) for t in terms}
        return cls(entries)

    def get(self, kind: str) -> frozenset[str]:
        return self.entries.get(kind, frozenset())

    def issubset(self, other: AttributeProfile) -> bool:
        return all(terms <= other.get(kind) for kind, terms in self.entries.items())

    def to_dict(self) -> dict[str, list[str]]:
        return {k: sorted(v) for k, v in self.entries.items()}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)|(?P<lparen>\()|(?P<rparen>\))"
    r"|(?P<word>[A-Za-z_][A-Za-z0-9_\-]*(?::[A-Za-z_][A-Za-z0-9_\-]*)?)"
)
_KEYWORDS = {"and", "or", "value", "some", "atLeast", "atMost"}


@dataclass(frozen=True)
class _Token:
    kind: str  # lparen | rparen | word | eof
    text: str
    line: int
    column: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExpressionSyntaxError(
                f"unexpected character {source[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, text, line, pos - line_start + 1))
        else:
            for i, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, profile: Profile) -> None:
        self.tokens = _tokenize(source)
        self.i = 0
        self.profile = profile

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Token | None = None) -> ExpressionSyntaxError:
        tok = tok or self.peek()
        return ExpressionSyntaxError(message, tok.line, tok.column)

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "word" and tok.text == word

    def parse(self) -> ClassExpression:
        node = self.parse_or()
        if self.peek().kind != "eof":
            raise self.error(f"unexpected {self.peek().text!r}")
        return node

    def parse_or(self) -> ClassExpression:
        items = [self.parse_and()]
        while self.at_keyword("or"):
            self.advance()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self) -> ClassExpression:
        items = [self.parse_atom()]
        while self.at_keyword("and"):
            self.advance()
            items.append(self.parse_atom())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_atom(self) -> ClassExpression:
        tok = self.peek()
        if tok.kind == "lparen":
            self.advance()
            node = self.parse_or()
            if self.peek().kind != "rparen":
                raise self.error("expected ')'")
            self.advance()
            return node
        if tok.kind != "word" or tok.text in _KEYWORDS:
            shown = tok.text or "end of input"
            raise self.error(f"expected '(' or a property name, found {shown!r}")
        return self.parse_restriction()

    def parse_restriction(self) -> Leaf:
        prop_tok = self.advance()
        try:
            attr = self.profile.attribute_by_property(prop_tok.text)
        except UnknownReferenceError:
            raise ExpressionError(
                f"unknown property {prop_tok.text!r}", prop_tok.line, prop_tok.column
            ) from None
        vocab = self.profile.vocabulary(attr.vocabulary)
        op = self.advance()
        if op.kind != "word" or op.text not in ("value", "some", "atLeast", "atMost"):
            raise self.error("expected 'value', 'some', 'atLeast' or 'atMost'", op)

        operand = self.advance()
        if operand.kind != "word":
            raise self.error("expected a class name or prefixed term", operand)

        if op.text == "some":
            if ":" in operand.text or operand.text.lower() != vocab.id.lower():
                raise ExpressionError(
                    f"{prop_tok.text} ranges over {vocab.id!r}, not {operand.text!r}",
                    operand.line,
                    operand.column,
                )
            return Some(attr.property_name, attr.kind, vocab.id)

        if ":" not in operand.text:
            raise self.error(f"expected vocabulary:term, found {operand.text!r}", operand)
        prefix, term = operand.text.split(":", 1)
        if prefix != vocab.id:
            raise ExpressionError(
                f"{prop_tok.text} takes {vocab.id} terms, not {operand.text!r}",
                operand.line,
                operand.column,
            )
        canonical = vocab.canonical(term)
        if canonical is None:
            raise ExpressionError(
                f"unknown term {operand.text!r}", operand.line, operand.column
            ) from UnknownTermError(vocab.id, term)
        if op.text in ("atLeast", "atMost") and not vocab.ordered:
            raise ExpressionError(
                f"{op.text} needs an ordered vocabulary; {vocab.id!r} is unordered",
                op.line,
                op.column,
            )
        return _CLASS_FOR[op.text](attr.property_name, attr.kind, vocab.id, canonical)


def parse_expression(source: str, profile: Profile) -> ClassExpression:
    """Parse rule text into an AST with canonical term ids.

    Raises :class:`ExpressionSyntaxError` for malformed text and
    :class:`ExpressionError` for references the profile cannot resolve.
    Both carry ``line`` and ``column``.
    """
    return _Parser(source, profile).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


def print_expression(expr: ClassExpression) -> str:
    """Render fully parenthesised canonical text; ``parse(print(e)) == e``."""
    if isinstance(expr, And):
        return "(" + " and ".join(print_expression(c) for c in expr.children) + ")"
    if isinstance(expr, Or):
        return "(" + " or ".join(print_expression(c) for c in expr.children) + ")"
    if isinstance(expr, Some):
        return f"({expr.property} some {expr.vocabulary[:1].upper()}{expr.vocabulary[1:]})"
    return f"({expr.property} {_KEYWORD_FOR[type(expr)]} {expr.vocabulary}:{expr.term})"


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SatisfactionTrace:
    """Per-node evaluation record; mirrors the expression tree."""

    node: ClassExpression
    satisfied: bool
    children: tuple[SatisfactionTrace, ...] = ()
    matched_terms: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        out: dict = {"expression": print_expression(self.node), "satisfied": self.satisfied}
        if is_leaf(self.node):
            out["matched_terms"] = sorted(self.matched_terms)
        else:
            out["children"] = [c.to_dict() for c in self.children]
        return out

    def leaves(self) -> Iterator[SatisfactionTrace]:
        if not self.children:
            yield self
        for c in self.children:
            yield from c.leaves()


def evaluate(
    expr: ClassExpression,
    attrs: AttributeProfile | Mapping[str, Iterable[str]],
    profile: Profile,
) -> SatisfactionTrace:
    """Evaluate ``expr`` over observed attributes.

    Missing attribute kinds count as empty sets. ``AtMost`` is false on an
    empty set.
    """
    if not isinstance(attrs, AttributeProfile):
        attrs = AttributeProfile({k: frozenset(v) for k, v in attrs.items()})
    return _eval(expr, attrs, profile)


def _eval(expr: ClassExpression, attrs: AttributeProfile, profile: Profile) -> SatisfactionTrace:
    if isinstance(expr, (And, Or)):
        children = tuple(_eval(c, attrs, profile) for c in expr.children)
        combine = all if isinstance(expr, And) else any
        return SatisfactionTrace(expr, combine(c.satisfied for c in children), children)

    observed = attrs.get(expr.kind)
    if isinstance(expr, Some):
        return SatisfactionTrace(expr, bool(observed), matched_terms=observed)
    if isinstance(expr, Value):
        hit = observed & {expr.term}
        return SatisfactionTrace(expr, bool(hit), matched_terms=hit)

    vocab = profile.vocabulary(expr.vocabulary)
    bound = vocab.rank(expr.term)
    if isinstance(expr, AtLeast):
        hit = frozenset(t for t in observed if vocab.rank(t) >= bound)
        return SatisfactionTrace(expr, bool(hit), matched_terms=hit)
    within = frozenset(t for t in observed if vocab.rank(t) <= bound)
    ok = bool(observed) and within == observed
    return SatisfactionTrace(expr, ok, matched_terms=within)


def expression_terms(expr: ClassExpression) -> frozenset[tuple[str, str]]:
    """All (kind, term) references in ``expr``; ``some`` leaves report :data:`SOME`."""
    if isinstance(expr, (And, Or)):
        out: set[tuple[str, str]] = set()
        for c in expr.children:
            out |= expression_terms(c)
        return frozenset(out)
    if isinstance(expr, Some):
        return frozenset({(expr.kind, SOME)})
    return frozenset({(expr.kind, expr.term)})


def top_level_conjuncts(expr: ClassExpression) -> tuple[ClassExpression, ...]:
    return expr.children if isinstance(expr, And) else (expr,)
