"""Characterization profiles: vocabularies, attribute registry and type rules.

A profile is plain data (``profiles/tal.json`` ships with the package) so
type definitions can be revised without touching code.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import IO, Any, Iterable, Mapping, Union

from .errors import (
    CardinalityError,
    DuplicateIdError,
    ExpressionError,
    ProfileError,
    ProfileSyntaxError,
    UnknownReferenceError,
    UnknownTermError,
    UnorderedVocabularyError,
)
from .expr import SOME, ClassExpression, expression_terms, parse_expression, print_expression

Source = Union[bytes, str, IO[bytes], IO[str]]


class Hostility(str, enum.Enum):
    HOSTILE = "hostile"
    NON_HOSTILE = "nonHostile"


@dataclass(frozen=True)
class Term:
    id: str
    label: str = ""
    definition: str = ""
    aliases: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Vocabulary:
    """Controlled vocabulary; when ``ordered`` the term list is a rank scale."""

    id: str
    ordered: bool
    terms: tuple[Term, ...]
    _lookup: dict[str, str] = field(init=False, repr=False, compare=False)
    _ranks: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        lookup: dict[str, str] = {}
        for term in self.terms:
            if term.id in lookup:
                raise DuplicateIdError(f"vocabulary {self.id!r}: duplicate term {term.id!r}")
            lookup[term.id] = term.id
        for term in self.terms:
            for alias in term.aliases:
                if alias in lookup:
                    raise DuplicateIdError(
                        f"vocabulary {self.id!r}: alias {alias!r} of {term.id!r} collides "
                        f"with an existing term or alias"
                    )
                lookup[alias] = term.id
        object.__setattr__(self, "_lookup", lookup)
        object.__setattr__(self, "_ranks", {t.id: i for i, t in enumerate(self.terms)})

    @property
    def term_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.terms)

    def canonical(self, term: str) -> str | None:
        return self._lookup.get(term)

    def rank(self, term: str) -> int:
        if not self.ordered:
            raise UnorderedVocabularyError(f"vocabulary {self.id!r} is unordered")
        canonical = self.canonical(term)
        if canonical is None:
            raise UnknownTermError(self.id, term)
        return self._ranks[canonical]


@dataclass(frozen=True)
class Cardinality:
    min: int
    max: int | None  # None = unbounded

    def __post_init__(self) -> None:
        if self.min < 0:
            raise CardinalityError(f"cardinality min {self.min} is negative")
        if self.max is not None and self.min > self.max:
            raise CardinalityError(f"cardinality min {self.min} exceeds max {self.max}")


@dataclass(frozen=True)
class AttributeKind:
    kind: str
    property_name: str
    vocabulary: str
    cardinality: Cardinality
    annotation: str = ""


@dataclass(frozen=True)
class TypeRule:
    id: str
    label: str
    hostility: Hostility
    expression: ClassExpression
    source: str = ""
    aliases: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Profile:
    profile_version: str
    vocabularies: tuple[Vocabulary, ...]
    attributes: tuple[AttributeKind, ...]
    types: tuple[TypeRule, ...]
    _vocab: dict = field(init=False, repr=False, compare=False)
    _attr: dict = field(init=False, repr=False, compare=False)
    _prop: dict = field(init=False, repr=False, compare=False)
    _type: dict = field(init=False, repr=False, compare=False)
    _type_alias: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        vocab = _unique_index(self.vocabularies, lambda v: v.id, "vocabulary")
        attr = _unique_index(self.attributes, lambda a: a.kind, "attribute kind")
        prop = _unique_index(self.attributes, lambda a: a.property_name, "property name")
        for a in self.attributes:
            if a.vocabulary not in vocab:
                raise UnknownReferenceError(
                    f"attribute {a.kind!r} refers to unknown vocabulary {a.vocabulary!r}"
                )
        types = _unique_index(self.types, lambda t: t.id, "type")
        alias: dict[str, str] = {}
        for t in self.types:
            for a in t.aliases:
                if a in types or a in alias:
                    raise DuplicateIdError(f"type alias {a!r} of {t.id!r} is already in use")
                alias[a] = t.id
        for name, value in (("_vocab", vocab), ("_attr", attr), ("_prop", prop),
                            ("_type", types), ("_type_alias", alias)):
            object.__setattr__(self, name, value)
        for t in self.types:
            _check_rule_references(t, self)

    def vocabulary(self, vocab_id: str) -> Vocabulary:
        try:
            return self._vocab[vocab_id]
        except KeyError:
            raise UnknownReferenceError(f"unknown vocabulary {vocab_id!r}") from None

    def attribute(self, kind: str) -> AttributeKind:
        try:
            return self._attr[kind]
        except KeyError:
            raise UnknownReferenceError(f"unknown attribute kind {kind!r}") from None

    def attribute_by_property(self, property_name: str) -> AttributeKind:
        try:
            return self._prop[property_name]
        except KeyError:
            raise UnknownReferenceError(f"unknown property {property_name!r}") from None

    def type_rule(self, type_id: str) -> TypeRule:
        resolved = self.resolve_type_id(type_id)
        if resolved is None:
            raise UnknownReferenceError(f"unknown type {type_id!r}")
        return self._type[resolved]

    def resolve_type_id(self, type_id: str) -> str | None:
        """Canonical type id for an id or alias, or None when unknown."""
        if type_id in self._type:
            return type_id
        return self._type_alias.get(type_id)

    def canonical_term(self, vocab_id: str, term: str) -> str:
        canonical = self.vocabulary(vocab_id).canonical(term)
        if canonical is None:
            raise UnknownTermError(vocab_id, term)
        return canonical

    def term_rank(self, vocab_id: str, term: str) -> int:
        return self.vocabulary(vocab_id).rank(term)

    def with_types(self, extra: Iterable[TypeRule], profile_version: str | None = None) -> Profile:
        """Copy of this profile with additional type rules appended."""
        return Profile(
            profile_version or self.profile_version,
            self.vocabularies,
            self.attributes,
            self.types + tuple(extra),
        )


def _unique_index(items, key, what: str) -> dict:
    index: dict = {}
    for item in items:
        k = key(item)
        if k in index:
            raise DuplicateIdError(f"duplicate {what} {k!r}")
        index[k] = item
    return index


def _check_rule_references(rule: TypeRule, profile: Profile) -> None:
    for kind, term in sorted(expression_terms(rule.expression)):
        try:
            attr = profile.attribute(kind)
            if term != SOME:
                profile.canonical_term(attr.vocabulary, term)
        except (UnknownReferenceError, UnknownTermError) as exc:
            raise type(exc)(*_rule_error_args(exc, rule.id)) from None


def _rule_error_args(exc: Exception, rule_id: str) -> tuple:
    if isinstance(exc, UnknownTermError):
        return (exc.vocabulary, exc.term, f"type rule {rule_id!r}")
    return (f"type rule {rule_id!r}: {exc}",)


def term_rank(profile: Profile, vocabulary: str, term: str) -> int:
    """0-based position of ``term`` (or an alias) in an ordered vocabulary."""
    return profile.term_rank(vocabulary, term)


# ---------------------------------------------------------------------------
# (De)serialization
# ---------------------------------------------------------------------------


def _read_text(source: Source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        return source.decode("utf-8")
    return source


def load_profile(source: Source) -> Profile:
    """Parse and validate a JSON profile document.

    Every structural and referential problem raises a :class:`ProfileError`
    subclass (or :class:`UnknownTermError` for an unknown rule term).
    """
    text = _read_text(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return profile_from_dict(doc)


def profile_from_dict(doc: Mapping[str, Any]) -> Profile:
    if not isinstance(doc, Mapping):
        raise ProfileError("profile document must be a JSON object")
    for key in ("profile_version", "vocabularies", "attributes", "types"):
        if key not in doc:
            raise ProfileError(f"profile is missing required key {key!r}")
    try:
        vocabularies = tuple(
            Vocabulary(
                id=v["id"],
                ordered=bool(v.get("ordered", False)),
                terms=tuple(
                    Term(t["id"], t.get("label", ""), t.get("definition", ""),
                         frozenset(t.get("aliases", ())))
                    for t in v["terms"]
                ),
            )
            for v in doc["vocabularies"]
        )
        attributes = tuple(
            AttributeKind(
                kind=a["kind"],
                property_name=a["property_name"],
                vocabulary=a["vocabulary"],
                cardinality=Cardinality(a["cardinality"]["min"], a["cardinality"].get("max")),
                annotation=a.get("annotation", ""),
            )
            for a in doc["attributes"]
        )
    except (KeyError, TypeError) as exc:
        raise ProfileError(f"malformed vocabulary or attribute entry: {exc}") from None

    # Rules need the registry to parse, so build a rule-less profile first.
    base = Profile(str(doc["profile_version"]), vocabularies, attributes, ())
    rules = []
    for entry in doc["types"]:
        try:
            rule_id = entry["id"]
            text = entry["expression"]
        except (KeyError, TypeError):
            raise ProfileError(f"type entry needs 'id' and 'expression': {entry!r}") from None
        try:
            hostility = Hostility(entry.get("hostility", "hostile"))
        except ValueError:
            raise ProfileError(
                f"type rule {rule_id!r}: hostility must be 'hostile' or 'nonHostile'"
            ) from None
        try:
            expression = parse_expression(text, base)
        except ExpressionError as exc:
            cause = exc.__cause__
            if isinstance(cause, UnknownTermError):
                raise UnknownTermError(cause.vocabulary, cause.term, f"type rule {rule_id!r}") from exc
            raise ProfileError(f"type rule {rule_id!r}: {exc}") from exc
        rules.append(
            TypeRule(
                id=rule_id,
                label=entry.get("label", rule_id),
                hostility=hostility,
                expression=expression,
                source=entry.get("source", ""),
                aliases=frozenset(entry.get("aliases", ())),
            )
        )
    return base.with_types(rules)


def profile_to_dict(profile: Profile) -> dict[str, Any]:
    def term(t: Term) -> dict:
        out = {"id": t.id, "label": t.label, "definition": t.definition}
        if t.aliases:
            out["aliases"] = sorted(t.aliases)
        return out

    def rule(r: TypeRule) -> dict:
        out = {"id": r.id, "label": r.label, "hostility": r.hostility.value,
               "expression": print_expression(r.expression), "source": r.source}
        if r.aliases:
            out["aliases"] = sorted(r.aliases)
        return out

    return {
        "profile_version": profile.profile_version,
        "vocabularies": [
            {"id": v.id, "ordered": v.ordered, "terms": [term(t) for t in v.terms]}
            for v in profile.vocabularies
        ],
        "attributes": [
            {"kind": a.kind, "property_name": a.property_name, "vocabulary": a.vocabulary,
             "cardinality": {"min": a.cardinality.min, "max": a.cardinality.max},
             "annotation": a.annotation}
            for a in profile.attributes
        ],
        "types": [rule(r) for r in profile.types],
    }


def dump_profile(profile: Profile) -> str:
    return json.dumps(profile_to_dict(profile), indent=2, ensure_ascii=False) + "\n"


def shipped_profile_text(name: str = "tal") -> str:
    return resources.files("actortype").joinpath(f"data/profiles/{name}.json").read_text("utf-8")


@lru_cache(maxsize=None)
def builtin_profile() -> Profile:
    """The embedded Threat Agent Library profile (21 type rules)."""
    return load_profile(shipped_profile_text("tal"))


@lru_cache(maxsize=None)
def extended_profile() -> Profile:
    """Built-in profile plus the non-TAL ``nationalisticHacktivist`` extension rule."""
    return load_profile(shipped_profile_text("tal-extended"))


def cardinality_violations(attrs, profile: Profile) -> list[tuple[AttributeKind, int]]:
    """Attribute kinds whose observed term count exceeds the declared maximum.

    Minimums are not checked: a missing attribute is unknown, not absent.
    """
    out = []
    for kind, terms in attrs.entries.items():
        attr = profile.attribute(kind)
        if attr.cardinality.max is not None and len(terms) > attr.cardinality.max:
            out.append((attr, len(terms)))
    return out
