"""Conjunctive filter queries over the knowledge base and inference results.

::

    actors where inferred_type = governmentCyberwarrior
    activities where attribute.definingMotivation = dominance and start >= 2014-01-01
    actors where alias = "Stardust Chollima"

Fields: ``inferred_type``, ``asserted_type``, ``attribute.<kind>``,
``start``, ``end``, ``alias``, ``actor``. Set-valued fields match ``=``
when any member equals the value and ``!=`` when none does. For actors,
``start``/``end`` hold when some timeline entry's validity interval
satisfies the comparison (an unbounded start counts as the distant past,
an open end as the distant future). ``alias`` follows the ``known-as``
closure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Mapping

from ._time import format_timestamp, parse_timestamp
from .errors import QueryError
from .kb import KnowledgeBase
from .profile import Profile
from .reasoner import Origin, TypeTimeline, closure_of

TARGETS = ("actors", "activities")
OPS = ("=", "!=", ">=", "<=")
_SCALAR_FIELDS = ("inferred_type", "asserted_type", "start", "end", "alias", "actor")
_TIME_FIELDS = ("start", "end")

_FAR_PAST = datetime.min.replace(tzinfo=timezone.utc)
_FAR_FUTURE = datetime.max.replace(tzinfo=timezone.utc)

_TOKEN_RE = re.compile(
    r'(?P<ws>\s+)|(?P<string>"(?:[^"\\]|\\.)*")|(?P<op>!=|>=|<=|=|>|<)|(?P<word>[^\s"=!<>]+)'
)


@dataclass(frozen=True)
class Condition:
    field: str
    op: str
    value: Any  # str, or datetime for start/end


@dataclass(frozen=True)
class Query:
    target: str
    conjuncts: tuple[Condition, ...]


def _tokens(source: str) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise QueryError(f"unexpected character {source[pos]!r}", pos)
        if m.lastgroup != "ws":
            text = m.group()
            if m.lastgroup == "string":
                text = re.sub(r"\\(.)", r"\1", text[1:-1])
            out.append((m.lastgroup, text, pos))
        pos = m.end()
    return out


def parse_query(source: str, profile: Profile | None = None) -> Query:
    """Parse ``target where cond (and cond)*``.

    With a profile, ``attribute.<kind>`` names and term aliases are checked
    and canonicalised.
    """
    toks = _tokens(source)
    if not toks:
        raise QueryError("empty query", 0)
    kind, target, pos = toks[0]
    if kind != "word" or target not in TARGETS:
        raise QueryError(f"query must start with 'actors' or 'activities', found {target!r}", pos)
    if len(toks) < 2 or toks[1][1] != "where":
        raise QueryError("expected 'where' after the target", toks[1][2] if len(toks) > 1 else len(source))

    conjuncts = []
    i = 2
    while True:
        if i + 3 > len(toks):
            at = toks[i][2] if i < len(toks) else len(source)
            raise QueryError("expected a condition 'field op value'", at)
        (fk, field_name, fpos), (ok, op, opos), (vk, value, vpos) = toks[i:i + 3]
        conjuncts.append(_condition(field_name, fpos, op, ok, opos, value, vk, vpos, profile))
        i += 3
        if i == len(toks):
            break
        if toks[i][1] != "and":
            raise QueryError(f"expected 'and', found {toks[i][1]!r}", toks[i][2])
        i += 1
    return Query(target, tuple(conjuncts))


def _condition(field_name, fpos, op, op_kind, opos, value, value_kind, vpos, profile) -> Condition:
    if field_name.startswith("attribute."):
        attr_kind = field_name.split(".", 1)[1]
        if profile is not None:
            try:
                attr = profile.attribute(attr_kind)
            except Exception:
                raise QueryError(f"unknown attribute kind {attr_kind!r}", fpos) from None
    elif field_name not in _SCALAR_FIELDS:
        raise QueryError(f"unknown field {field_name!r}", fpos)
    if value_kind == "op":
        raise QueryError(f"expected a value, found {value!r}", vpos)

    if field_name in _TIME_FIELDS:
        try:
            value = parse_timestamp(value)
        except ValueError:
            raise QueryError(f"{field_name} needs an RFC 3339 date or date-time, got {value!r}", vpos) from None
    if op_kind != "op" or op not in OPS:
        raise QueryError(f"expected one of {', '.join(OPS)}, found {op!r}", opos)
    if op in (">=", "<=") and field_name not in _TIME_FIELDS:
        raise QueryError(f"{op} only applies to start and end", opos)
    if field_name.startswith("attribute.") and profile is not None:
        canonical = profile.vocabulary(attr.vocabulary).canonical(value)
        if canonical is None:
            raise QueryError(f"unknown {attr.vocabulary} term {value!r}", vpos)
        value = canonical
    return Condition(field_name, op, value)


@dataclass(frozen=True)
class QueryResult:
    id: str
    fields: Mapping[str, Any]

    def to_dict(self) -> dict:
        return {"id": self.id, **self.fields}


def _aliases(kb: KnowledgeBase) -> dict[str, set[str]]:
    if "known-as" not in kb.predicates:
        return {}
    known = [t for t in kb.asserted_triples() if t.predicate == "known-as"]
    names: dict[str, set[str]] = {}
    for t in known + closure_of(known, kb.predicates):
        names.setdefault(t.subject, set()).add(t.object)
    return names


def _actor_aliases(actor, alias_index) -> set[str]:
    out = {actor.canonical_name}
    out |= alias_index.get(actor.id, set()) | alias_index.get(actor.canonical_name, set())
    return out


def _compare(lhs: datetime, op: str, rhs: datetime) -> bool:
    return {"=": lhs == rhs, "!=": lhs != rhs, ">=": lhs >= rhs, "<=": lhs <= rhs}[op]


def _set_match(values: set[str], op: str, value: str) -> bool:
    return value in values if op == "=" else value not in values


def run_query(q: Query, kb: KnowledgeBase, timelines: Mapping[str, TypeTimeline]) -> list[QueryResult]:
    """Evaluate ``q``; results are ordered by id."""
    kb = kb.snapshot()
    alias_index = _aliases(kb)
    by_activity: dict[str, set[str]] = {}
    for timeline in timelines.values():
        for e in timeline.entries:
            if e.origin is Origin.INFERRED:
                by_activity.setdefault(e.subject, set()).add(e.type_id)

    results = []
    if q.target == "activities":
        for activity in sorted(kb.activities.values(), key=lambda a: a.id):
            actor = kb.actor(activity.actor_id)
            timeline = timelines.get(actor.id)
            asserted = {e.type_id for e in timeline.entries if e.origin is Origin.ASSERTED} if timeline else set()
            if all(_activity_holds(c, activity, actor, by_activity.get(activity.id, set()),
                                   asserted, alias_index) for c in q.conjuncts):
                results.append(QueryResult(activity.id, {
                    "actor": activity.actor_id,
                    "name": activity.name,
                    "start": format_timestamp(activity.interval.start),
                    "end": format_timestamp(activity.interval.end) if activity.interval.end else None,
                    "inferred_types": sorted(by_activity.get(activity.id, set())),
                }))
        return results

    for actor in sorted(kb.actors.values(), key=lambda a: a.id):
        timeline = timelines.get(actor.id)
        entries = timeline.entries if timeline else ()
        if all(_actor_holds(c, actor, entries, kb, alias_index) for c in q.conjuncts):
            results.append(QueryResult(actor.id, {
                "name": actor.canonical_name,
                "inferred_types": sorted({e.type_id for e in entries if e.origin is Origin.INFERRED}),
                "asserted_types": sorted({e.type_id for e in entries if e.origin is Origin.ASSERTED}),
            }))
    return results


def _activity_holds(c: Condition, activity, actor, inferred, asserted, alias_index) -> bool:
    if c.field == "inferred_type":
        return _set_match(inferred, c.op, c.value)
    if c.field == "asserted_type":
        return _set_match(asserted, c.op, c.value)
    if c.field.startswith("attribute."):
        return _set_match(set(activity.attrs.get(c.field[10:])), c.op, c.value)
    if c.field == "start":
        return _compare(activity.interval.start, c.op, c.value)
    if c.field == "end":
        return _compare(activity.interval.end or _FAR_FUTURE, c.op, c.value)
    if c.field == "alias":
        return _set_match(_actor_aliases(actor, alias_index), c.op, c.value)
    return _set_match({actor.id, actor.canonical_name}, c.op, c.value)


def _actor_holds(c: Condition, actor, entries, kb: KnowledgeBase, alias_index) -> bool:
    if c.field == "inferred_type":
        return _set_match({e.type_id for e in entries if e.origin is Origin.INFERRED}, c.op, c.value)
    if c.field == "asserted_type":
        return _set_match({e.type_id for e in entries if e.origin is Origin.ASSERTED}, c.op, c.value)
    if c.field.startswith("attribute."):
        kind = c.field[10:]
        observed = set().union(*(a.attrs.get(kind) for a in kb.activities_of(actor.id)))
        return _set_match(observed, c.op, c.value)
    if c.field == "start":
        return any(_compare(e.interval.start or _FAR_PAST, c.op, c.value) for e in entries)
    if c.field == "end":
        return any(_compare(e.interval.end or _FAR_FUTURE, c.op, c.value) for e in entries)
    if c.field == "alias":
        return _set_match(_actor_aliases(actor, alias_index), c.op, c.value)
    return _set_match({actor.id, actor.canonical_name}, c.op, c.value)
