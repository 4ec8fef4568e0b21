"""Type inference over activities, relationship closure and consistency lint.

Type rules are treated as sufficient conditions: a satisfied rule yields an
inference carrying its full satisfaction trace. Nothing is suppressed when
one actor matches several types; that is the expected shape of the data.
"""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .expr import SatisfactionTrace, And, evaluate, print_expression
from .kb import Activity, Interval, KnowledgeBase, PredicateRegistry, RelationshipTriple
from .profile import Profile, cardinality_violations

DEFAULT_NEAR_MISS = 1


class Origin(str, enum.Enum):
    INFERRED = "inferred"
    ASSERTED = "asserted"


@dataclass(frozen=True)
class TypeInference:
    type_id: str
    subject: str
    interval: Interval
    origin: Origin
    trace: SatisfactionTrace | None = None
    evidence: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.origin is Origin.INFERRED and (self.trace is None or not self.trace.satisfied):
            raise ValueError("an inferred type needs a satisfied trace")
        if self.origin is Origin.ASSERTED and self.trace is not None:
            raise ValueError("an asserted type carries no trace")

    def sort_key(self) -> tuple:
        return (self.interval.sort_key(), self.type_id, self.origin.value, self.subject)

    def to_dict(self, with_trace: bool = True) -> dict:
        out = {
            "type_id": self.type_id,
            "subject": self.subject,
            "origin": self.origin.value,
            "interval": self.interval.to_dict(),
            "evidence": list(self.evidence),
        }
        if with_trace:
            out["trace"] = self.trace.to_dict() if self.trace else None
        return out


@dataclass(frozen=True)
class NearMissReport:
    type_id: str
    subject: str
    failing_conjuncts: tuple[tuple[str, tuple[str, ...]], ...]
    satisfied_count: int
    total_count: int

    def to_dict(self) -> dict:
        return {
            "type_id": self.type_id,
            "subject": self.subject,
            "failing_conjuncts": [{"expression": e, "observed": list(obs)}
                                  for e, obs in self.failing_conjuncts],
            "satisfied": self.satisfied_count,
            "total": self.total_count,
        }


@dataclass(frozen=True)
class TypeTimeline:
    actor_id: str
    entries: tuple[TypeInference, ...]

    def type_ids(self) -> set[str]:
        return {e.type_id for e in self.entries}

    def to_dict(self) -> dict:
        return {"actor_id": self.actor_id, "entries": [e.to_dict() for e in self.entries]}


class Severity(str, enum.Enum):
    WARNING = "warning"
    INFO = "info"


@dataclass(frozen=True)
class LintFinding:
    code: str
    severity: Severity
    subject: str
    message: str
    rationale: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "severity": self.severity.value, "subject": self.subject,
                "message": self.message, "rationale": self.rationale}


@dataclass(frozen=True)
class ConsistencyRule:
    """An asserted type that implies a floor on one ordered attribute."""

    type_ids: frozenset[str]
    kind: str
    minimum: str
    rationale: str


DEFAULT_CONSISTENCY_RULES = (
    ConsistencyRule(
        frozenset({"governmentCyberwarrior"}),
        "resources",
        "organization",
        "a nation-state actor operating with individual-scale resources is implausible",
    ),
)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def classify_activity(
    activity: Activity, profile: Profile, near_miss: int = DEFAULT_NEAR_MISS
) -> tuple[list[TypeInference], list[NearMissReport]]:
    """Evaluate every type rule against one activity.

    Returns inferences for satisfied rules and near-miss reports for
    conjunctive rules with between 1 and ``near_miss`` failing top-level
    conjuncts, both ordered by type id.
    """
    inferences: list[TypeInference] = []
    misses: list[NearMissReport] = []
    for rule in sorted(profile.types, key=lambda r: r.id):
        trace = evaluate(rule.expression, activity.attrs, profile)
        if trace.satisfied:
            inferences.append(TypeInference(rule.id, activity.id, activity.interval,
                                            Origin.INFERRED, trace, activity.evidence))
            continue
        if not isinstance(rule.expression, And):
            continue
        failing = [c for c in trace.children if not c.satisfied]
        if 1 <= len(failing) <= near_miss:
            misses.append(NearMissReport(
                rule.id,
                activity.id,
                tuple((print_expression(c.node), _observed(c, activity)) for c in failing),
                len(trace.children) - len(failing),
                len(trace.children),
            ))
    return inferences, misses


def _observed(trace: SatisfactionTrace, activity: Activity) -> tuple[str, ...]:
    kinds = sorted({leaf.node.kind for leaf in trace.leaves()})
    return tuple(f"{k}:{t}" for k in kinds for t in sorted(activity.attrs.get(k)))


def _timeline(actor_id: str, entries: Iterable[TypeInference]) -> TypeTimeline:
    best: dict[tuple, TypeInference] = {}
    for e in sorted(entries, key=TypeInference.sort_key):
        best.setdefault((e.type_id, e.interval, e.origin), e)
    return TypeTimeline(actor_id, tuple(sorted(best.values(), key=TypeInference.sort_key)))


def asserted_inferences(actor, profile: Profile) -> list[TypeInference]:
    out = []
    for a in sorted(actor.asserted_types):
        type_id = profile.resolve_type_id(a.type_id) or a.type_id
        evidence = (a.source,) if a.source else ()
        out.append(TypeInference(type_id, actor.id, Interval(None, None), Origin.ASSERTED,
                                 None, evidence))
    return out


def classify_actor(
    actor_id: str, kb: KnowledgeBase, profile: Profile, near_miss: int = DEFAULT_NEAR_MISS
) -> TypeTimeline:
    """Merge per-activity inferences with the actor's manual assertions."""
    actor = kb.actor(actor_id)
    entries: list[TypeInference] = []
    for activity in kb.activities_of(actor_id):
        entries.extend(classify_activity(activity, profile, near_miss)[0])
    entries.extend(asserted_inferences(actor, profile))
    return _timeline(actor_id, entries)


@dataclass
class ClassificationReport:
    profile_version: str
    timelines: dict[str, TypeTimeline] = field(default_factory=dict)
    near_misses: list[NearMissReport] = field(default_factory=list)

    def inferences(self) -> list[TypeInference]:
        return [e for t in self.timelines.values() for e in t.entries]

    def to_dict(self) -> dict:
        return {
            "profile_version": self.profile_version,
            "inferences": [e.to_dict() for a in sorted(self.timelines)
                           for e in self.timelines[a].entries],
            "near_misses": [m.to_dict() for m in self.near_misses],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def classify_kb(
    kb: KnowledgeBase,
    profile: Profile,
    actor_ids: Sequence[str] | None = None,
    near_miss: int = DEFAULT_NEAR_MISS,
) -> ClassificationReport:
    snap = kb.snapshot()
    ids = sorted(actor_ids) if actor_ids is not None else sorted(snap.actors)
    report = ClassificationReport(profile.profile_version)
    for actor_id in ids:
        actor = snap.actor(actor_id)
        entries: list[TypeInference] = []
        for activity in snap.activities_of(actor_id):
            inferred, misses = classify_activity(activity, profile, near_miss)
            entries.extend(inferred)
            report.near_misses.extend(misses)
        entries.extend(asserted_inferences(actor, profile))
        report.timelines[actor_id] = _timeline(actor_id, entries)
    report.near_misses.sort(key=lambda m: (m.subject, m.type_id))
    return report


# ---------------------------------------------------------------------------
# Relationship closure
# ---------------------------------------------------------------------------


def closure_of(
    triples: Iterable[RelationshipTriple], registry: PredicateRegistry
) -> list[RelationshipTriple]:
    """Triples implied by symmetric/transitive predicates, minus the given ones."""
    asserted: dict[str, set[tuple[str, str]]] = defaultdict(set)
    for t in triples:
        asserted[t.predicate].add((t.subject, t.object))

    out = []
    for predicate in sorted(asserted):
        flags = registry.flags(predicate)
        edges = set(asserted[predicate])
        if flags.symmetric:
            edges |= {(o, s) for s, o in edges}
        if flags.transitive:
            adjacency: dict[str, set[str]] = defaultdict(set)
            for s, o in edges:
                adjacency[s].add(o)
            for start in list(adjacency):
                seen: set[str] = set()
                stack = list(adjacency[start])
                while stack:
                    node = stack.pop()
                    if node in seen:
                        continue
                    seen.add(node)
                    stack.extend(adjacency.get(node, ()))
                edges |= {(start, n) for n in seen}
        source = "closure of " + "+".join(
            name for name, on in (("symmetric", flags.symmetric), ("transitive", flags.transitive)) if on
        ) + f" {predicate}"
        for s, o in sorted(edges - asserted[predicate]):
            if s != o:
                out.append(RelationshipTriple(s, predicate, o, inferred=True, source=source))
    return out


def relationship_closure(kb: KnowledgeBase) -> list[RelationshipTriple]:
    return closure_of(kb.asserted_triples(), kb.predicates)


# ---------------------------------------------------------------------------
# Lint
# ---------------------------------------------------------------------------


def lint(
    kb: KnowledgeBase,
    profile: Profile,
    actor_ids: Iterable[str] | None = None,
    rules: Sequence[ConsistencyRule] = DEFAULT_CONSISTENCY_RULES,
) -> list[LintFinding]:
    """Flag valid-but-implausible characterizations.

    * L1: an asserted type contradicts observed attributes (``rules``).
    * L2: an attribute has more values than its cardinality allows.
    * L3: an asserted type id is not defined by the profile.
    """
    ids = sorted(actor_ids) if actor_ids is not None else sorted(kb.actors)
    findings: list[LintFinding] = []
    for actor_id in ids:
        actor = kb.actor(actor_id)
        activities = kb.activities_of(actor_id)
        asserted = set()
        for a in sorted(actor.asserted_types):
            resolved = profile.resolve_type_id(a.type_id)
            if resolved is None:
                findings.append(LintFinding(
                    "L3", Severity.WARNING, actor_id,
                    f"asserted type {a.type_id!r} is not defined in profile {profile.profile_version}",
                    "asserted types should name a rule of the active profile",
                ))
            else:
                asserted.add(resolved)
        for rule in rules:
            if not asserted & rule.type_ids:
                continue
            vocab = profile.vocabulary(profile.attribute(rule.kind).vocabulary)
            floor = vocab.rank(rule.minimum)
            for activity in activities:
                below = sorted(t for t in activity.attrs.get(rule.kind) if vocab.rank(t) < floor)
                if below:
                    types = ", ".join(sorted(asserted & rule.type_ids))
                    findings.append(LintFinding(
                        "L1", Severity.WARNING, actor_id,
                        f"asserted {types} but activity {activity.id} has {rule.kind} "
                        f"{', '.join(below)} (below {rule.minimum})",
                        rule.rationale,
                    ))
        for activity in activities:
            for attr, count in cardinality_violations(activity.attrs, profile):
                findings.append(LintFinding(
                    "L2", Severity.WARNING, activity.id,
                    f"{attr.kind} has {count} values: "
                    f"{', '.join(sorted(activity.attrs.get(attr.kind)))}",
                    f"'{attr.annotation}' allows at most {attr.cardinality.max}",
                ))
    findings.sort(key=lambda f: (f.subject, f.code, f.message))
    return findings
