"""STIX 2.1 and MISP galaxy ingestion, and enriched STIX export.

External vocabularies are translated to profile terms through an editable
mapping table (``mappings/stix-tal.json``). Lookups are exact and
case-insensitive; anything without a rule is reported as unmapped instead
of being guessed.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from importlib import resources
from typing import IO, Any, Iterable, Mapping, Sequence, Union

from ._time import format_timestamp, parse_timestamp
from .errors import StixError, UnknownActorError
from .expr import AttributeProfile
from .kb import Activity, AssertedType, Interval, KnowledgeBase, RelationshipTriple, ThreatActor, slugify
from .profile import Profile, builtin_profile
from .reasoner import LintFinding, Severity, TypeInference, lint

Source = Union[bytes, str, IO[bytes], IO[str]]

REQUIRED_COMMON = ("type", "spec_version", "id", "created", "modified")
TYPE_TARGET = "type"  # pseudo-kind whose targets are type rule ids
# Fixed namespace so generated STIX ids are stable across runs.
_NAMESPACE = uuid.UUID("6b1f3a52-2f0e-4c1e-9a57-0d1a7c3e5f10")

# STIX threat-actor fields carrying characterization values; the mapping
# table decides which attribute kind each value lands in.
_ATTRIBUTE_FIELDS = ("primary_motivation", "secondary_motivations", "resource_level", "sophistication")


@dataclass(frozen=True)
class MappingRule:
    field: str
    value: str
    targets: frozenset[tuple[str, str]]
    note: str = ""


@dataclass
class StixMapping:
    rules: dict[tuple[str, str], MappingRule] = field(default_factory=dict)

    def lookup(self, field_name: str, value: str) -> MappingRule | None:
        return self.rules.get((field_name, value.strip().lower()))

    def validate(self, profile: Profile) -> None:
        """Raise ``StixError`` if any target is not defined by ``profile``."""
        for rule in self.rules.values():
            for kind, term in rule.targets:
                if kind == TYPE_TARGET:
                    ok = profile.resolve_type_id(term) is not None
                else:
                    try:
                        ok = profile.vocabulary(profile.attribute(kind).vocabulary).canonical(term) == term
                    except Exception:
                        ok = False
                if not ok:
                    raise StixError(f"mapping {rule.field}={rule.value!r} targets unknown {kind}:{term}")


def _read(source: Source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    return source.decode("utf-8") if isinstance(source, bytes) else source


def load_mapping(source: Source) -> StixMapping:
    try:
        doc = json.loads(_read(source))
    except json.JSONDecodeError as exc:
        raise StixError(f"mapping is not valid JSON: {exc}") from None
    mapping = StixMapping()
    for r in doc.get("rules", []):
        rule = MappingRule(r["field"], r["value"],
                           frozenset(tuple(t) for t in r.get("targets", ())), r.get("note", ""))
        mapping.rules[(rule.field, rule.value.strip().lower())] = rule
    return mapping


@lru_cache(maxsize=None)
def _default_mapping_text() -> str:
    return resources.files("actortype").joinpath("data/mappings/stix-tal.json").read_text("utf-8")


def default_mapping() -> StixMapping:
    return load_mapping(_default_mapping_text())


def map_value(mapping: StixMapping, field_name: str, value: str) -> frozenset[tuple[str, str]] | None:
    """Targets for a source field value, or ``None`` when unmapped."""
    rule = mapping.lookup(field_name, value)
    return rule.targets if rule else None


@dataclass
class ImportReport:
    counts: dict[str, int] = field(default_factory=dict)
    actors: list[str] = field(default_factory=list)
    unmapped: list[tuple[str, str, str]] = field(default_factory=list)  # field, value, object id
    findings: list[LintFinding] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def count(self, object_type: str) -> None:
        self.counts[object_type] = self.counts.get(object_type, 0) + 1

    def to_dict(self) -> dict:
        return {
            "counts": dict(sorted(self.counts.items())),
            "actors": self.actors,
            "unmapped": [{"field": f, "value": v, "object": o} for f, v, o in self.unmapped],
            "findings": [f.to_dict() for f in self.findings],
            "errors": self.errors,
            "notes": self.notes,
        }


def _as_list(value: Any) -> list:
    if value is None:
        return []
    return value if isinstance(value, list) else [value]


def _map_attributes(
    obj: Mapping[str, Any], fields: Sequence[str], mapping: StixMapping,
    report: ImportReport, object_id: str, profile: Profile,
) -> dict[str, set[str]]:
    attrs: dict[str, set[str]] = {}
    for source_field in fields:
        for value in _as_list(obj.get(source_field)):
            rule = mapping.lookup(source_field, str(value))
            if rule is None:
                report.unmapped.append((source_field, str(value), object_id))
                continue
            if rule.note:
                report.findings.append(LintFinding(
                    "M1", Severity.INFO, object_id,
                    f"{source_field} {value!r} mapped approximately", rule.note))
            for target_kind, term in sorted(rule.targets):
                if target_kind == TYPE_TARGET:
                    continue
                profile.attribute(target_kind)
                attrs.setdefault(target_kind, set()).add(term)
    return attrs


# ---------------------------------------------------------------------------
# STIX import
# ---------------------------------------------------------------------------


def import_stix_bundle(
    source: Source,
    kb: KnowledgeBase,
    mapping: StixMapping | None = None,
    profile: Profile | None = None,
) -> ImportReport:
    """Load a STIX 2.1 bundle into ``kb``.

    Threat-actor SDOs become actors (plus one synthetic activity holding the
    mapped characterization fields); ``aliases`` become ``known-as``
    triples; relationships with registered predicates become triples. Every
    other object is kept verbatim for re-export. Invalid objects are
    reported and skipped without aborting the import.
    """
    profile = profile or builtin_profile()
    mapping = mapping or default_mapping()
    try:
        doc = json.loads(_read(source))
    except json.JSONDecodeError as exc:
        raise StixError(f"bundle is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "bundle" or not isinstance(doc.get("objects", []), list):
        raise StixError("not a STIX bundle: expected type 'bundle' with an 'objects' array")

    report = ImportReport()
    objects = doc.get("objects", [])
    stix_to_actor: dict[str, str] = {}
    relationships = []
    for obj in objects:
        if not isinstance(obj, dict):
            report.errors.append(f"skipped non-object entry {obj!r}")
            continue
        missing = [k for k in REQUIRED_COMMON if k not in obj]
        if missing:
            report.errors.append(f"object {obj.get('id', '?')}: missing required {', '.join(missing)}")
            continue
        report.count(obj["type"])
        if obj["type"] == "threat-actor":
            stix_to_actor[obj["id"]] = _import_threat_actor(obj, kb, mapping, profile, report)
        else:
            _keep_passthrough(kb, obj)
            if obj["type"] == "relationship":
                relationships.append(obj)

    for rel in relationships:
        predicate = rel.get("relationship_type", "")
        if predicate in kb.predicates:
            kb.assert_triple(RelationshipTriple(
                stix_to_actor.get(rel.get("source_ref"), rel.get("source_ref", "")),
                predicate,
                stix_to_actor.get(rel.get("target_ref"), rel.get("target_ref", "")),
                source=rel["id"],
            ))
    report.actors = sorted(set(stix_to_actor.values()))
    report.findings.extend(lint(kb, profile, report.actors))
    return report


def _keep_passthrough(kb: KnowledgeBase, obj: dict) -> None:
    for i, existing in enumerate(kb.passthrough):
        if existing.get("id") == obj["id"]:
            kb.passthrough[i] = obj
            return
    kb.passthrough.append(obj)


def _import_threat_actor(
    obj: dict, kb: KnowledgeBase, mapping: StixMapping, profile: Profile, report: ImportReport
) -> str:
    sdo_id = obj["id"]
    asserted = set()
    for value in _as_list(obj.get("threat_actor_types")):
        rule = mapping.lookup("threat_actor_types", str(value))
        types = [t for k, t in sorted(rule.targets) if k == TYPE_TARGET] if rule else []
        if not types:
            report.unmapped.append(("threat_actor_types", str(value), sdo_id))
        asserted.update(AssertedType(t, f"stix:{sdo_id} threat_actor_types={value}") for t in types)

    actor_id = kb.upsert_actor(ThreatActor(
        id=sdo_id,
        canonical_name=obj.get("name") or sdo_id,
        asserted_types=frozenset(asserted),
        description=obj.get("description", ""),
        created=parse_timestamp(obj["created"]),
        confidence=obj.get("confidence"),
        external=obj,
    ))
    for alias in _as_list(obj.get("aliases")):
        if alias != obj.get("name"):
            kb.assert_triple(RelationshipTriple(actor_id, "known-as", alias, source=f"stix:{sdo_id}"))

    attrs = _map_attributes(obj, _ATTRIBUTE_FIELDS, mapping, report, sdo_id, profile)
    if attrs:
        start = obj.get("first_seen") or obj["created"]
        kb.add_activity(Activity(
            id=f"{actor_id}.stix-profile",
            actor_id=actor_id,
            name=f"{obj.get('name', sdo_id)} (STIX characterization)",
            interval=Interval.of(start, obj.get("last_seen")),
            attrs=AttributeProfile(attrs),
            evidence=(f"stix:{sdo_id}",),
            confidence=obj.get("confidence"),
        ), profile)
    return actor_id


# ---------------------------------------------------------------------------
# MISP import
# ---------------------------------------------------------------------------


def import_misp_cluster(
    source: Source,
    kb: KnowledgeBase,
    mapping: StixMapping | None = None,
    profile: Profile | None = None,
    now: datetime | None = None,
) -> ImportReport:
    """Load a MISP threat-actor galaxy cluster (bare array or ``{"values": [...]}``).

    Descriptions are stored as opaque text. ``meta.motive`` is mapped through
    the ``motive`` rules; misses are reported, never coerced.
    """
    profile = profile or builtin_profile()
    mapping = mapping or default_mapping()
    try:
        doc = json.loads(_read(source))
    except json.JSONDecodeError as exc:
        raise StixError(f"cluster is not valid JSON: {exc}") from None
    entries = doc.get("values") if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise StixError("MISP cluster must be an array of entries or an object with 'values'")

    report = ImportReport()
    imported = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not entry.get("value"):
            report.notes.append(f"entry {i} has no 'value'; skipped")
            continue
        report.count("misp-threat-actor")
        meta = entry.get("meta") or {}
        object_id = entry.get("uuid") or entry["value"]
        confidence = _confidence(meta.get("attribution-confidence"), object_id, report)
        actor_id = kb.upsert_actor(ThreatActor(
            id=f"misp.{slugify(entry['value'])}",
            canonical_name=entry["value"],
            description=entry.get("description", ""),
            confidence=confidence,
            external=entry,
        ))
        imported.append(actor_id)
        for synonym in _as_list(meta.get("synonyms")):
            kb.assert_triple(RelationshipTriple(actor_id, "known-as", synonym, source=f"misp:{object_id}"))
        attrs = _map_attributes(meta, ("motive",), mapping, report, object_id, profile)
        if attrs:
            kb.add_activity(Activity(
                id=f"{actor_id}.misp-profile",
                actor_id=actor_id,
                name=f"{entry['value']} (MISP characterization)",
                interval=Interval(now or kb.clock()),
                attrs=AttributeProfile(attrs),
                evidence=(f"misp:{object_id}",),
                confidence=confidence,
            ), profile)
    report.actors = sorted(set(imported))
    report.findings.extend(lint(kb, profile, report.actors))
    return report


def _confidence(raw: Any, object_id: str, report: ImportReport) -> int | None:
    if raw is None:
        return None
    try:
        value = int(raw)
    except (TypeError, ValueError):
        report.notes.append(f"{object_id}: attribution-confidence {raw!r} is not an integer")
        return None
    if not 0 <= value <= 100:
        report.notes.append(f"{object_id}: attribution-confidence {value} outside 0-100")
        return None
    return value


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _stix_id(kind: str, *parts: str) -> str:
    return f"{kind}--{uuid.uuid5(_NAMESPACE, '|'.join(parts))}"


def _actor_sdo(actor: ThreatActor) -> dict:
    if actor.external and actor.external.get("type") == "threat-actor":
        return dict(actor.external)
    sdo = {
        "type": "threat-actor",
        "spec_version": "2.1",
        "id": _stix_id("threat-actor", actor.id),
        "created": format_timestamp(actor.created) if actor.created else "1970-01-01T00:00:00Z",
        "modified": format_timestamp(actor.modified) if actor.modified else "1970-01-01T00:00:00Z",
        "name": actor.canonical_name,
    }
    if actor.description:
        sdo["description"] = actor.description
    if actor.confidence is not None:
        sdo["confidence"] = actor.confidence
    return sdo


def build_stix_bundle(
    kb: KnowledgeBase, inferences: Iterable[TypeInference], selection: Sequence[str]
) -> dict:
    """Bundle of the selected actors with inferred types attached.

    Imported SDOs are copied unchanged apart from the added
    ``x_inferred_actor_types`` list; ``threat_actor_types`` is never touched.
    Each inference with a trace is also exported as a ``note``.
    """
    for actor_id in selection:
        kb.actor(actor_id)
    owner: dict[str, str] = {a.id: a.actor_id for a in kb.activities.values()}
    per_actor: dict[str, list[TypeInference]] = {a: [] for a in selection}
    for inf in inferences:
        actor_id = owner.get(inf.subject, inf.subject)
        if actor_id in per_actor:
            per_actor[actor_id].append(inf)

    objects = []
    for actor_id in sorted(set(selection)):
        actor = kb.actor(actor_id)
        sdo = _actor_sdo(actor)
        entries = sorted(per_actor[actor_id], key=TypeInference.sort_key)
        if entries:
            sdo["x_inferred_actor_types"] = [
                {"type_id": e.type_id, "interval": e.interval.to_dict(),
                 "evidence": list(e.evidence), "origin": e.origin.value, "subject": e.subject}
                for e in entries
            ]
        objects.append(sdo)
        stamp = sdo["modified"]
        for e in entries:
            if e.trace is None:
                continue
            objects.append({
                "type": "note",
                "spec_version": "2.1",
                "id": _stix_id("note", actor_id, e.type_id, e.subject),
                "created": stamp,
                "modified": stamp,
                "abstract": f"Why {e.subject} is classified {e.type_id}",
                "content": _explain_text(e),
                "object_refs": [sdo["id"]],
                "x_satisfaction_trace": e.trace.to_dict(),
            })
    objects.extend(kb.passthrough)
    return {
        "type": "bundle",
        "id": _stix_id("bundle", *sorted(set(selection))),
        "objects": objects,
    }


def _explain_text(inf: TypeInference) -> str:
    lines = [f"{inf.type_id} inferred from {inf.subject}:"]
    for leaf in inf.trace.leaves():
        if leaf.satisfied:
            terms = ", ".join(sorted(leaf.matched_terms))
            lines.append(f"  {leaf.node.property} -> {terms}")
    return "\n".join(lines)


def export_stix_bundle(
    kb: KnowledgeBase, inferences: Iterable[TypeInference], selection: Sequence[str]
) -> bytes:
    try:
        bundle = build_stix_bundle(kb, inferences, selection)
    except UnknownActorError as exc:
        raise StixError(str(exc)) from None
    return (json.dumps(bundle, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
