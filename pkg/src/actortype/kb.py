"""Threat actors, temporally scoped activities and relationship triples.

Attribute profiles live on activities, not actors: each operation keeps its
own characterization and evidence, which is what lets an actor match
different types over time. The whole store persists as one JSON file with a
trailing content checksum.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import IO, Any, Callable, Iterable, Mapping, Union

from ._time import coerce_timestamp, format_timestamp, parse_timestamp, utcnow
from .errors import (
    KnowledgeBaseError,
    StoreCorruptError,
    StoreVersionError,
    UnknownActorError,
    UnknownPredicateError,
)
from .expr import AttributeProfile
from .profile import Profile, builtin_profile, cardinality_violations

FORMAT_VERSION = 1
_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._:\-]*$")

PathOrStream = Union[str, os.PathLike, IO[bytes]]


def _check_id(value: str, what: str) -> None:
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise KnowledgeBaseError(f"malformed {what} id {value!r}")


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug or "item"


@dataclass(frozen=True, order=True)
class AssertedType:
    """A manual class assertion, e.g. an analyst tagging an actor as nation-state."""

    type_id: str
    source: str = ""


@dataclass(frozen=True)
class Interval:
    """Validity interval. ``end=None`` means ongoing; ``start=None`` means unbounded."""

    start: datetime | None
    end: datetime | None = None

    def __post_init__(self) -> None:
        if self.start is not None and self.end is not None and self.start > self.end:
            raise KnowledgeBaseError(
                f"interval start {format_timestamp(self.start)} is after end "
                f"{format_timestamp(self.end)}"
            )

    @classmethod
    def of(cls, start: datetime | str | None, end: datetime | str | None = None) -> Interval:
        return cls(
            coerce_timestamp(start) if start is not None else None,
            coerce_timestamp(end) if end is not None else None,
        )

    def to_dict(self) -> dict[str, str | None]:
        return {
            "start": format_timestamp(self.start) if self.start else None,
            "end": format_timestamp(self.end) if self.end else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> Interval:
        data = data or {}
        return cls.of(data.get("start"), data.get("end"))

    def sort_key(self) -> tuple:
        return (
            self.start is not None,
            self.start or datetime.min,
            self.end is None,
            self.end or datetime.min,
        )


@dataclass(frozen=True)
class ThreatActor:
    canonical_name: str
    id: str = ""
    asserted_types: frozenset[AssertedType] = frozenset()
    description: str = ""
    created: datetime | None = None
    modified: datetime | None = None
    confidence: int | None = None
    # Original source record (STIX SDO or MISP entry), kept verbatim for re-export.
    external: dict | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "canonical_name": self.canonical_name,
            "asserted_types": [{"type_id": a.type_id, "source": a.source}
                               for a in sorted(self.asserted_types)],
            "description": self.description,
            "created": format_timestamp(self.created) if self.created else None,
            "modified": format_timestamp(self.modified) if self.modified else None,
            "confidence": self.confidence,
            "external": self.external,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ThreatActor:
        return cls(
            id=data.get("id", ""),
            canonical_name=data["canonical_name"],
            asserted_types=frozenset(
                AssertedType(a["type_id"], a.get("source", "")) if isinstance(a, Mapping)
                else AssertedType(a)
                for a in data.get("asserted_types", ())
            ),
            description=data.get("description", ""),
            created=parse_timestamp(data["created"]) if data.get("created") else None,
            modified=parse_timestamp(data["modified"]) if data.get("modified") else None,
            confidence=data.get("confidence"),
            external=data.get("external"),
        )


@dataclass(frozen=True)
class Activity:
    actor_id: str
    name: str
    interval: Interval
    attrs: AttributeProfile = field(default_factory=AttributeProfile)
    id: str = ""
    evidence: tuple[str, ...] = ()
    confidence: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "actor_id": self.actor_id,
            "name": self.name,
            "interval": self.interval.to_dict(),
            "attrs": self.attrs.to_dict(),
            "evidence": list(self.evidence),
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Activity:
        """Build an activity from plain data. Terms are not validated here."""
        return cls(
            id=data.get("id", ""),
            actor_id=data["actor_id"],
            name=data.get("name", ""),
            interval=Interval.from_dict(data.get("interval")),
            attrs=AttributeProfile({k: frozenset([v] if isinstance(v, str) else v)
                                    for k, v in data.get("attrs", {}).items()}),
            evidence=tuple(data.get("evidence", ())),
            confidence=data.get("confidence"),
        )


@dataclass(frozen=True)
class RelationshipTriple:
    subject: str
    predicate: str
    object: str
    inferred: bool = False
    source: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"subject": self.subject, "predicate": self.predicate, "object": self.object,
                "inferred": self.inferred, "source": self.source}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RelationshipTriple:
        return cls(data["subject"], data["predicate"], data["object"],
                   bool(data.get("inferred", False)), data.get("source", ""))


@dataclass(frozen=True)
class PredicateFlags:
    symmetric: bool = False
    transitive: bool = False


@dataclass
class PredicateRegistry:
    entries: dict[str, PredicateFlags] = field(default_factory=dict)

    @classmethod
    def default(cls) -> PredicateRegistry:
        return cls({"known-as": PredicateFlags(symmetric=True, transitive=True)})

    def register(self, predicate: str, *, symmetric: bool = False, transitive: bool = False) -> None:
        self.entries[predicate] = PredicateFlags(symmetric, transitive)

    def __contains__(self, predicate: str) -> bool:
        return predicate in self.entries

    def flags(self, predicate: str) -> PredicateFlags:
        try:
            return self.entries[predicate]
        except KeyError:
            raise UnknownPredicateError(f"unregistered predicate {predicate!r}") from None

    def to_dict(self) -> dict[str, dict[str, bool]]:
        return {p: {"symmetric": f.symmetric, "transitive": f.transitive}
                for p, f in sorted(self.entries.items())}

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, bool]]) -> PredicateRegistry:
        return cls({p: PredicateFlags(bool(f.get("symmetric")), bool(f.get("transitive")))
                    for p, f in data.items()})


@dataclass
class KnowledgeBase:
    """In-memory store of actors, activities and triples.

    Mutations take an internal lock (single writer); :meth:`snapshot` gives
    readers an independent copy. Records are immutable dataclasses, so a
    snapshot only copies the containers.
    """

    actors: dict[str, ThreatActor] = field(default_factory=dict)
    activities: dict[str, Activity] = field(default_factory=dict)
    triples: dict[str, RelationshipTriple] = field(default_factory=dict)
    predicates: PredicateRegistry = field(default_factory=PredicateRegistry.default)
    passthrough: list[dict] = field(default_factory=list)
    profile_version: str | None = None
    diagnostics: list[str] = field(default_factory=list, compare=False, repr=False)
    clock: Callable[[], datetime] = field(default=utcnow, compare=False, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, compare=False, repr=False)

    # -- actors -------------------------------------------------------------

    def upsert_actor(self, actor: ThreatActor) -> str:
        """Insert or replace an actor by id, generating an id when empty."""
        if not actor.canonical_name or not actor.canonical_name.strip():
            raise KnowledgeBaseError("actor canonical_name must be nonempty")
        with self._lock:
            actor_id = actor.id or self._fresh_id(slugify(actor.canonical_name), self.actors)
            _check_id(actor_id, "actor")
            now = self.clock()
            previous = self.actors.get(actor_id)
            created = actor.created or (previous.created if previous else None) or now
            self.actors[actor_id] = replace(actor, id=actor_id, created=created, modified=now)
            return actor_id

    def actor(self, actor_id: str) -> ThreatActor:
        try:
            return self.actors[actor_id]
        except KeyError:
            raise UnknownActorError(f"unknown actor {actor_id!r}") from None

    def find_actor(self, key: str) -> ThreatActor | None:
        """Look an actor up by id, then by exact canonical name."""
        if key in self.actors:
            return self.actors[key]
        for actor in self.actors.values():
            if actor.canonical_name == key:
                return actor
        return None

    # -- activities ---------------------------------------------------------

    def add_activity(self, activity: Activity, profile: Profile | None = None) -> str:
        """Validate and store an activity, returning its id.

        Terms are canonicalised against ``profile`` (built-in by default) and
        unknown terms are rejected. Cardinality overruns are recorded in
        :attr:`diagnostics` but do not block the insert.
        """
        profile = profile or builtin_profile()
        with self._lock:
            if activity.actor_id not in self.actors:
                raise UnknownActorError(f"unknown actor {activity.actor_id!r}")
            if activity.interval.start is None:
                raise KnowledgeBaseError("activity interval needs a start timestamp")
            if activity.confidence is not None and not 0 <= activity.confidence <= 100:
                raise KnowledgeBaseError(f"confidence {activity.confidence} outside 0-100")
            attrs = AttributeProfile.from_mapping(activity.attrs.entries, profile)
            activity_id = activity.id or self._fresh_id(
                f"{activity.actor_id}.{slugify(activity.name or 'activity')}", self.activities
            )
            _check_id(activity_id, "activity")
            stored = replace(activity, id=activity_id, attrs=attrs)
            self.activities[activity_id] = stored
            for attr, count in cardinality_violations(attrs, profile):
                self.diagnostics.append(
                    f"activity {activity_id}: {attr.kind} has {count} values; "
                    f"'{attr.annotation}' allows at most {attr.cardinality.max}"
                )
            return activity_id

    def activities_of(self, actor_id: str) -> list[Activity]:
        return sorted((a for a in self.activities.values() if a.actor_id == actor_id),
                      key=lambda a: a.id)

    # -- triples ------------------------------------------------------------

    def assert_triple(self, triple: RelationshipTriple) -> str:
        """Store an asserted triple; the predicate must be registered."""
        self.predicates.flags(triple.predicate)
        return self._put_triple(replace(triple, inferred=False))

    def record_inferred(self, triples: Iterable[RelationshipTriple]) -> list[str]:
        """Materialise derived triples, keeping their ``inferred`` flag set."""
        return [self._put_triple(replace(t, inferred=True)) for t in triples]

    def _put_triple(self, triple: RelationshipTriple) -> str:
        with self._lock:
            for tid, existing in self.triples.items():
                if existing == triple:
                    return tid
            tid = self._fresh_id("t", self.triples, always_suffix=True)
            self.triples[tid] = triple
            return tid

    def asserted_triples(self) -> list[RelationshipTriple]:
        return [t for t in self.triples.values() if not t.inferred]

    # -- misc ---------------------------------------------------------------

    def _fresh_id(self, base: str, taken: Mapping[str, Any], always_suffix: bool = False) -> str:
        if not always_suffix and base not in taken:
            return base
        n = 1 if always_suffix else 2
        while f"{base}-{n}" in taken:
            n += 1
        return f"{base}-{n}"

    def snapshot(self) -> KnowledgeBase:
        with self._lock:
            return KnowledgeBase(
                actors=dict(self.actors),
                activities=dict(self.activities),
                triples=dict(self.triples),
                predicates=PredicateRegistry(dict(self.predicates.entries)),
                passthrough=copy.deepcopy(self.passthrough),
                profile_version=self.profile_version,
                clock=self.clock,
            )

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "profile_version": self.profile_version,
            "actors": [self.actors[k].to_dict() for k in sorted(self.actors)],
            "activities": [self.activities[k].to_dict() for k in sorted(self.activities)],
            "triples": [{"id": k, **self.triples[k].to_dict()} for k in sorted(self.triples)],
            "predicates": self.predicates.to_dict(),
            "passthrough": self.passthrough,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> KnowledgeBase:
        kb = cls(
            predicates=PredicateRegistry.from_dict(data.get("predicates", {})),
            passthrough=list(data.get("passthrough", [])),
            profile_version=data.get("profile_version"),
        )
        for a in data.get("actors", []):
            actor = ThreatActor.from_dict(a)
            kb.actors[actor.id] = actor
        for a in data.get("activities", []):
            activity = Activity.from_dict(a)
            kb.activities[activity.id] = activity
        for t in data.get("triples", []):
            kb.triples[t["id"]] = RelationshipTriple.from_dict(t)
        for activity in kb.activities.values():
            if activity.actor_id not in kb.actors:
                raise StoreCorruptError(
                    f"activity {activity.id!r} refers to missing actor {activity.actor_id!r}"
                )
        return kb

    def dumps(self) -> str:
        body = self.to_dict()
        return json.dumps({**body, "checksum": _checksum(body)}, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str | bytes) -> KnowledgeBase:
        try:
            doc = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise StoreCorruptError(f"store is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise StoreCorruptError("store root must be a JSON object")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise StoreVersionError(
                f"store format version {version!r} is not supported "
                f"(this build reads version {FORMAT_VERSION})"
            )
        stored = doc.pop("checksum", None)
        if stored != _checksum(doc):
            raise StoreCorruptError("store checksum mismatch")
        try:
            return cls.from_dict(doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreCorruptError(f"malformed store record: {exc}") from None


def _checksum(body: Mapping[str, Any]) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save(kb: KnowledgeBase, sink: PathOrStream) -> None:
    """Write ``kb`` to a path (atomically, via rename) or a binary stream."""
    data = kb.dumps().encode("utf-8")
    if hasattr(sink, "write"):
        sink.write(data)
        return
    path = Path(sink)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(source: PathOrStream | bytes) -> KnowledgeBase:
    if isinstance(source, bytes):
        return KnowledgeBase.loads(source)
    if hasattr(source, "read"):
        return KnowledgeBase.loads(source.read())
    return KnowledgeBase.loads(Path(source).read_bytes())
