"""Hypothesis strategies over a profile's vocabularies."""

from __future__ import annotations

from hypothesis import strategies as st

from actortype.expr import And, AtLeast, AtMost, Or, Some, Value


def leaves(profile, allow_atmost: bool = True):
    options = []
    for attr in profile.attributes:
        vocab = profile.vocabulary(attr.vocabulary)
        terms = st.sampled_from(vocab.term_ids)
        args = (attr.property_name, attr.kind, vocab.id)
        options.append(st.just(Some(*args)))
        options.append(terms.map(lambda t, a=args: Value(*a, t)))
        if vocab.ordered:
            options.append(terms.map(lambda t, a=args: AtLeast(*a, t)))
            if allow_atmost:
                options.append(terms.map(lambda t, a=args: AtMost(*a, t)))
    return st.one_of(options)


def expressions(profile, allow_atmost: bool = True, max_leaves: int = 12):
    def extend(children):
        groups = st.lists(children, min_size=2, max_size=3).map(tuple)
        return st.one_of(groups.map(And), groups.map(Or))

    return st.recursive(leaves(profile, allow_atmost), extend, max_leaves=max_leaves)


def attribute_maps(profile):
    kinds = {}
    for attr in profile.attributes:
        terms = profile.vocabulary(attr.vocabulary).term_ids
        kinds[attr.kind] = st.frozensets(st.sampled_from(terms))
    return st.fixed_dictionaries(kinds).map(lambda d: {k: v for k, v in d.items() if v})


# ---------------------------------------------------------------------------
# Plain random generators (seeded), used where thousands of trials are needed
# ---------------------------------------------------------------------------

import random as _random
from datetime import datetime, timedelta, timezone

from actortype.expr import AttributeProfile
from actortype.kb import (
    Activity,
    AssertedType,
    Interval,
    KnowledgeBase,
    RelationshipTriple,
    ThreatActor,
)

_EPOCH = datetime(2005, 1, 1, tzinfo=timezone.utc)
_WORDS = ["lazarus", "panda", "bear", "kitten", "chollima", "spider", "tiger", "Ünïcode", "team 7"]


def random_time(rng: _random.Random) -> datetime:
    t = _EPOCH + timedelta(seconds=rng.randrange(0, 20 * 365 * 86400))
    return t + timedelta(microseconds=rng.choice([0, 0, rng.randrange(1, 10**6)]))


def random_json(rng: _random.Random, depth: int = 2):
    pick = rng.randrange(6 if depth else 4)
    if pick == 0:
        return rng.choice(_WORDS)
    if pick == 1:
        return rng.randrange(-1000, 1000)
    if pick == 2:
        return rng.choice([True, False, None])
    if pick == 3:
        return rng.random()
    if pick == 4:
        return [random_json(rng, depth - 1) for _ in range(rng.randrange(3))]
    return {f"k{i}": random_json(rng, depth - 1) for i in range(rng.randrange(3))}


def random_kb(rng: _random.Random, profile) -> KnowledgeBase:
    kb = KnowledgeBase(profile_version=rng.choice([None, profile.profile_version]))
    type_ids = [t.id for t in profile.types] + ["notARealType"]
    for i in range(rng.randrange(1, 5)):
        created = random_time(rng)
        kb.clock = lambda c=created: c + timedelta(days=1)
        kb.upsert_actor(ThreatActor(
            canonical_name=f"{rng.choice(_WORDS)} {i}",
            id=rng.choice(["", f"actor-{i}"]),
            asserted_types=frozenset(AssertedType(rng.choice(type_ids), rng.choice(["", "src"]))
                                     for _ in range(rng.randrange(3))),
            description=rng.choice(["", "some description"]),
            created=rng.choice([None, created]),
            confidence=rng.choice([None, rng.randrange(101)]),
            external=rng.choice([None, {"type": "x", "v": random_json(rng)}]),
        ))
    actor_ids = sorted(kb.actors)
    for _ in range(rng.randrange(6)):
        attrs = {}
        for attr in profile.attributes:
            terms = profile.vocabulary(attr.vocabulary).term_ids
            chosen = {t for t in terms if rng.random() < 0.15}
            if chosen:
                attrs[attr.kind] = frozenset(chosen)
        start = random_time(rng)
        end = rng.choice([None, start + timedelta(hours=rng.randrange(1, 10000))])
        kb.add_activity(Activity(
            actor_id=rng.choice(actor_ids),
            name=rng.choice(_WORDS),
            interval=Interval(start, end),
            attrs=AttributeProfile(attrs),
            evidence=tuple(rng.choice(_WORDS) for _ in range(rng.randrange(3))),
            confidence=rng.choice([None, rng.randrange(101)]),
        ), profile)
    names = actor_ids + _WORDS
    for _ in range(rng.randrange(5)):
        kb.assert_triple(RelationshipTriple(rng.choice(names), "known-as", rng.choice(names),
                                            source=rng.choice(["", "report"])))
    if rng.random() < 0.5:
        kb.record_inferred([RelationshipTriple("a", "known-as", "b", True, "closure")])
    kb.passthrough = [{"type": "malware", "id": f"malware--{i}", "x": random_json(rng)}
                      for i in range(rng.randrange(3))]
    return kb


_SOPHISTICATION = ["none", "minimal", "intermediate", "advanced", "expert", "innovator", "strategic", "bogus"]
_RESOURCES = ["individual", "club", "contest", "team", "organization", "government", "bogus"]
_MOTIVATIONS = ["dominance", "ideology", "notoriety", "organizational-gain", "personal-gain",
                "personal-satisfaction", "coercion", "accidental", "unpredictable", "revenge"]
_ACTOR_TYPES = ["nation-state", "crime-syndicate", "criminal", "hacker", "insider-accidental",
                "insider-disgruntled", "sensationalist", "terrorist", "spy", "competitor"]


def _uuid(rng: _random.Random) -> str:
    import uuid
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def _stamp(rng: _random.Random) -> str:
    from actortype._time import format_timestamp
    return format_timestamp(random_time(rng))


def random_bundle(rng: _random.Random) -> dict:
    """A STIX 2.1 bundle mixing threat actors with assorted other objects."""
    objects = []
    actor_ids = []
    for i in range(rng.randrange(1, 4)):
        created = _stamp(rng)
        sdo = {
            "type": "threat-actor",
            "spec_version": "2.1",
            "id": f"threat-actor--{_uuid(rng)}",
            "created": created,
            "modified": created,
            "name": f"{rng.choice(_WORDS)} {i}",
        }
        optional = {
            "description": lambda: "generated actor",
            "aliases": lambda: rng.sample(_WORDS, rng.randrange(1, 3)),
            "goals": lambda: ["money", "influence"][: rng.randrange(1, 3)],
            "sophistication": lambda: rng.choice(_SOPHISTICATION),
            "resource_level": lambda: rng.choice(_RESOURCES),
            "primary_motivation": lambda: rng.choice(_MOTIVATIONS),
            "secondary_motivations": lambda: rng.sample(_MOTIVATIONS, rng.randrange(1, 3)),
            "threat_actor_types": lambda: rng.sample(_ACTOR_TYPES, rng.randrange(1, 3)),
            "first_seen": lambda: "2015-05-05T00:00:00Z",
            "confidence": lambda: rng.randrange(101),
            "labels": lambda: ["generated"],
            "x_vendor_score": lambda: random_json(rng),
        }
        for key, make in optional.items():
            if rng.random() < 0.6:
                sdo[key] = make()
        objects.append(sdo)
        actor_ids.append(sdo["id"])
    for _ in range(rng.randrange(4)):
        kind = rng.choice(["malware", "identity", "indicator", "relationship"])
        created = _stamp(rng)
        obj = {"type": kind, "spec_version": "2.1", "id": f"{kind}--{_uuid(rng)}",
               "created": created, "modified": created}
        if kind == "malware":
            obj.update(name=rng.choice(_WORDS), is_family=rng.choice([True, False]))
        elif kind == "identity":
            obj.update(name=rng.choice(_WORDS), identity_class="organization")
        elif kind == "indicator":
            obj.update(pattern="[file:name = 'x.exe']", pattern_type="stix", valid_from=created)
        else:
            obj.update(relationship_type=rng.choice(["uses", "attributed-to", "targets"]),
                       source_ref=rng.choice(actor_ids), target_ref=rng.choice(actor_ids))
        objects.append(obj)
    rng.shuffle(objects)
    return {"type": "bundle", "id": f"bundle--{_uuid(rng)}", "objects": objects}
