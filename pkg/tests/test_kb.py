from __future__ import annotations

import io
import json
import random
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actortype.errors import (
    KnowledgeBaseError,
    StoreCorruptError,
    StoreVersionError,
    UnknownActorError,
    UnknownPredicateError,
    UnknownTermError,
)
from actortype.expr import AttributeProfile
from actortype.kb import (
    Activity,
    Interval,
    KnowledgeBase,
    RelationshipTriple,
    ThreatActor,
    load,
    save,
    slugify,
)

import strategies

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def make_kb():
    return KnowledgeBase(clock=lambda: T0)


def test_slugify():
    assert slugify("Lazarus Group") == "lazarus-group"
    assert slugify("Aslan Neferler Tim") == "aslan-neferler-tim"


def test_upsert_generates_unique_ids():
    kb = make_kb()
    a = kb.upsert_actor(ThreatActor("Lazarus Group"))
    b = kb.upsert_actor(ThreatActor("Lazarus Group", id=""))
    assert a == "lazarus-group"
    assert b == "lazarus-group-2"
    assert kb.actor(a).created == T0


def test_upsert_replaces_by_id_and_keeps_created():
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x", created=datetime(2019, 1, 1, tzinfo=timezone.utc)))
    kb.upsert_actor(ThreatActor("X renamed", id="x"))
    assert kb.actor("x").canonical_name == "X renamed"
    assert kb.actor("x").created.year == 2019


def test_upsert_rejects_blank_name():
    with pytest.raises(KnowledgeBaseError):
        make_kb().upsert_actor(ThreatActor("  "))


def test_unknown_actor_lookup():
    with pytest.raises(UnknownActorError):
        make_kb().actor("nobody")


def test_find_actor_by_name():
    kb = make_kb()
    kb.upsert_actor(ThreatActor("APT38", id="apt38"))
    assert kb.find_actor("APT38").id == "apt38"
    assert kb.find_actor("apt38").id == "apt38"
    assert kb.find_actor("nope") is None


def activity(actor_id="x", **attrs):
    return Activity(actor_id, "op", Interval.of("2020-01-01"),
                    AttributeProfile({k: frozenset(v) for k, v in attrs.items()}))


def test_add_activity_canonicalises_terms(profile):
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x"))
    aid = kb.add_activity(activity(visibility={"opportunistic"}), profile)
    assert aid == "x.op"
    assert kb.activities[aid].attrs.get("visibility") == {"dontCare"}


def test_add_activity_rejects_unknown_term(profile):
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x"))
    with pytest.raises(UnknownTermError):
        kb.add_activity(activity(skills={"wizard"}), profile)
    assert kb.activities == {}


def test_add_activity_requires_actor_and_start(profile):
    kb = make_kb()
    with pytest.raises(UnknownActorError):
        kb.add_activity(activity(), profile)
    kb.upsert_actor(ThreatActor("X", id="x"))
    with pytest.raises(KnowledgeBaseError):
        kb.add_activity(Activity("x", "op", Interval(None, None)), profile)


def test_add_activity_confidence_range(profile):
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x"))
    with pytest.raises(KnowledgeBaseError):
        kb.add_activity(Activity("x", "op", Interval.of("2020-01-01"), confidence=101), profile)


def test_cardinality_overrun_is_stored_with_diagnostic(profile):
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x"))
    aid = kb.add_activity(activity(access={"internal", "external"}), profile)
    assert aid in kb.activities
    assert len(kb.diagnostics) == 1 and "access" in kb.diagnostics[0]


def test_interval_validation():
    with pytest.raises(KnowledgeBaseError):
        Interval.of("2020-02-01", "2020-01-01")
    assert Interval.of("2020-01-01").end is None


def test_triples_dedupe_and_predicate_check():
    kb = make_kb()
    t = RelationshipTriple("A", "known-as", "B")
    assert kb.assert_triple(t) == kb.assert_triple(t)
    assert len(kb.triples) == 1
    with pytest.raises(UnknownPredicateError):
        kb.assert_triple(RelationshipTriple("A", "loves", "B"))


def test_assert_triple_clears_inferred_flag():
    kb = make_kb()
    tid = kb.assert_triple(RelationshipTriple("A", "known-as", "B", inferred=True))
    assert kb.triples[tid].inferred is False


def test_snapshot_is_independent(profile):
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x"))
    snap = kb.snapshot()
    kb.upsert_actor(ThreatActor("Y", id="y"))
    assert "y" not in snap.actors
    assert snap.actors["x"] == kb.actors["x"]


# -- persistence --------------------------------------------------------------


def test_save_load_path(tmp_path, lazarus_kb):
    path = tmp_path / "kb.json"
    save(lazarus_kb, path)
    assert load(path) == lazarus_kb
    assert [p.name for p in tmp_path.iterdir()] == ["kb.json"]


def test_save_load_stream(lazarus_kb):
    buf = io.BytesIO()
    save(lazarus_kb, buf)
    assert load(io.BytesIO(buf.getvalue())) == lazarus_kb


def test_checksum_is_last_key(lazarus_kb):
    doc = json.loads(lazarus_kb.dumps())
    assert list(doc)[-1] == "checksum"
    assert doc["checksum"].startswith("sha256:")
    assert doc["format_version"] == 1


def test_tampered_store_is_rejected(lazarus_kb):
    doc = json.loads(lazarus_kb.dumps())
    doc["actors"][0]["canonical_name"] = "Someone Else"
    with pytest.raises(StoreCorruptError):
        KnowledgeBase.loads(json.dumps(doc))


def test_not_json_is_corrupt():
    with pytest.raises(StoreCorruptError):
        KnowledgeBase.loads(b"{nope")


def test_version_mismatch_names_both_versions(lazarus_kb):
    doc = json.loads(lazarus_kb.dumps())
    doc["format_version"] = 7
    with pytest.raises(StoreVersionError) as info:
        KnowledgeBase.loads(json.dumps(doc))
    assert "7" in str(info.value) and "1" in str(info.value)


def test_failed_save_keeps_previous_file(tmp_path, lazarus_kb, monkeypatch):
    path = tmp_path / "kb.json"
    save(lazarus_kb, path)
    before = path.read_bytes()

    def boom(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr("actortype.kb.os.replace", boom)
    with pytest.raises(OSError):
        save(KnowledgeBase(), path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["kb.json"]


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_roundtrip_random_kbs(profile, seed):
    kb = strategies.random_kb(random.Random(seed), profile)
    again = KnowledgeBase.loads(kb.dumps())
    assert again == kb
    assert again.dumps() == kb.dumps()


def test_upsert_same_id_replaces_description():
    kb = make_kb()
    kb.upsert_actor(ThreatActor("Lazarus Group", id="lazarus", description="old"))
    kb.upsert_actor(ThreatActor("Lazarus Group", id="lazarus", description="new"))
    assert len(kb.actors) == 1
    assert kb.actor("lazarus").description == "new"


def test_cardinality_warning_cites_annotation(profile):
    kb = make_kb()
    kb.upsert_actor(ThreatActor("X", id="x"))
    kb.add_activity(activity(access={"internal", "external"}), profile)
    assert "Access (1)" in kb.diagnostics[0]


def test_truncated_store_is_corrupt_and_untouched(tmp_path, lazarus_kb):
    path = tmp_path / "kb.json"
    save(lazarus_kb, path)
    truncated = path.read_bytes()[:200]
    path.write_bytes(truncated)
    with pytest.raises(StoreCorruptError):
        load(path)
    assert path.read_bytes() == truncated
