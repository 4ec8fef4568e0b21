from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import pytest

from actortype.kb import Activity, KnowledgeBase, RelationshipTriple, ThreatActor
from actortype.profile import builtin_profile, extended_profile

FIXTURES = Path(__file__).parent / "fixtures"
FIXED_NOW = datetime(2024, 1, 1, tzinfo=timezone.utc)


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def read_fixture(name: str) -> dict:
    return json.loads(fixture_path(name).read_text("utf-8"))


def build_kb(doc: dict, profile, activity_order=None) -> KnowledgeBase:
    """Load an actors/activities/triples document with a frozen clock."""
    kb = KnowledgeBase(clock=lambda: FIXED_NOW)
    for a in doc.get("actors", []):
        kb.upsert_actor(ThreatActor.from_dict(a))
    activities = list(doc.get("activities", []))
    if activity_order is not None:
        activities = [activities[i] for i in activity_order]
    for a in activities:
        kb.add_activity(Activity.from_dict(a), profile)
    for t in doc.get("triples", []):
        kb.assert_triple(RelationshipTriple.from_dict(t))
    return kb


@pytest.fixture(scope="session")
def profile():
    return builtin_profile()


@pytest.fixture(scope="session")
def ext_profile():
    return extended_profile()


@pytest.fixture
def lazarus_doc():
    return read_fixture("lazarus.json")


@pytest.fixture
def lazarus_kb(lazarus_doc, ext_profile):
    return build_kb(lazarus_doc, ext_profile)


@pytest.fixture
def apt38_kb(profile):
    return build_kb(read_fixture("apt38.json"), profile)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[number])
