"""Threat actor type inference from controlled-vocabulary attribute profiles."""

from .expr import AttributeProfile, evaluate, parse_expression, print_expression
from .kb import Activity, Interval, KnowledgeBase, RelationshipTriple, ThreatActor
from .profile import Profile, builtin_profile, extended_profile, load_profile, term_rank
from .reasoner import classify_activity, classify_actor, classify_kb, lint, relationship_closure

__all__ = [
    "Activity",
    "AttributeProfile",
    "Interval",
    "KnowledgeBase",
    "Profile",
    "RelationshipTriple",
    "ThreatActor",
    "builtin_profile",
    "classify_activity",
    "classify_actor",
    "classify_kb",
    "evaluate",
    "extended_profile",
    "lint",
    "load_profile",
    "parse_expression",
    "print_expression",
    "relationship_closure",
    "term_rank",
]

__version__ = "0.1.0"
