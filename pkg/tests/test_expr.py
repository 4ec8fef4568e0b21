from __future__ import annotations

import pytest
from hypothesis import given, settings

from actortype.errors import ExpressionError, ExpressionSyntaxError, UnknownTermError
from actortype.expr import (
    SOME,
    And,
    AtLeast,
    AtMost,
    AttributeProfile,
    Or,
    Some,
    Value,
    evaluate,
    expression_terms,
    parse_expression,
    print_expression,
    top_level_conjuncts,
)

import oracles
import strategies

MINI = oracles.mini_profile()


def v(kind, vocab, term, prop=None):
    return Value(prop or f"has{kind[0].upper()}{kind[1:]}Attribute", kind, vocab, term)


# -- parsing ------------------------------------------------------------------


def test_parse_value_leaf(profile):
    e = parse_expression("(hasAccessAttribute value access:external)", profile)
    assert e == Value("hasAccessAttribute", "access", "access", "external")


def test_parse_some_leaf_case_insensitive_class(profile):
    e = parse_expression("hasVisibilityAttribute some Visibility", profile)
    assert e == Some("hasVisibilityAttribute", "visibility", "visibility")


def test_parse_ordered_restrictions(profile):
    assert isinstance(parse_expression("hasSkillsAttribute atLeast skills:operational", profile), AtLeast)
    assert isinstance(parse_expression("hasResourcesAttribute atMost resources:club", profile), AtMost)


def test_and_binds_tighter_than_or(profile):
    a = "hasAccessAttribute value access:external"
    b = "hasSkillsAttribute value skills:adept"
    c = "hasLimitsAttribute value limits:legal"
    e = parse_expression(f"{a} or {b} and {c}", profile)
    assert isinstance(e, Or)
    assert isinstance(e.children[1], And)


def test_chains_are_flat(profile):
    a = "(hasAccessAttribute value access:external)"
    e = parse_expression(f"{a} and {a} and {a}", profile)
    assert isinstance(e, And) and len(e.children) == 3


def test_alias_term_canonicalised(profile):
    e = parse_expression("hasVisibilityAttribute value visibility:opportunistic", profile)
    assert e.term == "dontCare"


def test_unknown_term_reports_position(profile):
    with pytest.raises(ExpressionError) as info:
        parse_expression("(hasAccessAttribute value access:external)\nand (hasSkillsAttribute value skills:wizard)", profile)
    assert (info.value.line, info.value.column) == (2, 31)
    assert isinstance(info.value.__cause__, UnknownTermError)


def test_unknown_property(profile):
    with pytest.raises(ExpressionError) as info:
        parse_expression("hasColourAttribute value access:external", profile)
    assert info.value.column == 1


def test_wrong_vocabulary_prefix(profile):
    with pytest.raises(ExpressionError):
        parse_expression("hasAccessAttribute value skills:adept", profile)


def test_at_least_on_unordered_vocabulary(profile):
    with pytest.raises(ExpressionError):
        parse_expression("hasAccessAttribute atLeast access:external", profile)


@pytest.mark.parametrize("text", [
    "",
    "(hasAccessAttribute value access:external",
    "hasAccessAttribute value access:external)",
    "hasAccessAttribute equals access:external",
    "hasAccessAttribute value external",
    "hasAccessAttribute value access:external and",
    "and hasAccessAttribute value access:external",
])
def test_syntax_errors(profile, text):
    with pytest.raises(ExpressionSyntaxError):
        parse_expression(text, profile)


def test_node_arity_enforced():
    leaf = v("color", "Color", "red")
    with pytest.raises(ValueError):
        And((leaf,))
    with pytest.raises(ValueError):
        Or(())


@settings(max_examples=300)
@given(strategies.expressions(MINI))
def test_print_parse_roundtrip(expr):
    assert parse_expression(print_expression(expr), MINI) == expr


def test_every_shipped_rule_roundtrips(ext_profile):
    for rule in ext_profile.types:
        assert parse_expression(print_expression(rule.expression), ext_profile) == rule.expression


# -- evaluation ---------------------------------------------------------------


def test_value_semantics():
    e = v("color", "Color", "red")
    assert evaluate(e, {"color": {"red", "blue"}}, MINI).satisfied
    assert not evaluate(e, {"color": {"blue"}}, MINI).satisfied


def test_missing_kind_is_empty_set():
    assert not evaluate(v("color", "Color", "red"), {}, MINI).satisfied
    assert not evaluate(Some("hasColorAttribute", "color", "Color"), {}, MINI).satisfied


def test_at_least_is_existential():
    e = AtLeast("hasLevelAttribute", "level", "Level", "high")
    assert evaluate(e, {"level": {"low", "high"}}, MINI).satisfied
    assert not evaluate(e, {"level": {"low"}}, MINI).satisfied


def test_at_most_is_universal_and_false_on_empty():
    e = AtMost("hasLevelAttribute", "level", "Level", "low")
    assert evaluate(e, {"level": {"low"}}, MINI).satisfied
    assert not evaluate(e, {"level": {"low", "high"}}, MINI).satisfied
    assert not evaluate(e, {}, MINI).satisfied


def test_trace_mirrors_tree_and_records_matches():
    e = And((v("color", "Color", "red"), Or((v("shape", "Shape", "round"), v("shape", "Shape", "square")))))
    t = evaluate(e, {"color": {"red"}, "shape": {"square"}}, MINI)
    assert t.satisfied
    assert [c.satisfied for c in t.children] == [True, True]
    assert [c.satisfied for c in t.children[1].children] == [False, True]
    assert t.children[0].matched_terms == {"red"}
    assert len(list(t.leaves())) == 3
    d = t.to_dict()
    assert d["children"][1]["children"][1]["matched_terms"] == ["square"]


def test_evaluate_accepts_attribute_profile(profile):
    attrs = AttributeProfile.from_mapping({"access": ["external"]}, profile)
    e = parse_expression("hasAccessAttribute value access:external", profile)
    assert evaluate(e, attrs, profile).satisfied


def test_expression_terms_and_conjuncts(profile):
    e = parse_expression("(hasVisibilityAttribute some Visibility) and (hasSkillsAttribute value skills:adept)", profile)
    assert expression_terms(e) == {("visibility", SOME), ("skills", "adept")}
    assert len(top_level_conjuncts(e)) == 2


@settings(max_examples=400)
@given(strategies.expressions(MINI), strategies.attribute_maps(MINI))
def test_evaluate_matches_dnf_oracle(expr, attrs):
    assert evaluate(expr, attrs, MINI).satisfied == oracles.dnf_evaluate(expr, attrs, MINI)


@settings(max_examples=400)
@given(strategies.expressions(MINI, allow_atmost=False), strategies.attribute_maps(MINI),
       strategies.attribute_maps(MINI))
def test_monotone_without_at_most(expr, small, extra):
    big = {k: small.get(k, frozenset()) | extra.get(k, frozenset()) for k in set(small) | set(extra)}
    if evaluate(expr, small, MINI).satisfied:
        assert evaluate(expr, big, MINI).satisfied


def test_at_most_is_not_monotone():
    e = AtMost("hasLevelAttribute", "level", "Level", "low")
    assert evaluate(e, {"level": {"low"}}, MINI).satisfied
    assert not evaluate(e, {"level": {"low", "high"}}, MINI).satisfied


def test_published_rule_shape(profile):
    e = profile.type_rule("governmentCyberwarrior").expression
    assert isinstance(e, And) and len(e.children) == 8
    assert e.children[0] == Or((Some("hasVisibilityAttribute", "visibility", "visibility"),
                                Value("hasVisibilityAttribute", "visibility", "visibility", "dontCare")))
    assert ("visibility", SOME) in expression_terms(e)


def test_precedence_example(profile):
    e = parse_expression("hasAccessAttribute value access:internal or hasAccessAttribute value access:external"
                         " and hasSkillsAttribute value skills:adept", profile)
    internal = Value("hasAccessAttribute", "access", "access", "internal")
    external = Value("hasAccessAttribute", "access", "access", "external")
    adept = Value("hasSkillsAttribute", "skills", "skills", "adept")
    assert e == Or((internal, And((external, adept))))


def test_at_most_on_visibility_rejected(profile):
    with pytest.raises(ExpressionError):
        parse_expression("hasVisibilityAttribute atMost visibility:overt", profile)


def test_print_leaf_and_nesting():
    a = Value("hasAccessAttribute", "access", "access", "external")
    assert print_expression(a) == "(hasAccessAttribute value access:external)"
    b, c = v("color", "Color", "red"), v("color", "Color", "blue")
    assert print_expression(And((a, Or((b, c))))) == (
        "((hasAccessAttribute value access:external) and "
        "((hasColorAttribute value Color:red) or (hasColorAttribute value Color:blue)))")


def test_expression_terms_dedupes():
    x = Value("hasAccessAttribute", "access", "access", "external")
    assert expression_terms(x) == {("access", "external")}
    assert expression_terms(And((x, x))) == {("access", "external")}
