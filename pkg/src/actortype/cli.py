"""Command-line front end.

Exit codes: 0 success, 1 domain or validation failure (or lint warnings
under ``--strict``), 2 usage error. Data goes to stdout, diagnostics to
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence, TextIO

from ._time import format_timestamp
from .errors import ActortypeError
from .expr import And, SatisfactionTrace, evaluate, is_leaf, print_expression
from .kb import Activity, KnowledgeBase, RelationshipTriple, ThreatActor, load, save
from .profile import Profile, builtin_profile, load_profile
from .query import parse_query, run_query
from .reasoner import DEFAULT_NEAR_MISS, Severity, classify_kb, lint
from .stix import ImportReport, default_mapping, export_stix_bundle, import_misp_cluster, import_stix_bundle, load_mapping

PROFILE_ENV = "ACTORTYPE_PROFILE"


def resolve_profile(path: str | None) -> Profile:
    """``--profile`` wins, then ``$ACTORTYPE_PROFILE``, then the built-in profile."""
    path = path or os.environ.get(PROFILE_ENV)
    if not path:
        return builtin_profile()
    return load_profile(Path(path).read_bytes())


def _open_kb(path: str, create: bool = False) -> KnowledgeBase:
    if create and not Path(path).exists():
        return KnowledgeBase()
    return load(path)


def _table(rows: list[Sequence[str]], headers: Sequence[str], out: TextIO) -> None:
    cells = [list(headers)] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for r in cells:
        out.write("  ".join(c.ljust(w) for c, w in zip(r, widths, strict=True)).rstrip() + "\n")


def _ts(value) -> str:
    return format_timestamp(value) if value else "-"


def _emit_json(data, out: TextIO) -> None:
    out.write(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _report_findings(findings, err: TextIO) -> int:
    warnings = 0
    for f in findings:
        err.write(f"{f.severity.value}: [{f.code}] {f.subject}: {f.message}\n")
        warnings += f.severity is Severity.WARNING
    return warnings


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_profile_validate(args, out, err) -> int:
    profile = load_profile(Path(args.file).read_bytes())
    out.write(f"ok: profile {profile.profile_version}: {len(profile.vocabularies)} vocabularies, "
              f"{len(profile.attributes)} attributes, {len(profile.types)} type rules\n")
    return 0


def cmd_ingest(args, out, err) -> int:
    profile = resolve_profile(args.profile)
    kb = _open_kb(args.kb, create=True)
    if args.source == "stix":
        mapping = load_mapping(Path(args.mapping).read_bytes()) if args.mapping else default_mapping()
        mapping.validate(profile)
        report = import_stix_bundle(Path(args.file).read_bytes(), kb, mapping, profile)
    elif args.source == "misp":
        mapping = load_mapping(Path(args.mapping).read_bytes()) if args.mapping else default_mapping()
        report = import_misp_cluster(Path(args.file).read_bytes(), kb, mapping, profile)
    else:
        report = _ingest_records(json.loads(Path(args.file).read_text("utf-8")), kb, profile)
    kb.profile_version = profile.profile_version
    save(kb, args.kb)

    if args.json:
        _emit_json(report.to_dict(), out)
    else:
        counts = ", ".join(f"{k}={v}" for k, v in sorted(report.counts.items())) or "nothing"
        out.write(f"imported {counts} into {args.kb}\n")
        for field, value, obj in report.unmapped:
            out.write(f"unmapped {field}={value!r} on {obj}\n")
    for line in report.errors:
        err.write(f"error: {line}\n")
    for line in report.notes:
        err.write(f"note: {line}\n")
    for line in kb.diagnostics:
        err.write(f"warning: {line}\n")
    warnings = _report_findings(report.findings, err)
    if report.errors:
        return 1
    return 1 if args.strict and (warnings or kb.diagnostics) else 0


def _ingest_records(doc: dict, kb: KnowledgeBase, profile: Profile):
    report = ImportReport()
    for a in doc.get("actors", []):
        kb.upsert_actor(ThreatActor.from_dict(a))
        report.count("actor")
    for a in doc.get("activities", []):
        activity = Activity.from_dict(a)
        kb.add_activity(activity, profile)
        report.count("activity")
    for t in doc.get("triples", []):
        kb.assert_triple(RelationshipTriple.from_dict(t))
        report.count("triple")
    report.actors = sorted(a.get("id", "") for a in doc.get("actors", []))
    return report


def cmd_classify(args, out, err) -> int:
    profile = resolve_profile(args.profile)
    kb = load(args.kb)
    report = classify_kb(kb, profile, args.actor or None, args.near_miss)
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    if args.json:
        out.write(report.to_json())
        return 0
    rows = [(e.type_id, e.subject, e.origin.value, _ts(e.interval.start), _ts(e.interval.end))
            for e in report.inferences()]
    _table(rows, ("TYPE", "SUBJECT", "ORIGIN", "START", "END"), out)
    if report.near_misses:
        out.write("\nnear misses:\n")
        for m in report.near_misses:
            for expr, observed in m.failing_conjuncts:
                seen = ", ".join(observed) or "nothing observed"
                out.write(f"  {m.subject} {m.type_id} ({m.satisfied_count}/{m.total_count}): "
                          f"fails {expr}; observed {seen}\n")
    return 0


def _render_trace(trace: SatisfactionTrace, activity: Activity, out: TextIO, depth: int = 1) -> None:
    mark = "[x]" if trace.satisfied else "[ ]"
    line = f"{'  ' * depth}{mark} {print_expression(trace.node) if is_leaf(trace.node) else _label(trace)}"
    if is_leaf(trace.node):
        observed = sorted(activity.attrs.get(trace.node.kind))
        line += f"  observed: {', '.join(observed) if observed else '-'}"
    out.write(line + "\n")
    for child in trace.children:
        _render_trace(child, activity, out, depth + 1)


def _label(trace: SatisfactionTrace) -> str:
    op = "and" if isinstance(trace.node, And) else "or"
    hits = sum(c.satisfied for c in trace.children)
    return f"{op}: {hits}/{len(trace.children)} satisfied"


def cmd_explain(args, out, err) -> int:
    profile = resolve_profile(args.profile)
    kb = load(args.kb)
    if args.activity not in kb.activities:
        err.write(f"error: unknown activity {args.activity!r}\n")
        return 1
    activity = kb.activities[args.activity]
    rule = profile.type_rule(args.type)
    trace = evaluate(rule.expression, activity.attrs, profile)
    if args.json:
        _emit_json({"activity": activity.id, "type_id": rule.id, "trace": trace.to_dict()}, out)
        return 0
    status = "SATISFIED" if trace.satisfied else "NOT SATISFIED"
    out.write(f"{activity.id} / {rule.id}: {status}\n")
    _render_trace(trace, activity, out)
    conjuncts = trace.children if isinstance(rule.expression, And) else (trace,)
    failing = [c for c in conjuncts if not c.satisfied]
    if failing:
        out.write(f"\nnear miss: {len(failing)} of {len(conjuncts)} conjuncts fail\n")
        for c in failing:
            kinds = sorted({leaf.node.kind for leaf in c.leaves()})
            observed = ", ".join(f"{k}:{t}" for k in kinds for t in sorted(activity.attrs.get(k)))
            out.write(f"  {print_expression(c.node)}  observed: {observed or '-'}\n")
    return 0


def cmd_query(args, out, err) -> int:
    profile = resolve_profile(args.profile)
    kb = load(args.kb)
    q = parse_query(args.query, profile)
    timelines = classify_kb(kb, profile).timelines
    results = run_query(q, kb, timelines)
    if args.json:
        for r in results:
            out.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
        return 0
    if q.target == "actors":
        rows = [(r.id, r.fields["name"], ",".join(r.fields["inferred_types"]) or "-") for r in results]
        _table(rows, ("ID", "NAME", "INFERRED"), out)
    else:
        rows = [(r.id, r.fields["actor"], r.fields["start"], ",".join(r.fields["inferred_types"]) or "-")
                for r in results]
        _table(rows, ("ID", "ACTOR", "START", "INFERRED"), out)
    return 0


def cmd_export(args, out, err) -> int:
    profile = resolve_profile(args.profile)
    kb = load(args.kb)
    selection = [a for a in args.actors.split(",") if a]
    report = classify_kb(kb, profile, selection)
    data = export_stix_bundle(kb, report.inferences(), selection)
    Path(args.out).write_bytes(data)
    out.write(f"wrote {len(selection)} actor(s) to {args.out}\n")
    return 0


def cmd_lint(args, out, err) -> int:
    profile = resolve_profile(args.profile)
    kb = load(args.kb)
    findings = lint(kb, profile)
    if args.json:
        _emit_json([f.to_dict() for f in findings], out)
    else:
        _table([(f.code, f.severity.value, f.subject, f.message) for f in findings],
               ("CODE", "SEVERITY", "SUBJECT", "MESSAGE"), out)
    warnings = sum(f.severity is Severity.WARNING for f in findings)
    return 1 if args.strict and warnings else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", help=f"profile JSON (default: ${PROFILE_ENV} or built-in TAL)")

    parser = argparse.ArgumentParser(prog="actortype", description="Threat actor type inference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="profile utilities")
    psub = p.add_subparsers(dest="action", required=True)
    v = psub.add_parser("validate", help="validate a profile file")
    v.add_argument("file")
    v.set_defaults(func=cmd_profile_validate)

    p = sub.add_parser("ingest", help="import data into a knowledge base")
    isub = p.add_subparsers(dest="source", required=True)
    for name, help_text in (("stix", "STIX 2.1 bundle"), ("misp", "MISP threat-actor galaxy cluster"),
                            ("activities", "JSON with actors/activities/triples")):
        i = isub.add_parser(name, parents=[common], help=help_text)
        i.add_argument("file")
        i.add_argument("--kb", required=True)
        if name != "activities":
            i.add_argument("--mapping", help="mapping table JSON (default: shipped stix-tal.json)")
        else:
            i.set_defaults(mapping=None)
        i.add_argument("--strict", action="store_true", help="exit 1 on any lint warning")
        i.add_argument("--json", action="store_true")
        i.set_defaults(func=cmd_ingest)

    c = sub.add_parser("classify", parents=[common], help="infer threat actor types")
    c.add_argument("--kb", required=True)
    c.add_argument("--actor", action="append", help="restrict to actor id (repeatable)")
    c.add_argument("--out", help="write the JSON report here")
    c.add_argument("--near-miss", type=int, default=DEFAULT_NEAR_MISS, metavar="K")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("explain", parents=[common], help="show the satisfaction trace of one rule")
    e.add_argument("--kb", required=True)
    e.add_argument("--activity", required=True)
    e.add_argument("--type", required=True)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_explain)

    q = sub.add_parser("query", parents=[common], help="filter actors or activities")
    q.add_argument("--kb", required=True)
    q.add_argument("query")
    q.add_argument("--json", action="store_true", help="JSON lines output")
    q.set_defaults(func=cmd_query)

    x = sub.add_parser("export", help="export enriched data")
    xsub = x.add_subparsers(dest="format", required=True)
    s = xsub.add_parser("stix", parents=[common], help="STIX 2.1 bundle")
    s.add_argument("--kb", required=True)
    s.add_argument("--actors", required=True, help="comma-separated actor ids")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    lp = sub.add_parser("lint", parents=[common], help="flag implausible characterizations")
    lp.add_argument("--kb", required=True)
    lp.add_argument("--strict", action="store_true")
    lp.add_argument("--json", action="store_true")
    lp.set_defaults(func=cmd_lint)
    return parser


def run(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out, err)
    except (ActortypeError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        err.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())
