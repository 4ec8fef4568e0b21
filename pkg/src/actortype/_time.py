"""RFC 3339 timestamp helpers.

Python 3.10's ``datetime.fromisoformat`` rejects the ``Z`` suffix, so it is
normalised here. All timestamps are kept timezone-aware in UTC.
"""

from __future__ import annotations

import re
from datetime import date, datetime, timezone

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DATETIME_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}[Tt ]\d{2}:\d{2}:\d{2}(\.\d{1,9})?([Zz]|[+-]\d{2}:\d{2})?$"
)


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 date or date-time into an aware UTC datetime.

    A bare date means midnight UTC. Fractional seconds beyond microseconds
    are truncated. Raises ``ValueError`` on anything else.
    """
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    s = text.strip()
    if _DATE_RE.match(s):
        d = date.fromisoformat(s)
        return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)
    if not _DATETIME_RE.match(s):
        raise ValueError(f"not an RFC 3339 timestamp: {text!r}")
    s = s.replace("t", "T").replace(" ", "T")
    if s[-1] in "Zz":
        s = s[:-1] + "+00:00"
    frac = re.search(r"\.(\d+)", s)
    if frac and len(frac.group(1)) > 6:
        s = s[: frac.start(1) + 6] + s[frac.end(1):]
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc) if dt.tzinfo else dt.replace(tzinfo=timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def coerce_timestamp(value: datetime | str) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return parse_timestamp(value)
