"""Timestamp helpers.

Everything internal is integer epoch seconds (UTC). The wire format for
timestamps is ISO-8601 UTC, e.g. ``2019-06-15T08:30:00Z``.
"""

from __future__ import annotations

import calendar
from datetime import datetime, timezone


def epoch_to_iso(epoch: int | float) -> str:
    """Render epoch seconds as ISO-8601 UTC with a ``Z`` suffix."""
    dt = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def iso_to_epoch(text: str) -> int:
    """Parse an ISO-8601 timestamp into epoch seconds.

    Accepts a trailing ``Z``, an explicit offset, or a bare timestamp
    (interpreted as UTC).
    """
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def yyyymmdd_to_midnight_epoch(yyyymmdd: int) -> int:
    """Epoch seconds of 00:00:00 UTC on the given YYYYMMDD date."""
    year, month, day = yyyymmdd // 10000, (yyyymmdd // 100) % 100, yyyymmdd % 100
    return calendar.timegm((year, month, day, 0, 0, 0))
