"""Injected clock plus RFC-3339 helpers.

All time-dependent modules take an explicit ``now`` (integer epoch seconds)
or an injected clock; wall-clock time is read only through
:class:`RealClock`, never directly. Sub-second resolution is not used
anywhere, which keeps canonical serializations exact.
"""

from __future__ import annotations

import time
from datetime import datetime, timezone
from functools import lru_cache
from typing import Protocol

HOUR = 3600
DAY = 24 * HOUR


class Clock(Protocol):
    def now(self) -> int: ...


class RealClock:
    def now(self) -> int:
        return int(time.time())


class SimulatedClock:
    """Deterministic clock for tests and the attack harness."""

    def __init__(self, start: int) -> None:
        self._now = int(start)

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        self._now += int(seconds)
        return self._now

    def set(self, when: int) -> None:
        self._now = int(when)


@lru_cache(maxsize=8192)
def rfc3339(epoch: int) -> str:
    """Render integer epoch seconds as an RFC-3339 UTC timestamp."""
    dt = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@lru_cache(maxsize=8192)
def parse_rfc3339(text: str) -> int:
    """Parse an RFC-3339 UTC timestamp ('Z' or numeric offset) to epoch seconds."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())
