"""Network-edge availability protection keyed by source IP.

Admission order is fixed: whitelist first (a non-whitelisted probe is
rejected immediately and itself earns the 24-hour lockout), then any active
cooldown, then the per-IP concurrent-connection ceiling. Three consecutive
sign-in failures trigger a cooldown of exactly ``cooldown_seconds``;
a success resets the streak. Cooldown deadlines are never extended by
traffic arriving during the cooldown.

All time arithmetic uses caller-supplied ``now`` values; this module never
reads the wall clock.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from .clock import DAY
from .errors import NotConnected

DEFAULT_MAX_FAILURES = 3
DEFAULT_COOLDOWN_SECONDS = DAY
DEFAULT_MAX_CONCURRENT = 8


class RejectReason(Enum):
    NOT_WHITELISTED = "NotWhitelisted"
    COOLING_DOWN = "CoolingDown"
    TOO_MANY_CONNECTIONS = "TooManyConnections"


@dataclass(frozen=True)
class AdmitVerdict:
    admitted: bool
    reason: Optional[RejectReason] = None
    cooldown_until: Optional[int] = None
    # True when this very call recorded a new cooldown (non-whitelisted probe)
    cooldown_recorded: bool = False


@dataclass
class FailureStreak:
    count: int = 0
    window_start: int = 0


class Guard:
    """Per-IP whitelist, failure streaks, cooldowns, and connection counts."""

    def __init__(
        self,
        whitelist: Optional[set[str]] = None,
        max_failures: int = DEFAULT_MAX_FAILURES,
        cooldown_seconds: int = DEFAULT_COOLDOWN_SECONDS,
        max_concurrent_per_ip: int = DEFAULT_MAX_CONCURRENT,
    ) -> None:
        self.whitelist: set[str] = set(whitelist or ())
        self.max_failures = max_failures
        self.cooldown_seconds = cooldown_seconds
        self.max_concurrent_per_ip = max_concurrent_per_ip
        self.failures: dict[str, FailureStreak] = {}
        self.cooldowns: dict[str, int] = {}
        self.active_connections: dict[str, int] = {}
        self._lock = threading.RLock()

    def _cooling(self, ip: str, now: int) -> Optional[int]:
        until = self.cooldowns.get(ip)
        return until if until is not None and now < until else None

    def admit(self, ip: str, now: int) -> AdmitVerdict:
        with self._lock:
            if ip not in self.whitelist:
                recorded = False
                if self._cooling(ip, now) is None:
                    self.cooldowns[ip] = now + self.cooldown_seconds
                    recorded = True
                return AdmitVerdict(
                    False,
                    RejectReason.NOT_WHITELISTED,
                    cooldown_until=self.cooldowns[ip],
                    cooldown_recorded=recorded,
                )
            until = self._cooling(ip, now)
            if until is not None:
                return AdmitVerdict(False, RejectReason.COOLING_DOWN, cooldown_until=until)
            if self.active_connections.get(ip, 0) >= self.max_concurrent_per_ip:
                return AdmitVerdict(False, RejectReason.TOO_MANY_CONNECTIONS)
            self.active_connections[ip] = self.active_connections.get(ip, 0) + 1
            return AdmitVerdict(True)

    def record_failure(self, ip: str, now: int) -> Optional[int]:
        """Count one sign-in failure; returns the cooldown deadline when triggered."""
        with self._lock:
            streak = self.failures.setdefault(ip, FailureStreak())
            if streak.count == 0:
                streak.window_start = now
            streak.count += 1
            if streak.count < self.max_failures:
                return None
            streak.count = 0
            if self._cooling(ip, now) is not None:
                return None  # existing deadline stands
            until = now + self.cooldown_seconds
            self.cooldowns[ip] = until
            return until

    def record_success(self, ip: str) -> None:
        with self._lock:
            if ip in self.failures:
                self.failures[ip].count = 0

    def release(self, ip: str) -> None:
        with self._lock:
            if self.active_connections.get(ip, 0) <= 0:
                raise NotConnected(f"no active connection for {ip}")
            self.active_connections[ip] -= 1

    def active_count(self, ip: str) -> int:
        with self._lock:
            return self.active_connections.get(ip, 0)

    def cooldown_report(self, now: int) -> list[tuple[str, int]]:
        """Active cooldowns only, soonest deadline first."""
        with self._lock:
            active = [(ip, until) for ip, until in self.cooldowns.items() if until > now]
        return sorted(active, key=lambda item: (item[1], item[0]))

    def cooldowns_snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.cooldowns)


def load_whitelist(path: Path) -> set[str]:
    """One IP per line; '#' starts a comment."""
    entries: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            entries.add(stripped)
    return entries


def save_whitelist(entries: set[str], path: Path) -> None:
    Path(path).write_text("\n".join(sorted(entries)) + "\n", encoding="utf-8")
