"""One-time-token second factor: seed provisioning, codes, verification.

Codes are derived HOTP-style from the shared HMAC primitive: the time
counter ``floor(epoch / step)`` is packed as 8 big-endian bytes, tagged with
HMAC-SHA256 under the 20-byte seed, dynamically truncated to 31 bits, and
reduced mod 10^digits. Verification tolerates one step of clock skew in
either direction and enforces single use through a high-water-mark counter:
once a counter value is accepted, it and everything below it are dead
forever.
"""

from __future__ import annotations

import base64
import secrets
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Container, Optional

from . import crypto_core
from .errors import AlreadyProvisioned, ParseError, UnknownPrincipal

SEED_BYTES = 20
DEFAULT_STEP_SECONDS = 30
DEFAULT_DIGITS = 6
SKEW_STEPS = 1
SEED_LINE_HEADER = "PROMETHEUS SEED V1"


@dataclass
class TokenSeed:
    principal_id: str
    seed: bytes
    step_seconds: int = DEFAULT_STEP_SECONDS
    digits: int = DEFAULT_DIGITS
    last_accepted_counter: int = -1

    def __post_init__(self) -> None:
        if len(self.seed) != SEED_BYTES:
            raise ValueError(f"seed must be {SEED_BYTES} bytes, got {len(self.seed)}")
        if not 6 <= self.digits <= 9:
            raise ValueError(f"digits must be in [6, 9], got {self.digits}")
        if self.step_seconds <= 0:
            raise ValueError("step_seconds must be positive")


class RejectReason(Enum):
    BAD_CODE = "BadCode"
    REPLAY = "Replay"
    UNKNOWN_PRINCIPAL = "UnknownPrincipal"


@dataclass(frozen=True)
class TokenVerdict:
    accepted: bool
    counter: Optional[int] = None
    reason: Optional[RejectReason] = None

    @classmethod
    def accept(cls, counter: int) -> "TokenVerdict":
        return cls(True, counter=counter)

    @classmethod
    def reject(cls, reason: RejectReason) -> "TokenVerdict":
        return cls(False, reason=reason)


def time_counter(now: int, step_seconds: int = DEFAULT_STEP_SECONDS) -> int:
    return int(now) // step_seconds


def token_for_counter(seed: TokenSeed, counter: int) -> str:
    """Code for an explicit counter value (31-bit dynamic truncation)."""
    tag = crypto_core.mac(seed.seed, struct.pack(">Q", counter))
    offset = tag[-1] & 0x0F
    truncated = struct.unpack(">L", tag[offset : offset + 4])[0] & 0x7FFFFFFF
    return str(truncated % (10 ** seed.digits)).zfill(seed.digits)


def current_token(seed: TokenSeed, now: int) -> str:
    return token_for_counter(seed, time_counter(now, seed.step_seconds))


# ---------------------------------------------------------------------------
# Enrollment line format
# ---------------------------------------------------------------------------

def export_seed_line(seed: TokenSeed) -> str:
    """Single-line enrollment export handed to the user once."""
    seed_b32 = base64.b32encode(seed.seed).decode("ascii")
    return f"{SEED_LINE_HEADER};{seed.principal_id};{seed_b32};{seed.step_seconds};{seed.digits}"


def parse_seed_line(line: str) -> TokenSeed:
    """Parse an enrollment line; a trailing counter field (server state) is optional."""
    parts = line.strip().split(";")
    if len(parts) not in (5, 6) or parts[0] != SEED_LINE_HEADER:
        raise ParseError(f"malformed seed line: {line!r}")
    try:
        seed = TokenSeed(
            principal_id=parts[1],
            seed=base64.b32decode(parts[2]),
            step_seconds=int(parts[3]),
            digits=int(parts[4]),
        )
    except (ValueError, KeyError) as exc:
        raise ParseError(f"malformed seed line: {exc}") from exc
    if len(parts) == 6:
        seed.last_accepted_counter = int(parts[5])
    return seed


# ---------------------------------------------------------------------------
# Seed store
# ---------------------------------------------------------------------------

class TokenStore:
    """Per-principal seeds with serialized verify (compare-and-advance on the counter)."""

    def __init__(self) -> None:
        self._seeds: dict[str, TokenSeed] = {}
        self._lock = threading.RLock()

    def provision_seed(self, principal_id: str, known_principals: Container[str]) -> TokenSeed:
        """Enroll a fresh random seed; re-enrollment requires an explicit reset first."""
        if principal_id not in known_principals:
            raise UnknownPrincipal(f"principal {principal_id!r} is not onboarded")
        with self._lock:
            if principal_id in self._seeds:
                raise AlreadyProvisioned(
                    f"principal {principal_id!r} already has a seed; reset it first"
                )
            seed = TokenSeed(principal_id=principal_id, seed=secrets.token_bytes(SEED_BYTES))
            self._seeds[principal_id] = seed
            return seed

    def reset_seed(self, principal_id: str) -> None:
        """Admin reset: drop the seed so the principal can be re-enrolled."""
        with self._lock:
            if principal_id not in self._seeds:
                raise UnknownPrincipal(f"no seed provisioned for {principal_id!r}")
            del self._seeds[principal_id]

    def get(self, principal_id: str) -> Optional[TokenSeed]:
        with self._lock:
            return self._seeds.get(principal_id)

    def add(self, seed: TokenSeed) -> None:
        with self._lock:
            self._seeds[seed.principal_id] = seed

    def verify_token(self, principal_id: str, code: str, now: int) -> TokenVerdict:
        with self._lock:
            seed = self._seeds.get(principal_id)
            if seed is None:
                return TokenVerdict.reject(RejectReason.UNKNOWN_PRINCIPAL)
            current = time_counter(now, seed.step_seconds)
            matches = []
            for counter in range(current - SKEW_STEPS, current + SKEW_STEPS + 1):
                if counter < 0:
                    continue
                expected = token_for_counter(seed, counter)
                if crypto_core.constant_time_equal(expected.encode(), code.encode()):
                    matches.append(counter)
            fresh = [c for c in matches if c > seed.last_accepted_counter]
            if fresh:
                accepted = min(fresh)
                seed.last_accepted_counter = accepted
                return TokenVerdict.accept(accepted)
            if matches:
                return TokenVerdict.reject(RejectReason.REPLAY)
            return TokenVerdict.reject(RejectReason.BAD_CODE)

    # -- persistence -------------------------------------------------------

    def dump_lines(self) -> list[str]:
        with self._lock:
            return [
                export_seed_line(seed) + f";{seed.last_accepted_counter}"
                for seed in self._seeds.values()
            ]

    @classmethod
    def from_lines(cls, lines: list[str]) -> "TokenStore":
        store = cls()
        for line in lines:
            if line.strip():
                store.add(parse_seed_line(line))
        return store
