"""Server-side input validation.

Everything arriving over the wire is validated before any other processing:
length ceiling, control characters, and the forbidden metacharacter set
targeting injection (quotes, semicolons, quote-dash-dash) and script/markup
(angle brackets) attacks, then an optional per-field allowed pattern. The
resource store behind the gateway is keyed-blob only, so there is no query
language to inject into; this layer is the belt to that suspenders.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class InputReject(Enum):
    TOO_LONG = "TooLong"
    CONTROL_CHARACTERS = "ControlCharacters"
    INJECTION = "Injection"
    MARKUP = "Markup"
    PATTERN = "Pattern"


@dataclass(frozen=True)
class InputSpec:
    max_len: int
    allowed_pattern: Optional[str] = None


@dataclass(frozen=True)
class InputCheck:
    ok: bool
    field_name: str
    reason: Optional[InputReject] = None


_INJECTION_CHARS = set("';")
_MARKUP_CHARS = set("<>")


def validate_input(field_name: str, value: str, spec: InputSpec) -> InputCheck:
    if len(value) > spec.max_len:
        return InputCheck(False, field_name, InputReject.TOO_LONG)
    for index, ch in enumerate(value):
        if ord(ch) < 0x20 or ord(ch) == 0x7F:
            return InputCheck(False, field_name, InputReject.CONTROL_CHARACTERS)
        if ch in _INJECTION_CHARS:
            return InputCheck(False, field_name, InputReject.INJECTION)
        if ch == "-" and value[index : index + 2] == "--":
            return InputCheck(False, field_name, InputReject.INJECTION)
        if ch in _MARKUP_CHARS:
            return InputCheck(False, field_name, InputReject.MARKUP)
    if spec.allowed_pattern is not None and not re.fullmatch(spec.allowed_pattern, value):
        return InputCheck(False, field_name, InputReject.PATTERN)
    return InputCheck(True, field_name)


FIELD_SPECS = {
    "principal_id": InputSpec(64, r"[A-Za-z0-9@._\-]+"),
    "display_name": InputSpec(128),
    "resource": InputSpec(64, r"[A-Za-z0-9._\-]+"),
    "role": InputSpec(32, r"[A-Za-z0-9_\-]+"),
    "ticket": InputSpec(64, r"[A-Za-z0-9_\-]+"),
    "token_code": InputSpec(9, r"[0-9]{6,9}"),
    "password": InputSpec(128),
    "reason": InputSpec(256),
    "nonce": InputSpec(32, r"[0-9a-f]{32}"),
    "session_id": InputSpec(64, r"[0-9a-f]{64}"),
}
