"""Append-only hash-chained audit log with escalation detection.

Each record embeds the SHA-256 digest of its predecessor and its own digest
over a canonical serialization, so any byte-level mutation of a stored log
is detectable. The canonical form is a compact JSON object with keys in
fixed order (seq, timestamp, actor, action, outcome, prev_hash); the stored
line appends record_hash as the final key. The in-memory and on-disk forms
are identical, so verification is meaningful after reload.

Access-denied records carry the resource inside the outcome detail
(``resource=<name>;reason=<...>``) so repeated attempts on one protected
resource can be counted for investigations.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import crypto_core
from .clock import rfc3339
from .errors import ParseError

GENESIS_HASH = bytes(crypto_core.DIGEST_BYTES)
DEFAULT_ESCALATION_THRESHOLD = 3


@dataclass(frozen=True)
class Outcome:
    success: bool
    detail: Optional[str] = None

    @classmethod
    def ok(cls, detail: Optional[str] = None) -> "Outcome":
        return cls(True, detail)

    @classmethod
    def failure(cls, detail: str) -> "Outcome":
        return cls(False, detail)

    def to_obj(self) -> dict:
        return {"status": "success" if self.success else "failure", "detail": self.detail}

    @classmethod
    def from_obj(cls, obj: dict) -> "Outcome":
        if obj["status"] not in ("success", "failure"):
            raise ValueError(f"bad outcome status {obj['status']!r}")
        return cls(obj["status"] == "success", obj["detail"])


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    timestamp: int
    actor: str
    action: str
    outcome: Outcome
    prev_hash: bytes
    record_hash: bytes

    def canonical_bytes(self) -> bytes:
        """Serialization covered by record_hash: every field except record_hash."""
        obj = {
            "seq": self.seq,
            "timestamp": rfc3339(self.timestamp),
            "actor": self.actor,
            "action": self.action,
            "outcome": self.outcome.to_obj(),
            "prev_hash": self.prev_hash.hex(),
        }
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=True).encode("utf-8")

    def line(self) -> str:
        # canonical_bytes is a compact JSON object; splice the hash in as the
        # final key rather than re-parsing
        canonical = self.canonical_bytes().decode("ascii")
        return f'{canonical[:-1]},"record_hash":"{self.record_hash.hex()}"}}'


def _record_from_obj(obj: dict) -> AuditRecord:
    from .clock import parse_rfc3339

    return AuditRecord(
        seq=obj["seq"],
        timestamp=parse_rfc3339(obj["timestamp"]),
        actor=obj["actor"],
        action=obj["action"],
        outcome=Outcome.from_obj(obj["outcome"]),
        prev_hash=bytes.fromhex(obj["prev_hash"]),
        record_hash=bytes.fromhex(obj["record_hash"]),
    )


@dataclass(frozen=True)
class ChainStatus:
    ok: bool
    corrupt_seq: Optional[int] = None
    length: int = 0


@dataclass(frozen=True)
class Investigation:
    principal_id: str
    resource: str
    attempt_count: int
    opened_at: int
    notice_text: str


def access_denied_detail(resource: str, reason: str) -> str:
    return f"resource={resource};reason={reason}"


def _denied_resource(detail: Optional[str]) -> Optional[str]:
    if not detail or not detail.startswith("resource="):
        return None
    return detail[len("resource="):].split(";", 1)[0]


class AuditLog:
    """Append-only log; a bound path gets one flushed JSON line per append."""

    def __init__(self, path: Optional[Path] = None) -> None:
        self.records: list[AuditRecord] = []
        self._path = Path(path) if path is not None else None
        self._lock = threading.RLock()

    @classmethod
    def open(cls, path: Path) -> "AuditLog":
        """Bind to a log file, loading any existing records strictly."""
        log = cls(path=path)
        path = Path(path)
        if path.exists():
            for index, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
                if not line.strip():
                    continue
                try:
                    log.records.append(_record_from_obj(json.loads(line)))
                except Exception as exc:
                    raise ParseError(f"audit log line {index}: {exc}") from exc
        return log

    def __len__(self) -> int:
        with self._lock:
            return len(self.records)

    def append(self, actor: str, action: str, outcome: Outcome, now: int) -> AuditRecord:
        with self._lock:
            prev_hash = self.records[-1].record_hash if self.records else GENESIS_HASH
            unsealed = AuditRecord(
                seq=len(self.records),
                timestamp=now,
                actor=actor,
                action=action,
                outcome=outcome,
                prev_hash=prev_hash,
                record_hash=b"",
            )
            record = AuditRecord(
                seq=unsealed.seq,
                timestamp=unsealed.timestamp,
                actor=actor,
                action=action,
                outcome=outcome,
                prev_hash=prev_hash,
                record_hash=crypto_core.digest(unsealed.canonical_bytes()),
            )
            self.records.append(record)
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(record.line() + "\n")
                    fh.flush()
            return record

    def verify_chain(self) -> ChainStatus:
        with self._lock:
            records = list(self.records)
        return _verify_records(records)

    def detect_escalation(
        self,
        principal_id: str,
        now: int,
        threshold: int = DEFAULT_ESCALATION_THRESHOLD,
    ) -> Optional[Investigation]:
        """Investigation when one principal is denied one resource >= threshold times."""
        counts: dict[str, int] = {}
        with self._lock:
            for record in self.records:
                if record.action != "access-denied" or record.actor != principal_id:
                    continue
                if record.outcome.success:
                    continue
                resource = _denied_resource(record.outcome.detail)
                if resource is None:
                    continue
                counts[resource] = counts.get(resource, 0) + 1
        qualifying = {r: n for r, n in counts.items() if n >= threshold}
        if not qualifying:
            return None
        resource = max(sorted(qualifying), key=lambda r: qualifying[r])
        count = qualifying[resource]
        notice = (
            f"Investigation opened: principal {principal_id} denied access to "
            f"{resource} {count} times (threshold {threshold})"
        )
        return Investigation(principal_id, resource, count, now, notice)

    def save(self, path: Path) -> None:
        with self._lock:
            text = "".join(record.line() + "\n" for record in self.records)
        Path(path).write_text(text, encoding="utf-8")


def _verify_records(records: list[AuditRecord]) -> ChainStatus:
    prev_hash = GENESIS_HASH
    for index, record in enumerate(records):
        # canonical_bytes covers every field except record_hash itself
        if (
            record.seq != index
            or not crypto_core.constant_time_equal(
                crypto_core.digest(record.canonical_bytes()), record.record_hash
            )
            or record.prev_hash != prev_hash
        ):
            return ChainStatus(False, corrupt_seq=index, length=len(records))
        prev_hash = record.record_hash
    return ChainStatus(True, length=len(records))


def verify_log_file(path: Path) -> ChainStatus:
    """Byte-strict verification of a stored log file."""
    return verify_log_bytes(Path(path).read_bytes())


def verify_log_bytes(data: bytes) -> ChainStatus:
    """Byte-strict verification of a serialized log.

    Every line must re-serialize to the exact stored bytes (so whitespace,
    key-order, or separator tampering is caught), the serialization must end
    with a single newline, and the chain itself must verify. Unparsable or
    non-canonical lines count as corruption at that index.
    """
    if data == b"":
        return ChainStatus(True, length=0)
    chunks = data.split(b"\n")
    if chunks[-1] == b"":
        chunks = chunks[:-1]
    else:
        # missing or mutated final newline
        return ChainStatus(False, corrupt_seq=len(chunks) - 1, length=len(chunks))
    prev_hash = GENESIS_HASH
    for index, chunk in enumerate(chunks):
        try:
            record = _record_from_obj(json.loads(chunk))
            if record.line().encode("utf-8") != chunk:
                return ChainStatus(False, corrupt_seq=index, length=len(chunks))
        except Exception:
            return ChainStatus(False, corrupt_seq=index, length=len(chunks))
        if (
            record.seq != index
            or not crypto_core.constant_time_equal(
                crypto_core.digest(record.canonical_bytes()), record.record_hash
            )
            or record.prev_hash != prev_hash
        ):
            return ChainStatus(False, corrupt_seq=index, length=len(chunks))
        prev_hash = record.record_hash
    return ChainStatus(True, length=len(chunks))
