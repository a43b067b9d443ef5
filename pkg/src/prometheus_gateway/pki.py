"""Certificate authority, issuance, revocation list, and status checks.

One root CA, no intermediate chains. Certificates and revocation lists
travel in a three-line text envelope::

    PROMETHEUS CERT V1            (or PROMETHEUS CRL V1)
    <base64 canonical payload>
    <base64 signature>

The canonical payload is UTF-8 ``key=value`` pairs sorted by key and joined
by single ``;``, timestamps rendered RFC-3339 UTC. Signatures always cover
the canonical payload, so a reload from disk verifies bit-exactly.

The revocation list is the single source of truth for certificate status:
the OCSP-style :func:`check_status` is a query over the latest signed list.
The list carries the issuer's serial ceiling and the (revoked_at, reason)
detail per serial so Good/Revoked/Unknown is decidable from the signed
artifact alone.
"""

from __future__ import annotations

import base64
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from . import crypto_core
from .clock import parse_rfc3339, rfc3339
from .crypto_core import KeyPair, PrivateKey, PublicKey
from .errors import (
    BadCrlSignature,
    EmptySubject,
    EnvelopeFormatError,
    InvalidValidityWindow,
    UnknownSerial,
)

CERT_HEADER = "PROMETHEUS CERT V1"
CRL_HEADER = "PROMETHEUS CRL V1"


# ---------------------------------------------------------------------------
# Canonical payload helpers
# ---------------------------------------------------------------------------

def _encode_field(value: str) -> str:
    if ";" in value or "\n" in value:
        raise EnvelopeFormatError(f"field value may not contain ';' or newline: {value!r}")
    return value


def _canonical(fields: dict[str, str]) -> bytes:
    pairs = [f"{key}={_encode_field(fields[key])}" for key in sorted(fields)]
    return ";".join(pairs).encode("utf-8")


def _parse_canonical(payload: bytes) -> dict[str, str]:
    fields: dict[str, str] = {}
    for item in payload.decode("utf-8").split(";"):
        key, sep, value = item.partition("=")
        if not sep:
            raise EnvelopeFormatError(f"malformed canonical item: {item!r}")
        fields[key] = value
    return fields


def _encode_public_key(key: PublicKey) -> str:
    return f"{key.scheme}:{base64.b64encode(key.data).decode('ascii')}"


def _decode_public_key(text: str) -> PublicKey:
    scheme, sep, data = text.partition(":")
    if not sep:
        raise EnvelopeFormatError(f"malformed public key field: {text!r}")
    return PublicKey(scheme, base64.b64decode(data))


def _encode_envelope(header: str, payload: bytes, signature: bytes) -> str:
    return "\n".join(
        [
            header,
            base64.b64encode(payload).decode("ascii"),
            base64.b64encode(signature).decode("ascii"),
        ]
    )


def _decode_envelope(text: str, expected_header: str) -> tuple[bytes, bytes]:
    lines = [line for line in text.strip().splitlines() if line.strip()]
    if len(lines) != 3 or lines[0].strip() != expected_header:
        raise EnvelopeFormatError(f"expected 3-line {expected_header} envelope")
    try:
        payload = base64.b64decode(lines[1].strip(), validate=True)
        signature = base64.b64decode(lines[2].strip(), validate=True)
    except Exception as exc:
        raise EnvelopeFormatError(f"bad base64 in envelope: {exc}") from exc
    return payload, signature


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    serial: int
    subject: str
    subject_public_key: PublicKey
    issuer: str
    not_before: int
    not_after: int
    signature: bytes

    def canonical_payload(self) -> bytes:
        return _canonical(
            {
                "issuer": self.issuer,
                "not_after": rfc3339(self.not_after),
                "not_before": rfc3339(self.not_before),
                "serial": str(self.serial),
                "subject": self.subject,
                "subject_public_key": _encode_public_key(self.subject_public_key),
            }
        )


def encode_certificate(cert: Certificate) -> str:
    return _encode_envelope(CERT_HEADER, cert.canonical_payload(), cert.signature)


def decode_certificate(text: str) -> Certificate:
    payload, signature = _decode_envelope(text, CERT_HEADER)
    fields = _parse_canonical(payload)
    try:
        return Certificate(
            serial=int(fields["serial"]),
            subject=fields["subject"],
            subject_public_key=_decode_public_key(fields["subject_public_key"]),
            issuer=fields["issuer"],
            not_before=parse_rfc3339(fields["not_before"]),
            not_after=parse_rfc3339(fields["not_after"]),
            signature=signature,
        )
    except KeyError as exc:
        raise EnvelopeFormatError(f"certificate payload missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Revocation list
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RevocationEntry:
    serial: int
    revoked_at: int
    reason: str


@dataclass(frozen=True)
class RevocationList:
    issuer: str
    issued_at: int
    entries: tuple[RevocationEntry, ...]  # sorted by serial
    max_serial: int  # highest serial issued when the list was signed
    signature: bytes

    @property
    def revoked_serials(self) -> frozenset[int]:
        return frozenset(entry.serial for entry in self.entries)

    def canonical_payload(self) -> bytes:
        return crl_canonical_payload(self.issuer, self.issued_at, self.entries, self.max_serial)


def _encode_entry(entry: RevocationEntry) -> str:
    reason_b64 = base64.urlsafe_b64encode(entry.reason.encode("utf-8")).decode("ascii")
    return f"{entry.serial}|{rfc3339(entry.revoked_at)}|{reason_b64}"


def _decode_entry(text: str) -> RevocationEntry:
    parts = text.split("|")
    if len(parts) != 3:
        raise EnvelopeFormatError(f"malformed revocation entry: {text!r}")
    return RevocationEntry(
        serial=int(parts[0]),
        revoked_at=parse_rfc3339(parts[1]),
        reason=base64.urlsafe_b64decode(parts[2]).decode("utf-8"),
    )


def crl_canonical_payload(
    issuer: str,
    issued_at: int,
    entries: Iterable[RevocationEntry],
    max_serial: int,
) -> bytes:
    ordered = sorted(entries, key=lambda e: e.serial)
    return _canonical(
        {
            "issued_at": rfc3339(issued_at),
            "issuer": issuer,
            "max_serial": str(max_serial),
            "revoked": ",".join(_encode_entry(e) for e in ordered),
        }
    )


def encode_crl(crl: RevocationList) -> str:
    return _encode_envelope(CRL_HEADER, crl.canonical_payload(), crl.signature)


def decode_crl(text: str) -> RevocationList:
    payload, signature = _decode_envelope(text, CRL_HEADER)
    fields = _parse_canonical(payload)
    try:
        raw = fields["revoked"]
        entries = tuple(_decode_entry(item) for item in raw.split(",") if item)
        return RevocationList(
            issuer=fields["issuer"],
            issued_at=parse_rfc3339(fields["issued_at"]),
            entries=entries,
            max_serial=int(fields["max_serial"]),
            signature=signature,
        )
    except KeyError as exc:
        raise EnvelopeFormatError(f"CRL payload missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Status and validation
# ---------------------------------------------------------------------------

class StatusKind(Enum):
    GOOD = "Good"
    REVOKED = "Revoked"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class CertStatus:
    kind: StatusKind
    revoked_at: Optional[int] = None
    reason: Optional[str] = None


def check_status(serial: int, crl: RevocationList, issuer_public_key: PublicKey) -> CertStatus:
    """OCSP-style status query answered from the signed revocation list."""
    if not crypto_core.verify_signature(issuer_public_key, crl.canonical_payload(), crl.signature):
        raise BadCrlSignature(f"revocation list signature does not verify for {crl.issuer!r}")
    for entry in crl.entries:
        if entry.serial == serial:
            return CertStatus(StatusKind.REVOKED, entry.revoked_at, entry.reason)
    if 1 <= serial <= crl.max_serial:
        return CertStatus(StatusKind.GOOD)
    return CertStatus(StatusKind.UNKNOWN)


class InvalidReason(Enum):
    BAD_SIGNATURE = "BadSignature"
    NOT_YET_VALID = "NotYetValid"
    EXPIRED = "Expired"
    REVOKED = "Revoked"
    UNKNOWN_SERIAL = "UnknownSerial"
    BAD_CRL_SIGNATURE = "BadCrlSignature"


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    reason: Optional[InvalidReason] = None

    @classmethod
    def ok(cls) -> "ValidationResult":
        return cls(True)

    @classmethod
    def invalid(cls, reason: InvalidReason) -> "ValidationResult":
        return cls(False, reason)


def validate_certificate(
    cert: Certificate,
    trust_anchor: PublicKey,
    crl: RevocationList,
    now: int,
) -> ValidationResult:
    """Full check in fixed order: signature, validity window, revocation status."""
    if not crypto_core.verify_signature(trust_anchor, cert.canonical_payload(), cert.signature):
        return ValidationResult.invalid(InvalidReason.BAD_SIGNATURE)
    if now < cert.not_before:
        return ValidationResult.invalid(InvalidReason.NOT_YET_VALID)
    if now > cert.not_after:
        return ValidationResult.invalid(InvalidReason.EXPIRED)
    if crl.issuer != cert.issuer:
        return ValidationResult.invalid(InvalidReason.UNKNOWN_SERIAL)
    try:
        status = check_status(cert.serial, crl, trust_anchor)
    except BadCrlSignature:
        return ValidationResult.invalid(InvalidReason.BAD_CRL_SIGNATURE)
    if status.kind is StatusKind.REVOKED:
        return ValidationResult.invalid(InvalidReason.REVOKED)
    if status.kind is StatusKind.UNKNOWN:
        return ValidationResult.invalid(InvalidReason.UNKNOWN_SERIAL)
    return ValidationResult.ok()


# ---------------------------------------------------------------------------
# Certificate authority
# ---------------------------------------------------------------------------

class CertificateAuthority:
    """Sole issuer and revoker of certificates; root of trust for validation.

    Issuance and revocation serialize on an internal lock; serials are
    assigned from a strictly increasing counter starting at 1. Revocation is
    irreversible and the revoked set only grows, so every list signed later
    contains every serial from every earlier list.
    """

    def __init__(self, ca_id: str, keypair: KeyPair) -> None:
        self.id = ca_id
        self.keypair = keypair
        self.next_serial = 1
        self.issued: dict[int, Certificate] = {}
        self.revoked: dict[int, RevocationEntry] = {}
        self._lock = threading.RLock()

    @property
    def public_key(self) -> PublicKey:
        return self.keypair.public_key

    @property
    def private_key(self) -> PrivateKey:
        return self.keypair.private_key

    def issue_certificate(
        self,
        subject: str,
        subject_public_key: PublicKey,
        not_before: int,
        not_after: int,
    ) -> Certificate:
        if not subject:
            raise EmptySubject("certificate subject must be non-empty")
        if not_before >= not_after:
            raise InvalidValidityWindow(
                f"not_before {rfc3339(not_before)} must precede not_after {rfc3339(not_after)}"
            )
        with self._lock:
            serial = self.next_serial
            self.next_serial += 1
            unsigned = Certificate(
                serial=serial,
                subject=subject,
                subject_public_key=subject_public_key,
                issuer=self.id,
                not_before=not_before,
                not_after=not_after,
                signature=b"",
            )
            signature = crypto_core.sign(self.private_key, unsigned.canonical_payload())
            cert = Certificate(
                serial=serial,
                subject=subject,
                subject_public_key=subject_public_key,
                issuer=self.id,
                not_before=not_before,
                not_after=not_after,
                signature=signature,
            )
            self.issued[serial] = cert
            return cert

    def revoke(self, serial: int, reason: str, now: int) -> RevocationList:
        with self._lock:
            if serial not in self.issued:
                raise UnknownSerial(f"serial {serial} was not issued by {self.id!r}")
            if serial not in self.revoked:
                self.revoked[serial] = RevocationEntry(serial, now, reason)
            return self.current_crl(now)

    def current_crl(self, now: int) -> RevocationList:
        """Sign a fresh revocation list reflecting current state."""
        with self._lock:
            entries = tuple(sorted(self.revoked.values(), key=lambda e: e.serial))
            max_serial = self.next_serial - 1
            payload = crl_canonical_payload(self.id, now, entries, max_serial)
            signature = crypto_core.sign(self.private_key, payload)
            return RevocationList(
                issuer=self.id,
                issued_at=now,
                entries=entries,
                max_serial=max_serial,
                signature=signature,
            )

    # -- persistence -------------------------------------------------------

    def to_state(self) -> dict:
        with self._lock:
            return {
                "id": self.id,
                "scheme": self.keypair.private_key.scheme,
                "modulus_bits": self.keypair.modulus_bits,
                "private_key": base64.b64encode(self.keypair.private_key.data).decode("ascii"),
                "public_key": base64.b64encode(self.keypair.public_key.data).decode("ascii"),
                "next_serial": self.next_serial,
                "issued": [encode_certificate(c) for c in self.issued.values()],
                "revoked": [
                    [e.serial, rfc3339(e.revoked_at), e.reason] for e in self.revoked.values()
                ],
            }

    @classmethod
    def from_state(cls, state: dict) -> "CertificateAuthority":
        scheme = state["scheme"]
        keypair = KeyPair(
            public_key=PublicKey(scheme, base64.b64decode(state["public_key"])),
            private_key=PrivateKey(scheme, base64.b64decode(state["private_key"])),
            modulus_bits=int(state["modulus_bits"]),
        )
        ca = cls(state["id"], keypair)
        ca.next_serial = int(state["next_serial"])
        for envelope in state["issued"]:
            cert = decode_certificate(envelope)
            ca.issued[cert.serial] = cert
        for serial, at, reason in state["revoked"]:
            ca.revoked[int(serial)] = RevocationEntry(int(serial), parse_rfc3339(at), reason)
        return ca
