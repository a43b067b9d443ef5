"""Two-factor sign-in, SSO sessions, freshness/replay checks, receipts.

A session is issued only when at least two distinct factor kinds
(certificate, one-time token, salted password) validate for the same
principal in one sign-in. Sessions are server-held bearer identifiers bound
to the originating IP; a request arriving from any other IP kills the
session on the spot. One live session authorizes every permitted
application without re-authentication.

Encryption levels are enforced policy labels, not a transport handshake:
a connection whose declared parameters fall below the trusted context's
floor is refused with an administrator-contact notice.

Every served request can be acknowledged with a gateway-signed receipt over
the request digest, session id, and timestamp, giving the caller a
third-party-verifiable proof of service.
"""

from __future__ import annotations

import base64
import secrets
import struct
import threading
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Optional, Sequence, Union

from . import audit as audit_mod
from . import crypto_core
from .clock import parse_rfc3339, rfc3339
from .crypto_core import PrivateKey, PublicKey
from .errors import EnvelopeFormatError, InvalidSession, UnknownPrincipal
from .guard import Guard
from .identity_access import (
    AclEntry,
    DenyReason,
    FactorKind,
    Registry,
    check_access,
)
from .pki import Certificate, RevocationList, validate_certificate
from .token_auth import TokenStore

DEFAULT_SESSION_TTL_SECONDS = 60 * 60
DEFAULT_FRESHNESS_MAX_AGE = 120

CONTACT_ADMIN_NOTICE = (
    "Connection refused by security policy. Contact your administrator for assistance."
)


# ---------------------------------------------------------------------------
# Trusted contexts / encryption-level policy
# ---------------------------------------------------------------------------

class EncryptionLevel(IntEnum):
    NONE = 0
    LOW = 1
    HIGH = 2


class ContextScope(Enum):
    EXTERNAL = "external"
    INTERNAL_SECRET = "internal-secret"


_SCOPE_FLOORS = {ContextScope.EXTERNAL: 256, ContextScope.INTERNAL_SECRET: 128}


@dataclass(frozen=True)
class TrustedContext:
    """Named connection policy: required level plus minimum key bits."""

    name: str
    required_level: EncryptionLevel
    min_key_bits: int
    scope: ContextScope = ContextScope.EXTERNAL

    def __post_init__(self) -> None:
        if self.required_level is EncryptionLevel.HIGH:
            floor = _SCOPE_FLOORS[self.scope]
            if self.min_key_bits < floor:
                raise ValueError(
                    f"high-encryption {self.scope.value} context requires >= {floor} key bits"
                )


@dataclass(frozen=True)
class ContextDecision:
    established: bool
    notice: Optional[str] = None


def establish_trusted_context(
    ctx: TrustedContext,
    offered_level: EncryptionLevel,
    offered_bits: int,
) -> ContextDecision:
    if offered_level >= ctx.required_level and offered_bits >= ctx.min_key_bits:
        return ContextDecision(True)
    return ContextDecision(False, CONTACT_ADMIN_NOTICE)


# ---------------------------------------------------------------------------
# Freshness / replay window
# ---------------------------------------------------------------------------

class Freshness(Enum):
    OK = "Ok"
    STALE = "Stale"
    REPLAYED = "Replayed"


class FreshnessWindow:
    """Request staleness plus nonce replay tracking.

    Seen nonces are retained until :meth:`prune` is called explicitly; the
    uniqueness guarantee (a nonce is OK at most once) holds for the life of
    the window, and pruning is an operator maintenance action.
    """

    def __init__(self, max_age_seconds: int = DEFAULT_FRESHNESS_MAX_AGE) -> None:
        self.max_age_seconds = max_age_seconds
        self._seen: dict[str, int] = {}
        self._lock = threading.RLock()

    def check(self, request_timestamp: int, nonce: str, now: int) -> Freshness:
        if now - request_timestamp > self.max_age_seconds:
            return Freshness.STALE
        with self._lock:
            if nonce in self._seen:
                return Freshness.REPLAYED
            self._seen[nonce] = now
        return Freshness.OK

    def prune(self, now: int) -> int:
        """Drop nonces first seen more than max_age ago; returns count dropped."""
        with self._lock:
            stale = [n for n, seen in self._seen.items() if now - seen > self.max_age_seconds]
            for nonce in stale:
                del self._seen[nonce]
        return len(stale)


def verify_payload_integrity(message: bytes, claimed_digest: bytes) -> bool:
    """True iff the payload hashes to the claimed digest (constant-time)."""
    return crypto_core.constant_time_equal(crypto_core.digest(message), claimed_digest)


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Session:
    session_id: str  # 32 random bytes, hex on the wire
    principal_id: str
    issued_at: int
    expires_at: int
    bound_ip: str
    factors: frozenset[FactorKind]

    def __post_init__(self) -> None:
        if len(self.factors) < 2:
            raise ValueError("sessions require at least two proven factor kinds")


class SessionStore:
    def __init__(self) -> None:
        self._sessions: dict[str, Session] = {}
        self._lock = threading.RLock()

    def create(
        self,
        principal_id: str,
        bound_ip: str,
        factors: frozenset[FactorKind],
        now: int,
        ttl_seconds: int,
    ) -> Session:
        with self._lock:
            session_id = secrets.token_bytes(32).hex()
            while session_id in self._sessions:
                session_id = secrets.token_bytes(32).hex()
            session = Session(
                session_id=session_id,
                principal_id=principal_id,
                issued_at=now,
                expires_at=now + ttl_seconds,
                bound_ip=bound_ip,
                factors=factors,
            )
            self._sessions[session_id] = session
            return session

    def get(self, session_id: str) -> Optional[Session]:
        with self._lock:
            return self._sessions.get(session_id)

    def invalidate(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    def purge_expired(self, now: int) -> int:
        with self._lock:
            dead = [sid for sid, s in self._sessions.items() if now > s.expires_at]
            for sid in dead:
                del self._sessions[sid]
        return len(dead)

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


# ---------------------------------------------------------------------------
# Non-repudiation receipts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignedReceipt:
    request_digest: bytes
    session_id: str
    timestamp: int
    signature: bytes


def receipt_signing_payload(request_digest: bytes, session_id: str, timestamp: int) -> bytes:
    return request_digest + bytes.fromhex(session_id) + struct.pack(">Q", timestamp)


def issue_receipt(
    gateway_private_key: PrivateKey,
    session: Session,
    request_bytes: bytes,
    now: int,
) -> SignedReceipt:
    if now > session.expires_at:
        raise InvalidSession(f"session {session.session_id[:8]}... has expired")
    request_digest = crypto_core.digest(request_bytes)
    signature = crypto_core.sign(
        gateway_private_key,
        receipt_signing_payload(request_digest, session.session_id, now),
    )
    return SignedReceipt(request_digest, session.session_id, now, signature)


def verify_receipt(gateway_public_key: PublicKey, receipt: SignedReceipt) -> bool:
    payload = receipt_signing_payload(
        receipt.request_digest, receipt.session_id, receipt.timestamp
    )
    return crypto_core.verify_signature(gateway_public_key, payload, receipt.signature)


def encode_receipt(receipt: SignedReceipt) -> str:
    text = ";".join(
        [
            f"request_digest={receipt.request_digest.hex()}",
            f"session_id={receipt.session_id}",
            f"signature={base64.b64encode(receipt.signature).decode('ascii')}",
            f"timestamp={rfc3339(receipt.timestamp)}",
        ]
    )
    return base64.b64encode(text.encode("utf-8")).decode("ascii")


def decode_receipt(encoded: str) -> SignedReceipt:
    try:
        text = base64.b64decode(encoded, validate=True).decode("utf-8")
        fields = dict(item.split("=", 1) for item in text.split(";"))
        return SignedReceipt(
            request_digest=bytes.fromhex(fields["request_digest"]),
            session_id=fields["session_id"],
            timestamp=parse_rfc3339(fields["timestamp"]),
            signature=base64.b64decode(fields["signature"]),
        )
    except Exception as exc:
        raise EnvelopeFormatError(f"malformed receipt: {exc}") from exc


# ---------------------------------------------------------------------------
# Sign-in and authorization
# ---------------------------------------------------------------------------

class SigninFailureReason(Enum):
    INSUFFICIENT_FACTORS = "InsufficientFactors"
    FACTOR_INVALID = "FactorInvalid"
    IDENTITY_MISMATCH = "IdentityMismatch"


@dataclass(frozen=True)
class SigninFailure:
    reason: SigninFailureReason
    which: Optional[FactorKind] = None
    detail: Optional[str] = None


SigninResult = Union[Session, SigninFailure]


class AuthzReason(Enum):
    NO_SESSION = "NoSession"
    EXPIRED = "Expired"
    HIJACK_SUSPECTED = "HijackSuspected"
    NO_SUCH_RESOURCE = "NoSuchResource"
    ROLE_MISSING = "RoleMissing"
    HARDWARE_CREDENTIAL_REQUIRED = "HardwareCredentialRequired"
    SECOND_FACTOR_REQUIRED = "SecondFactorRequired"


_ACCESS_TO_AUTHZ = {
    DenyReason.NO_SUCH_RESOURCE: AuthzReason.NO_SUCH_RESOURCE,
    DenyReason.ROLE_MISSING: AuthzReason.ROLE_MISSING,
    DenyReason.HARDWARE_CREDENTIAL_REQUIRED: AuthzReason.HARDWARE_CREDENTIAL_REQUIRED,
    DenyReason.SECOND_FACTOR_REQUIRED: AuthzReason.SECOND_FACTOR_REQUIRED,
}


@dataclass(frozen=True)
class AuthzDecision:
    allowed: bool
    reason: Optional[AuthzReason] = None
    session: Optional[Session] = None


class SsoService:
    """Sign-in orchestration over the certificate, token, and password paths.

    The service composes the registry, token store, trust anchor + current
    revocation list, guard, and audit log. Callers must have passed
    ``guard.admit`` before invoking :meth:`signin`.
    """

    def __init__(
        self,
        registry: Registry,
        token_store: TokenStore,
        trust_anchor: PublicKey,
        crl_provider: Callable[[], RevocationList],
        guard: Guard,
        audit_log: audit_mod.AuditLog,
        acl_provider: Callable[[], Sequence[AclEntry]],
        admin_resources: Sequence[str] = (),
        session_ttl_seconds: int = DEFAULT_SESSION_TTL_SECONDS,
        session_store: Optional[SessionStore] = None,
    ) -> None:
        self.registry = registry
        self.token_store = token_store
        self.trust_anchor = trust_anchor
        self.crl_provider = crl_provider
        self.guard = guard
        self.audit_log = audit_log
        self.acl_provider = acl_provider
        self.admin_resources = tuple(admin_resources)
        self.session_ttl_seconds = session_ttl_seconds
        self.sessions = session_store if session_store is not None else SessionStore()

    # -- sign-in -----------------------------------------------------------

    def signin(
        self,
        principal_id: str,
        ip: str,
        now: int,
        certificate: Optional[Certificate] = None,
        token_code: Optional[str] = None,
        password: Optional[bytes] = None,
    ) -> SigninResult:
        valid_factors: set[FactorKind] = set()
        failed: list[tuple[FactorKind, str]] = []
        identity_mismatch = False

        if certificate is not None:
            result = validate_certificate(
                certificate, self.trust_anchor, self.crl_provider(), now
            )
            if not result.valid:
                failed.append((FactorKind.CERTIFICATE, result.reason.value))
            elif certificate.subject != principal_id:
                identity_mismatch = True
            else:
                valid_factors.add(FactorKind.CERTIFICATE)

        if token_code is not None:
            verdict = self.token_store.verify_token(principal_id, token_code, now)
            if verdict.accepted:
                valid_factors.add(FactorKind.TOKEN)
            else:
                failed.append((FactorKind.TOKEN, verdict.reason.value))

        if password is not None:
            try:
                principal = self.registry.get(principal_id)
                cred = principal.password_credential
            except UnknownPrincipal:
                cred = None
            if cred is not None and crypto_core.verify_salted(cred, password):
                valid_factors.add(FactorKind.PASSWORD)
            else:
                failed.append((FactorKind.PASSWORD, "BadPassword"))

        if identity_mismatch:
            failure = SigninFailure(
                SigninFailureReason.IDENTITY_MISMATCH,
                which=FactorKind.CERTIFICATE,
                detail=f"certificate subject {certificate.subject!r} != {principal_id!r}",
            )
        elif failed:
            which, detail = failed[0]
            failure = SigninFailure(SigninFailureReason.FACTOR_INVALID, which, detail)
        elif len(valid_factors) < 2:
            failure = SigninFailure(
                SigninFailureReason.INSUFFICIENT_FACTORS,
                detail=f"{len(valid_factors)} valid factor(s), need 2",
            )
        else:
            session = self.sessions.create(
                principal_id, ip, frozenset(valid_factors), now, self.session_ttl_seconds
            )
            self.guard.record_success(ip)
            self.audit_log.append(
                actor=principal_id,
                action="signin",
                outcome=audit_mod.Outcome.ok(f"ip={ip};factors={len(valid_factors)}"),
                now=now,
            )
            return session

        cooldown_until = self.guard.record_failure(ip, now)
        self.audit_log.append(
            actor=principal_id,
            action="signin",
            outcome=audit_mod.Outcome.failure(f"ip={ip};reason={failure.reason.value}"),
            now=now,
        )
        if cooldown_until is not None:
            self.audit_log.append(
                actor=ip,
                action="cooldown-triggered",
                outcome=audit_mod.Outcome.ok(f"until={rfc3339(cooldown_until)}"),
                now=now,
            )
        return failure

    # -- per-request authorization ------------------------------------------

    def authorize_request(
        self,
        session_id: str,
        ip: str,
        resource: str,
        now: int,
    ) -> AuthzDecision:
        session = self.sessions.get(session_id)
        if session is None:
            self.audit_log.append(
                actor=ip,
                action="session-denied",
                outcome=audit_mod.Outcome.failure(
                    audit_mod.access_denied_detail(resource, AuthzReason.NO_SESSION.value)
                ),
                now=now,
            )
            return AuthzDecision(False, AuthzReason.NO_SESSION)
        if now > session.expires_at:
            self.sessions.invalidate(session_id)
            self.audit_log.append(
                actor=session.principal_id,
                action="session-denied",
                outcome=audit_mod.Outcome.failure(
                    audit_mod.access_denied_detail(resource, AuthzReason.EXPIRED.value)
                ),
                now=now,
            )
            return AuthzDecision(False, AuthzReason.EXPIRED)
        if ip != session.bound_ip:
            # kill the session before reporting; it must never authorize again
            self.sessions.invalidate(session_id)
            self.audit_log.append(
                actor=ip,
                action="hijack-detected",
                outcome=audit_mod.Outcome.failure(
                    f"session={session_id[:8]};bound_ip={session.bound_ip};from={ip}"
                ),
                now=now,
            )
            return AuthzDecision(False, AuthzReason.HIJACK_SUSPECTED)

        principal = self.registry.get(session.principal_id)
        decision = check_access(
            principal,
            resource,
            self.acl_provider(),
            session.factors,
            admin_resources=self.admin_resources,
        )
        if decision.allowed:
            self.audit_log.append(
                actor=session.principal_id,
                action="access-granted",
                outcome=audit_mod.Outcome.ok(f"resource={resource}"),
                now=now,
            )
            return AuthzDecision(True, session=session)
        self.audit_log.append(
            actor=session.principal_id,
            action="access-denied",
            outcome=audit_mod.Outcome.failure(
                audit_mod.access_denied_detail(resource, decision.reason.value)
            ),
            now=now,
        )
        return AuthzDecision(False, _ACCESS_TO_AUTHZ[decision.reason], session=session)
