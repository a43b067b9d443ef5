"""Principal registry, roles, ACL decisions, and policy constants.

Access decisions are least-privilege: a resource absent from the ACL is
denied, as is any principal whose roles are disjoint from the resource's
allowed roles. Resources in the configured admin class additionally demand
a hardware credential and a session proven with both the certificate and
token factors.

Onboarding is capped at the phase-three capacity (100,000 principals).
There is no de-onboarding operation; principals are disabled by revoking
their certificate and resetting their token seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Collection, Optional, Sequence
import threading

from . import audit as audit_mod
from .crypto_core import SaltedCredential
from .errors import CapacityExceeded, DuplicateId, MissingChangeTicket, UnknownPrincipal


class FactorKind(Enum):
    CERTIFICATE = "Certificate"
    TOKEN = "Token"
    PASSWORD = "Password"


@dataclass(frozen=True)
class PolicyConstants:
    """Security policy numbers. The four minimums are floors, never lowered."""

    max_signin_failures: int = 3
    cooldown_hours: int = 24
    escalation_threshold: int = 3
    min_external_bits: int = 256
    min_internal_bits: int = 128
    min_asymmetric_bits: int = 1024
    phase_one_users: int = 100
    phase_three_capacity: int = 100_000
    session_ttl_minutes: int = 60


POLICY_FLOORS = {
    "cooldown_hours": 24,
    "min_external_bits": 256,
    "min_internal_bits": 128,
    "min_asymmetric_bits": 1024,
}


@dataclass
class Principal:
    id: str
    display_name: str = ""
    roles: set[str] = field(default_factory=set)
    certificate_serial: Optional[int] = None
    token_enrolled: bool = False
    hardware_credential: bool = False
    password_credential: Optional[SaltedCredential] = None


@dataclass(frozen=True)
class AclEntry:
    resource: str
    allowed_roles: frozenset[str]

    def __post_init__(self) -> None:
        if not self.allowed_roles:
            raise ValueError(f"ACL entry for {self.resource!r} must allow at least one role")


class DenyReason(Enum):
    NO_SUCH_RESOURCE = "NoSuchResource"
    ROLE_MISSING = "RoleMissing"
    HARDWARE_CREDENTIAL_REQUIRED = "HardwareCredentialRequired"
    SECOND_FACTOR_REQUIRED = "SecondFactorRequired"


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: Optional[DenyReason] = None

    @classmethod
    def allow(cls) -> "AccessDecision":
        return cls(True)

    @classmethod
    def deny(cls, reason: DenyReason) -> "AccessDecision":
        return cls(False, reason)


def check_access(
    principal: Principal,
    resource: str,
    acl: Sequence[AclEntry],
    session_factors: Collection[FactorKind],
    admin_resources: Collection[str] = (),
) -> AccessDecision:
    """Least-privilege decision for one principal/resource pair."""
    entry = next((e for e in acl if e.resource == resource), None)
    if entry is None:
        return AccessDecision.deny(DenyReason.NO_SUCH_RESOURCE)
    if not (principal.roles & entry.allowed_roles):
        return AccessDecision.deny(DenyReason.ROLE_MISSING)
    if resource in admin_resources:
        if not principal.hardware_credential:
            return AccessDecision.deny(DenyReason.HARDWARE_CREDENTIAL_REQUIRED)
        required = {FactorKind.CERTIFICATE, FactorKind.TOKEN}
        if not required.issubset(set(session_factors)):
            return AccessDecision.deny(DenyReason.SECOND_FACTOR_REQUIRED)
    return AccessDecision.allow()


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

class Registry:
    """Principal store with capacity enforcement and audited role grants."""

    def __init__(
        self,
        capacity: int = PolicyConstants.phase_three_capacity,
        audit_log: Optional["audit_mod.AuditLog"] = None,
    ) -> None:
        self.capacity = capacity
        self._principals: dict[str, Principal] = {}
        self._audit = audit_log
        self._lock = threading.RLock()

    def __contains__(self, principal_id: str) -> bool:
        with self._lock:
            return principal_id in self._principals

    def __len__(self) -> int:
        with self._lock:
            return len(self._principals)

    def onboard(self, principal: Principal) -> str:
        with self._lock:
            if principal.id in self._principals:
                raise DuplicateId(f"principal {principal.id!r} already onboarded")
            if len(self._principals) >= self.capacity:
                raise CapacityExceeded(f"registry is at capacity ({self.capacity})")
            self._principals[principal.id] = principal
            return principal.id

    def get(self, principal_id: str) -> Principal:
        with self._lock:
            try:
                return self._principals[principal_id]
            except KeyError:
                raise UnknownPrincipal(f"no principal {principal_id!r}") from None

    def grant_role(self, principal_id: str, role: str, change_ticket: str, now: int) -> Principal:
        """Add a role under a change ticket; emits one privilege-change audit event."""
        if not change_ticket:
            raise MissingChangeTicket("role grants require a change ticket reference")
        with self._lock:
            principal = self.get(principal_id)
            principal.roles.add(role)
        if self._audit is not None:
            self._audit.append(
                actor=principal_id,
                action="privilege-change",
                outcome=audit_mod.Outcome.ok(f"role={role};ticket={change_ticket}"),
                now=now,
            )
        return principal

    def principals(self) -> list[Principal]:
        with self._lock:
            return list(self._principals.values())

    # -- persistence -------------------------------------------------------

    def save(self, path: Path) -> None:
        lines = []
        for p in self.principals():
            cred = None
            if p.password_credential is not None:
                cred = {"salt": p.password_credential.salt.hex(),
                        "digest": p.password_credential.digest.hex()}
            lines.append(json.dumps({
                "id": p.id,
                "display_name": p.display_name,
                "roles": sorted(p.roles),
                "certificate_serial": p.certificate_serial,
                "token_enrolled": p.token_enrolled,
                "hardware_credential": p.hardware_credential,
                "password_credential": cred,
            }))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(
        cls,
        path: Path,
        capacity: int = PolicyConstants.phase_three_capacity,
        audit_log: Optional["audit_mod.AuditLog"] = None,
    ) -> "Registry":
        registry = cls(capacity=capacity, audit_log=audit_log)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            cred = raw.get("password_credential")
            registry.onboard(Principal(
                id=raw["id"],
                display_name=raw.get("display_name", ""),
                roles=set(raw.get("roles", [])),
                certificate_serial=raw.get("certificate_serial"),
                token_enrolled=bool(raw.get("token_enrolled", False)),
                hardware_credential=bool(raw.get("hardware_credential", False)),
                password_credential=(
                    SaltedCredential(bytes.fromhex(cred["salt"]), bytes.fromhex(cred["digest"]))
                    if cred else None
                ),
            ))
        return registry


# ---------------------------------------------------------------------------
# ACL file format
# ---------------------------------------------------------------------------

def load_acl(path: Path) -> list[AclEntry]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [AclEntry(item["resource"], frozenset(item["allowed_roles"])) for item in raw]


def save_acl(acl: Sequence[AclEntry], path: Path) -> None:
    payload = [
        {"resource": e.resource, "allowed_roles": sorted(e.allowed_roles)} for e in acl
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
