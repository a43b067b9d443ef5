"""Gateway state assembly and the fixed request pipeline.

Pipeline order is a contract: guard admission, then server-side input
validation, then payload integrity and freshness, then authentication or
authorization, then the resource fetch and receipt. A request failing
several gates is always reported with the earliest one. Failure bodies
carry only a reason name and the administrator-contact notice; resource
bytes appear only in responses whose pipeline reached Allow.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Optional

from .. import audit as audit_mod
from .. import crypto_core, pki
from ..clock import HOUR, DAY, Clock, parse_rfc3339, rfc3339
from ..errors import (
    AlreadyInitialized,
    AlreadyProvisioned,
    CapacityExceeded,
    DuplicateId,
    EnvelopeFormatError,
    MissingChangeTicket,
    NoCertificateAuthority,
    PrometheusError,
    UnknownPrincipal,
    UnknownSerial,
)
from ..guard import Guard, RejectReason, load_whitelist
from ..identity_access import Principal, Registry, load_acl, save_acl, AclEntry
from ..pki import Certificate, CertificateAuthority
from ..session_sso import (
    CONTACT_ADMIN_NOTICE,
    Freshness,
    FreshnessWindow,
    SigninFailure,
    SsoService,
    encode_receipt,
    issue_receipt,
    verify_payload_integrity,
)
from ..token_auth import TokenSeed, TokenStore
from .config import GatewayConfig, make_clock
from .validation import FIELD_SPECS, InputReject, validate_input

SESSION_HEADER = "X-Prometheus-Session"
TIMESTAMP_HEADER = "X-Request-Timestamp"
NONCE_HEADER = "X-Request-Nonce"
RECEIPT_HEADER = "X-Prometheus-Receipt"
PAYLOAD_DIGEST_HEADER = "X-Payload-Sha256"
CLIENT_IP_HEADER = "X-Client-IP"

DEFAULT_ACL = [
    {"resource": "flight-simulator", "allowed_roles": ["pilot", "admin"]},
    {"resource": "back-office", "allowed_roles": ["backoffice", "admin"]},
    {"resource": "admin-console", "allowed_roles": ["admin"]},
]


@dataclass
class Request:
    method: str
    path: str
    ip: str
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str) -> Optional[str]:
        lowered = name.lower()
        for key, value in self.headers.items():
            if key.lower() == lowered:
                return value
        return None


@dataclass
class Response:
    status: int
    body: Optional[dict] = None
    headers: dict[str, str] = field(default_factory=dict)


def _error(status: int, error: str, detail: Optional[str] = None,
           fieldname: Optional[str] = None) -> Response:
    body: dict[str, Any] = {"error": error, "notice": CONTACT_ADMIN_NOTICE}
    if detail is not None:
        body["detail"] = detail
    if fieldname is not None:
        body["field"] = fieldname
    return Response(status, body)


# ---------------------------------------------------------------------------
# Gateway state
# ---------------------------------------------------------------------------

class GatewayState:
    """All live subsystem state behind one facade.

    Construction loads every state file named in the config; a missing CA
    state file raises :class:`NoCertificateAuthority` unless ``require_ca``
    is off (lightweight CLI commands do not need the trust chain).
    """

    def __init__(self, config: GatewayConfig, clock: Optional[Clock] = None,
                 require_ca: bool = True) -> None:
        self.config = config
        self.clock = clock if clock is not None else make_clock(config)
        config.home.mkdir(parents=True, exist_ok=True)

        self.audit_log = audit_mod.AuditLog.open(config.audit_log_path)
        if config.principals_path.exists():
            self.registry = Registry.load(
                config.principals_path,
                capacity=config.policy.phase_three_capacity,
                audit_log=self.audit_log,
            )
        else:
            self.registry = Registry(
                capacity=config.policy.phase_three_capacity, audit_log=self.audit_log
            )
        self.acl: list[AclEntry] = (
            load_acl(config.acl_path) if config.acl_path.exists() else []
        )
        whitelist = (
            load_whitelist(config.whitelist_path) if config.whitelist_path.exists() else set()
        )
        self.guard = Guard(
            whitelist,
            max_failures=config.policy.max_signin_failures,
            cooldown_seconds=config.policy.cooldown_hours * HOUR,
            max_concurrent_per_ip=config.max_concurrent_per_ip,
        )
        if config.guard_state_path.exists():
            raw = json.loads(config.guard_state_path.read_text(encoding="utf-8"))
            self.guard.cooldowns.update(
                {ip: parse_rfc3339(until) for ip, until in raw.get("cooldowns", {}).items()}
            )
        if config.token_seeds_path.exists():
            lines = config.token_seeds_path.read_text(encoding="utf-8").splitlines()
            self.token_store = TokenStore.from_lines(lines)
        else:
            self.token_store = TokenStore()
        self.resources = {name: text.encode("utf-8") for name, text in config.resources.items()}
        self.freshness = FreshnessWindow(config.freshness_max_age_seconds)

        self.gateway_keypair = self._load_or_create_gateway_key()
        self.ca: Optional[CertificateAuthority] = None
        self.sso: Optional[SsoService] = None
        self.crl: Optional[pki.RevocationList] = None
        if config.ca_state_path.exists():
            state = json.loads(config.ca_state_path.read_text(encoding="utf-8"))
            self.ca = CertificateAuthority.from_state(state)
            self.crl = self.ca.current_crl(self.clock.now())
            self.sso = SsoService(
                registry=self.registry,
                token_store=self.token_store,
                trust_anchor=self.ca.public_key,
                crl_provider=lambda: self.crl,
                guard=self.guard,
                audit_log=self.audit_log,
                acl_provider=lambda: self.acl,
                admin_resources=config.admin_resources,
                session_ttl_seconds=config.policy.session_ttl_minutes * 60,
            )
        elif require_ca:
            raise NoCertificateAuthority(
                f"no certificate authority at {config.ca_state_path}; run 'ca init' first"
            )
        self._guard_snapshot = self.guard.cooldowns_snapshot()
        self._persist_lock = threading.RLock()

    # -- key material --------------------------------------------------------

    def _load_or_create_gateway_key(self) -> crypto_core.KeyPair:
        path = self.config.gateway_key_path
        if path.exists():
            return crypto_core.keypair_from_obj(json.loads(path.read_text(encoding="utf-8")))
        keypair = crypto_core.generate_keypair(self.config.key_bits)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(crypto_core.keypair_to_obj(keypair), indent=2) + "\n", encoding="utf-8"
        )
        return keypair

    # -- orchestration helpers ------------------------------------------------

    def require_ca(self) -> CertificateAuthority:
        if self.ca is None:
            raise NoCertificateAuthority("certificate authority has not been initialized")
        return self.ca

    def onboard_principal(self, principal: Principal) -> str:
        self.registry.onboard(principal)
        self.audit_log.append(
            actor=principal.id,
            action="onboard",
            outcome=audit_mod.Outcome.ok(f"roles={','.join(sorted(principal.roles))}"),
            now=self.clock.now(),
        )
        self.persist_registry()
        return principal.id

    def provision_seed(self, principal_id: str) -> TokenSeed:
        seed = self.token_store.provision_seed(principal_id, self.registry)
        principal = self.registry.get(principal_id)
        principal.token_enrolled = True
        self.audit_log.append(
            actor=principal_id,
            action="seed-provisioned",
            outcome=audit_mod.Outcome.ok(),
            now=self.clock.now(),
        )
        self.persist_registry()
        self.persist_seeds()
        return seed

    def issue_certificate_for(
        self, subject: str, days: int, bits: Optional[int] = None
    ) -> tuple[Certificate, crypto_core.KeyPair]:
        """Issue a certificate plus the subject's fresh keypair (enrollment)."""
        ca = self.require_ca()
        now = self.clock.now()
        subject_keypair = crypto_core.generate_keypair(bits or self.config.key_bits)
        cert = ca.issue_certificate(
            subject, subject_keypair.public_key, now, now + days * DAY
        )
        if subject in self.registry:
            self.registry.get(subject).certificate_serial = cert.serial
            self.persist_registry()
        self.crl = ca.current_crl(now)
        self.audit_log.append(
            actor=subject,
            action="certificate-issued",
            outcome=audit_mod.Outcome.ok(f"serial={cert.serial}"),
            now=now,
        )
        self.persist_ca()
        return cert, subject_keypair

    def revoke_serial(self, serial: int, reason: str) -> None:
        ca = self.require_ca()
        now = self.clock.now()
        self.crl = ca.revoke(serial, reason, now)
        self.audit_log.append(
            actor=f"serial:{serial}",
            action="revocation",
            outcome=audit_mod.Outcome.ok(f"serial={serial};reason={reason}"),
            now=now,
        )
        self.persist_ca()

    def grant_role(self, principal_id: str, role: str, ticket: str) -> None:
        self.registry.grant_role(principal_id, role, ticket, self.clock.now())
        self.persist_registry()

    # -- persistence -----------------------------------------------------------

    def persist_registry(self) -> None:
        with self._persist_lock:
            self.registry.save(self.config.principals_path)

    def persist_seeds(self) -> None:
        with self._persist_lock:
            lines = self.token_store.dump_lines()
            self.config.token_seeds_path.write_text(
                "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
            )

    def persist_ca(self) -> None:
        if self.ca is None:
            return
        with self._persist_lock:
            self.config.ca_state_path.write_text(
                json.dumps(self.ca.to_state(), indent=2) + "\n", encoding="utf-8"
            )

    def persist_guard_if_changed(self) -> None:
        snapshot = self.guard.cooldowns_snapshot()
        with self._persist_lock:
            if snapshot == self._guard_snapshot:
                return
            self._guard_snapshot = snapshot
            self.config.guard_state_path.write_text(
                json.dumps(
                    {"cooldowns": {ip: rfc3339(until) for ip, until in snapshot.items()}},
                    indent=2,
                ) + "\n",
                encoding="utf-8",
            )

    def persist(self) -> None:
        self.persist_registry()
        self.persist_seeds()
        self.persist_ca()
        self.persist_guard_if_changed()


def initialize_home(config: GatewayConfig) -> CertificateAuthority:
    """Create the state directory, CA, gateway key, and starter files."""
    config.home.mkdir(parents=True, exist_ok=True)
    if config.ca_state_path.exists():
        raise AlreadyInitialized(
            f"certificate authority already exists at {config.ca_state_path}"
        )
    ca = CertificateAuthority(config.ca_id, crypto_core.generate_keypair(config.key_bits))
    config.ca_state_path.write_text(
        json.dumps(ca.to_state(), indent=2) + "\n", encoding="utf-8"
    )
    if not config.acl_path.exists():
        save_acl(
            [AclEntry(e["resource"], frozenset(e["allowed_roles"])) for e in DEFAULT_ACL],
            config.acl_path,
        )
    if not config.whitelist_path.exists():
        config.whitelist_path.write_text("# one IP per line\n127.0.0.1\n", encoding="utf-8")
    for path in (config.principals_path, config.token_seeds_path, config.audit_log_path):
        if not path.exists():
            path.write_text("", encoding="utf-8")
    # creating the state also provisions the gateway signing key
    GatewayState(config, require_ca=True)
    return ca


# ---------------------------------------------------------------------------
# Request pipeline
# ---------------------------------------------------------------------------

_ERROR_STATUS: dict[type, int] = {
    DuplicateId: 409,
    AlreadyProvisioned: 409,
    CapacityExceeded: 503,
    UnknownSerial: 400,
    UnknownPrincipal: 400,
    MissingChangeTicket: 400,
}


def _match_route(method: str, path: str) -> Optional[tuple[str, Optional[str]]]:
    if method == "POST" and path == "/signin":
        return ("signin", None)
    if method == "GET" and path.startswith("/resource/"):
        name = path[len("/resource/"):]
        if name and "/" not in name:
            return ("resource", name)
        return None
    if method == "POST" and path == "/admin/onboard":
        return ("admin-onboard", None)
    if method == "POST" and path == "/admin/revoke":
        return ("admin-revoke", None)
    if method == "POST" and path == "/admin/grant-role":
        return ("admin-grant-role", None)
    if method == "GET" and path == "/admin/cooldowns":
        return ("admin-cooldowns", None)
    if method == "GET" and path == "/admin/audit/verify":
        return ("admin-audit-verify", None)
    return None


_ROUTE_FIELDS: dict[str, tuple[tuple[str, str, bool], ...]] = {
    # route -> ((json field, spec name, required), ...)
    "signin": (
        ("principal_id", "principal_id", True),
        ("token_code", "token_code", False),
        ("password", "password", False),
    ),
    "admin-onboard": (
        ("id", "principal_id", True),
        ("display_name", "display_name", False),
        ("password", "password", False),
    ),
    "admin-revoke": (("reason", "reason", False),),
    "admin-grant-role": (
        ("id", "principal_id", True),
        ("role", "role", True),
        ("ticket", "ticket", True),
    ),
}

_SESSION_ROUTES = {
    "resource",
    "admin-onboard",
    "admin-revoke",
    "admin-grant-role",
    "admin-cooldowns",
    "admin-audit-verify",
}


def _validate_request(
    route: str,
    param: Optional[str],
    request: Request,
    body: Optional[dict],
) -> tuple[Optional[Response], dict]:
    """Input-validation gate; returns (error response, validated values)."""
    values: dict[str, Any] = {}

    timestamp_raw = request.header(TIMESTAMP_HEADER)
    nonce = request.header(NONCE_HEADER)
    if timestamp_raw is None or nonce is None:
        return _error(400, "Rejected", "MissingFreshnessHeaders"), values
    try:
        values["timestamp"] = parse_rfc3339(timestamp_raw)
    except ValueError:
        return _error(400, "Rejected", InputReject.PATTERN.value, "timestamp"), values
    check = validate_input("nonce", nonce, FIELD_SPECS["nonce"])
    if not check.ok:
        return _error(400, "Rejected", check.reason.value, "nonce"), values
    values["nonce"] = nonce

    if route == "resource":
        check = validate_input("resource", param or "", FIELD_SPECS["resource"])
        if not check.ok:
            return _error(400, "Rejected", check.reason.value, "resource"), values
        values["resource"] = param

    if route in _SESSION_ROUTES:
        session_id = request.header(SESSION_HEADER) or ""
        check = validate_input("session_id", session_id, FIELD_SPECS["session_id"])
        if not check.ok:
            return _error(400, "Rejected", check.reason.value, "session_id"), values
        values["session_id"] = session_id

    for json_field, spec_name, required in _ROUTE_FIELDS.get(route, ()):
        raw = (body or {}).get(json_field)
        if raw is None:
            if required:
                return _error(400, "Rejected", "MissingField", json_field), values
            continue
        if not isinstance(raw, str):
            return _error(400, "Rejected", InputReject.PATTERN.value, json_field), values
        check = validate_input(json_field, raw, FIELD_SPECS[spec_name])
        if not check.ok:
            return _error(400, "Rejected", check.reason.value, json_field), values
        values[json_field] = raw

    if route == "signin":
        envelope = (body or {}).get("certificate")
        if envelope is not None:
            if not isinstance(envelope, str):
                return _error(400, "Rejected", InputReject.PATTERN.value, "certificate"), values
            try:
                values["certificate"] = pki.decode_certificate(envelope)
            except EnvelopeFormatError:
                return _error(400, "Rejected", "Envelope", "certificate"), values

    if route == "admin-onboard":
        roles = (body or {}).get("roles", [])
        if not isinstance(roles, list):
            return _error(400, "Rejected", InputReject.PATTERN.value, "roles"), values
        for role in roles:
            if not isinstance(role, str):
                return _error(400, "Rejected", InputReject.PATTERN.value, "roles"), values
            check = validate_input("role", role, FIELD_SPECS["role"])
            if not check.ok:
                return _error(400, "Rejected", check.reason.value, "roles"), values
        values["roles"] = roles
        values["hardware_credential"] = bool((body or {}).get("hardware_credential", False))

    if route == "admin-revoke":
        serial = (body or {}).get("serial")
        if not isinstance(serial, int):
            return _error(400, "Rejected", InputReject.PATTERN.value, "serial"), values
        values["serial"] = serial

    return None, values


def handle_request(state: GatewayState, request: Request) -> Response:
    """Run one request through the fixed pipeline."""
    now = state.clock.now()
    ip = request.ip
    if state.config.trust_client_ip_header:
        claimed = request.header(CLIENT_IP_HEADER)
        if claimed:
            ip = claimed

    verdict = state.guard.admit(ip, now)
    if verdict.cooldown_recorded:
        state.audit_log.append(
            actor=ip,
            action="cooldown-triggered",
            outcome=audit_mod.Outcome.ok(f"until={rfc3339(verdict.cooldown_until)}"),
            now=now,
        )
    if not verdict.admitted:
        state.audit_log.append(
            actor=ip,
            action="request-rejected",
            outcome=audit_mod.Outcome.failure(verdict.reason.value),
            now=now,
        )
        state.persist_guard_if_changed()
        if verdict.reason is RejectReason.NOT_WHITELISTED:
            return Response(403, None)  # immediate kick, nothing parsed or leaked
        return _error(403, verdict.reason.value)

    try:
        response = _dispatch(state, request, ip, now)
    except PrometheusError as exc:
        reason = type(exc).__name__
        state.audit_log.append(
            actor=ip,
            action="request-rejected",
            outcome=audit_mod.Outcome.failure(reason),
            now=now,
        )
        response = _error(_ERROR_STATUS.get(type(exc), 400), reason)
    except Exception:
        state.audit_log.append(
            actor=ip,
            action="request-rejected",
            outcome=audit_mod.Outcome.failure("InternalError"),
            now=now,
        )
        response = _error(500, "InternalError")
    finally:
        state.guard.release(ip)
        state.persist_guard_if_changed()
    return response


def _dispatch(state: GatewayState, request: Request, ip: str, now: int) -> Response:
    def rejected(response: Response) -> Response:
        detail = (response.body or {}).get("error", "Rejected")
        extra = (response.body or {}).get("detail")
        state.audit_log.append(
            actor=ip,
            action="request-rejected",
            outcome=audit_mod.Outcome.failure(f"{detail}:{extra}" if extra else detail),
            now=now,
        )
        return response

    matched = _match_route(request.method, request.path)
    if matched is None:
        return rejected(_error(400, "Rejected", "UnknownEndpoint"))
    route, param = matched

    body: Optional[dict] = None
    if request.method == "POST":
        try:
            body = json.loads(request.body.decode("utf-8")) if request.body else {}
        except (ValueError, UnicodeDecodeError):
            return rejected(_error(400, "Rejected", "Body"))
        if not isinstance(body, dict):
            return rejected(_error(400, "Rejected", "Body"))

    failure, values = _validate_request(route, param, request, body)
    if failure is not None:
        return rejected(failure)

    claimed_digest = request.header(PAYLOAD_DIGEST_HEADER)
    if claimed_digest is not None:
        try:
            digest_bytes = bytes.fromhex(claimed_digest)
        except ValueError:
            return rejected(_error(400, "Rejected", InputReject.PATTERN.value, "payload_digest"))
        if not verify_payload_integrity(request.body, digest_bytes):
            return rejected(_error(401, "TamperDetected"))

    freshness = state.freshness.check(values["timestamp"], values["nonce"], now)
    if freshness is not Freshness.OK:
        return rejected(_error(401, freshness.value))

    if route == "signin":
        return _handle_signin(state, request, ip, now, values)
    if route == "resource":
        return _handle_resource(state, request, ip, now, values)
    return _handle_admin(state, request, ip, now, route, values)


def _handle_signin(state: GatewayState, request: Request, ip: str, now: int,
                   values: dict) -> Response:
    password = values.get("password")
    result = state.sso.signin(
        principal_id=values["principal_id"],
        ip=ip,
        now=now,
        certificate=values.get("certificate"),
        token_code=values.get("token_code"),
        password=password.encode("utf-8") if password is not None else None,
    )
    if isinstance(result, SigninFailure):
        return _error(401, result.reason.value)
    return Response(200, {
        "session_id": result.session_id,
        "expires_at": rfc3339(result.expires_at),
        "factors": sorted(f.value for f in result.factors),
    })


def _handle_resource(state: GatewayState, request: Request, ip: str, now: int,
                     values: dict) -> Response:
    name = values["resource"]
    decision = state.sso.authorize_request(values["session_id"], ip, name, now)
    if not decision.allowed:
        return _error(403, decision.reason.value)
    payload = state.resources.get(name, b"")
    request_bytes = f"{request.method} {request.path}\n".encode("utf-8") + request.body
    receipt = issue_receipt(
        state.gateway_keypair.private_key, decision.session, request_bytes, now
    )
    return Response(
        200,
        {"resource": name, "payload": base64.b64encode(payload).decode("ascii")},
        headers={RECEIPT_HEADER: encode_receipt(receipt)},
    )


def _handle_admin(state: GatewayState, request: Request, ip: str, now: int,
                  route: str, values: dict) -> Response:
    decision = state.sso.authorize_request(
        values["session_id"], ip, state.config.admin_api_resource, now
    )
    if not decision.allowed:
        return _error(403, decision.reason.value)

    if route == "admin-onboard":
        password = values.get("password")
        principal = Principal(
            id=values["id"],
            display_name=values.get("display_name", ""),
            roles=set(values.get("roles", [])),
            hardware_credential=values.get("hardware_credential", False),
            password_credential=(
                crypto_core.new_salted(password.encode("utf-8")) if password else None
            ),
        )
        state.onboard_principal(principal)
        return Response(200, {"id": principal.id})

    if route == "admin-revoke":
        state.revoke_serial(values["serial"], values.get("reason", ""))
        return Response(200, {"revoked": values["serial"]})

    if route == "admin-grant-role":
        state.grant_role(values["id"], values["role"], values["ticket"])
        return Response(200, {"id": values["id"], "role": values["role"]})

    if route == "admin-cooldowns":
        report = state.guard.cooldown_report(now)
        return Response(200, {
            "cooldowns": [{"ip": entry[0], "until": rfc3339(entry[1])} for entry in report]
        })

    if route == "admin-audit-verify":
        status = state.audit_log.verify_chain()
        body: dict[str, Any] = {"fips_140_2_attested": state.config.fips_140_2_attested}
        if status.ok:
            body.update({"ok": True, "records": status.length})
        else:
            body.update({"ok": False, "corrupt_at": status.corrupt_seq})
        return Response(200, body)

    return _error(400, "Rejected", "UnknownEndpoint")
