"""Attack-simulation harness.

Each scenario drives an attack against an assembled gateway and asserts the
documented defense, alongside a benign control arm that must keep working
(a defense that rejects everything is itself a failure). The default mode
builds a throwaway in-process gateway with a simulated clock, so runs are
deterministic and the 24-hour lockout plays out in milliseconds.

``--target`` mode drives a running gateway over HTTP. Only the
credential-free scenarios (replay, tamper, guessing) are available there;
revoked-cert, hijack, and lockout need state control or a simulated clock
and run in-process only. The guessing scenario is destructive against a
real target: it locks out the client IP.
"""

from __future__ import annotations

import json
import secrets
import tempfile
import time
from dataclasses import dataclass, field
from http.client import HTTPConnection
from pathlib import Path
from typing import Optional
from urllib.parse import urlsplit

from .clock import DAY, SimulatedClock, rfc3339, parse_rfc3339
from .errors import SimulationUnsupported, TargetUnreachable, UnknownScenario
from .gateway.config import GatewayConfig
from .gateway.service import (
    NONCE_HEADER,
    PAYLOAD_DIGEST_HEADER,
    RECEIPT_HEADER,
    SESSION_HEADER,
    TIMESTAMP_HEADER,
    GatewayState,
    Request,
    Response,
    handle_request,
    initialize_home,
)
from .guard import save_whitelist
from .identity_access import Principal
from .pki import encode_certificate, validate_certificate, InvalidReason
from .session_sso import decode_receipt, verify_receipt
from .token_auth import current_token, token_for_counter, time_counter
from . import crypto_core

SCENARIOS = ("replay", "guessing", "revoked-cert", "hijack", "tamper", "lockout")
TARGET_SCENARIOS = ("replay", "guessing", "tamper")

SIM_START = parse_rfc3339("2026-01-01T00:00:00Z")
CLIENT_IP = "10.0.0.10"
SECOND_IP = "10.0.0.11"
FOREIGN_IP = "10.66.0.99"

PASSWORD = "correct-horse-battery"


@dataclass
class ScenarioReport:
    scenario: str
    lines: list[str] = field(default_factory=list)
    passed: bool = True

    def check(self, ok: bool, description: str) -> bool:
        self.lines.append(f"  {'ok  ' if ok else 'FAIL'} {description}")
        if not ok:
            self.passed = False
        return ok

    def note(self, text: str) -> None:
        self.lines.append(f"  note {text}")

    def render(self) -> str:
        header = f"scenario: {self.scenario}"
        footer = f"result: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([header, *self.lines, footer])


# ---------------------------------------------------------------------------
# In-process world
# ---------------------------------------------------------------------------

class World:
    """Fresh gateway with one enrolled principal, driven in-process."""

    def __init__(self, home: Path) -> None:
        config = GatewayConfig(
            home=home,
            key_bits=1024,  # floor-compliant; keeps scenario setup fast
            clock_mode="simulated",
            clock_start=SIM_START,
        )
        initialize_home(config)
        save_whitelist({CLIENT_IP, SECOND_IP, FOREIGN_IP}, config.whitelist_path)
        self.state = GatewayState(config)
        self.clock: SimulatedClock = self.state.clock  # type: ignore[assignment]

        self.state.onboard_principal(Principal(
            id="alice",
            display_name="Alice",
            roles={"pilot"},
            password_credential=crypto_core.new_salted(PASSWORD.encode()),
        ))
        self.seed = self.state.provision_seed("alice")
        cert, _keypair = self.state.issue_certificate_for("alice", days=365)
        self.cert = cert
        self.cert_envelope = encode_certificate(cert)

    def now(self) -> int:
        return self.clock.now()

    def headers(self, nonce: Optional[str] = None) -> dict[str, str]:
        return {
            TIMESTAMP_HEADER: rfc3339(self.now()),
            NONCE_HEADER: nonce or secrets.token_hex(16),
        }

    def token_code(self) -> str:
        return current_token(self.seed, self.now())

    def wrong_code(self) -> str:
        """A code outside the entire accepted skew window."""
        current = time_counter(self.now(), self.seed.step_seconds)
        valid = {
            token_for_counter(self.seed, c)
            for c in range(current - 1, current + 2)
            if c >= 0
        }
        candidate = 0
        while str(candidate).zfill(self.seed.digits) in valid:
            candidate += 1
        return str(candidate).zfill(self.seed.digits)

    def signin_request(
        self,
        ip: str,
        token_code: Optional[str] = None,
        password: Optional[str] = None,
        with_cert: bool = False,
        nonce: Optional[str] = None,
        body_bytes: Optional[bytes] = None,
        extra_headers: Optional[dict[str, str]] = None,
    ) -> Request:
        if body_bytes is None:
            body: dict = {"principal_id": "alice"}
            if token_code is not None:
                body["token_code"] = token_code
            if password is not None:
                body["password"] = password
            if with_cert:
                body["certificate"] = self.cert_envelope
            body_bytes = json.dumps(body).encode()
        headers = self.headers(nonce)
        if extra_headers:
            headers.update(extra_headers)
        return Request("POST", "/signin", ip, headers, body_bytes)

    def send(self, request: Request) -> Response:
        return handle_request(self.state, request)

    def signin(self, ip: str, **kwargs) -> Response:
        return self.send(self.signin_request(ip, **kwargs))

    def get_resource(self, ip: str, session_id: str, name: str = "flight-simulator") -> Response:
        headers = self.headers()
        headers[SESSION_HEADER] = session_id
        return self.send(Request("GET", f"/resource/{name}", ip, headers))


def _err(response: Response) -> Optional[str]:
    return (response.body or {}).get("error")


# ---------------------------------------------------------------------------
# In-process scenarios
# ---------------------------------------------------------------------------

def _replay(world: World) -> ScenarioReport:
    report = ScenarioReport("replay")
    first = world.signin_request(CLIENT_IP, token_code=world.token_code(), with_cert=True)
    response = world.send(first)
    report.check(response.status == 200, "control: fresh two-factor signin accepted")

    replayed = world.send(first)
    report.check(
        replayed.status == 401 and _err(replayed) == "Replayed",
        "attack: byte-identical resubmission rejected (Replayed)",
    )

    reused_code = json.loads(first.body)["token_code"]
    reply = world.signin(CLIENT_IP, token_code=reused_code, password=PASSWORD)
    report.check(
        reply.status == 401 and _err(reply) == "FactorInvalid",
        "attack: reused one-time code rejected (FactorInvalid)",
    )

    world.clock.advance(30)
    again = world.signin(CLIENT_IP, token_code=world.token_code(), with_cert=True)
    report.check(again.status == 200, "control: later signin with fresh nonce and code accepted")
    return report


def _guessing(world: World) -> ScenarioReport:
    report = ScenarioReport("guessing")
    ok = world.signin(CLIENT_IP, token_code=world.token_code(), password=PASSWORD)
    report.check(ok.status == 200, "control: legitimate signin accepted")

    admitted = 0
    for _ in range(3):
        world.clock.advance(1)
        attempt = world.signin(SECOND_IP, token_code=world.wrong_code(), password=PASSWORD)
        if attempt.status == 401:
            admitted += 1
    report.check(admitted == 3, "attack: exactly 3 guessing attempts admitted and rejected")

    world.clock.advance(1)
    fourth = world.signin(SECOND_IP, token_code=world.wrong_code(), password=PASSWORD)
    report.check(
        fourth.status == 403 and _err(fourth) == "CoolingDown",
        "attack: 4th attempt rejected (CoolingDown)",
    )
    entries = world.state.guard.cooldown_report(world.now())
    report.check(
        any(ip == SECOND_IP for ip, _ in entries),
        "attack: attacker IP listed in cooldown report",
    )
    return report


def _revoked_cert(world: World) -> ScenarioReport:
    report = ScenarioReport("revoked-cert")
    ok = world.signin(CLIENT_IP, token_code=world.token_code(), with_cert=True)
    report.check(ok.status == 200, "control: signin with issued certificate accepted")

    world.state.revoke_serial(world.cert.serial, "compromised")
    world.clock.advance(30)
    result = validate_certificate(
        world.cert, world.state.ca.public_key, world.state.crl, world.now()
    )
    report.check(
        not result.valid and result.reason is InvalidReason.REVOKED,
        "attack: certificate now validates Invalid (Revoked)",
    )
    denied = world.signin(CLIENT_IP, token_code=world.token_code(), with_cert=True)
    report.check(
        denied.status == 401 and _err(denied) == "FactorInvalid",
        "attack: post-revocation signin rejected (FactorInvalid)",
    )
    return report


def _hijack(world: World) -> ScenarioReport:
    report = ScenarioReport("hijack")
    signin = world.signin(CLIENT_IP, token_code=world.token_code(), with_cert=True)
    report.check(signin.status == 200, "control: signin accepted")
    session_id = (signin.body or {}).get("session_id", "")

    served = world.get_resource(CLIENT_IP, session_id)
    report.check(served.status == 200, "control: bound-IP resource request served")
    receipt_ok = False
    if RECEIPT_HEADER in served.headers:
        receipt = decode_receipt(served.headers[RECEIPT_HEADER])
        receipt_ok = verify_receipt(world.state.gateway_keypair.public_key, receipt)
    report.check(receipt_ok, "control: service receipt verifies under gateway key")

    stolen = world.get_resource(FOREIGN_IP, session_id)
    report.check(
        stolen.status == 403 and _err(stolen) == "HijackSuspected",
        "attack: foreign-IP request rejected (HijackSuspected)",
    )
    afterwards = world.get_resource(CLIENT_IP, session_id)
    report.check(
        afterwards.status == 403 and _err(afterwards) == "NoSession",
        "attack: hijacked session dead afterwards, even from the bound IP",
    )
    return report


def _tamper(world: World) -> ScenarioReport:
    report = ScenarioReport("tamper")
    body = json.dumps({
        "principal_id": "alice",
        "password": PASSWORD,
        "token_code": world.token_code(),
    }).encode()
    digest = crypto_core.digest(body).hex()

    control = world.send(world.signin_request(
        CLIENT_IP, body_bytes=body, extra_headers={PAYLOAD_DIGEST_HEADER: digest},
    ))
    report.check(control.status == 200, "control: intact payload with matching digest served")

    tampered = body.replace(b"correct-horse", b"corrupt-horse")
    attack = world.send(world.signin_request(
        CLIENT_IP, body_bytes=tampered, extra_headers={PAYLOAD_DIGEST_HEADER: digest},
    ))
    report.check(
        attack.status == 401 and _err(attack) == "TamperDetected",
        "attack: modified payload rejected (TamperDetected)",
    )
    return report


def _lockout(world: World) -> ScenarioReport:
    report = ScenarioReport("lockout")
    ok = world.signin(CLIENT_IP, token_code=world.token_code(), password=PASSWORD)
    report.check(ok.status == 200, "control: legitimate signin accepted")

    trigger_time = 0
    for _ in range(3):
        world.clock.advance(1)
        trigger_time = world.now()
        world.signin(SECOND_IP, token_code=world.wrong_code(), password=PASSWORD)
    entries = dict(world.state.guard.cooldown_report(world.now()))
    until = entries.get(SECOND_IP, 0)
    report.check(
        until - trigger_time == DAY,
        "attack: three failures set a cooldown of exactly 24h",
    )

    world.clock.advance(1)
    locked = world.signin(SECOND_IP, token_code=world.wrong_code(), password=PASSWORD)
    report.check(
        locked.status == 403 and _err(locked) == "CoolingDown",
        "attack: 4th attempt rejected (CoolingDown)",
    )

    world.clock.advance(30)
    unaffected = world.signin(CLIENT_IP, token_code=world.token_code(), password=PASSWORD)
    report.check(unaffected.status == 200, "control: other IPs unaffected during cooldown")

    world.clock.set(until - 1)
    still = world.signin(SECOND_IP, token_code=world.token_code(), password=PASSWORD)
    report.check(
        still.status == 403 and _err(still) == "CoolingDown",
        "attack: one second before the deadline still locked",
    )

    world.clock.set(until + 1)
    back = world.signin(SECOND_IP, token_code=world.token_code(), password=PASSWORD)
    report.check(back.status == 200, "attack: one second past 24h the IP is admitted again")
    return report


_IN_PROCESS = {
    "replay": _replay,
    "guessing": _guessing,
    "revoked-cert": _revoked_cert,
    "hijack": _hijack,
    "tamper": _tamper,
    "lockout": _lockout,
}


def run_in_process(scenario: str) -> ScenarioReport:
    if scenario not in _IN_PROCESS:
        raise UnknownScenario(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    with tempfile.TemporaryDirectory(prefix="prometheus-sim-") as tmp:
        world = World(Path(tmp))
        return _IN_PROCESS[scenario](world)


# ---------------------------------------------------------------------------
# Target (HTTP) mode
# ---------------------------------------------------------------------------

def _http_send(base_url: str, request: Request) -> Response:
    parts = urlsplit(base_url)
    connection = HTTPConnection(parts.hostname or "127.0.0.1", parts.port or 80, timeout=10)
    headers = dict(request.headers)
    headers.setdefault("Content-Length", str(len(request.body)))
    try:
        connection.request(request.method, request.path, body=request.body, headers=headers)
        raw = connection.getresponse()
        data = raw.read()
    except OSError as exc:
        raise TargetUnreachable(f"cannot reach {base_url}: {exc}") from exc
    finally:
        connection.close()
    body = json.loads(data) if data else None
    return Response(raw.status, body, {key: value for key, value in raw.getheaders()})


def _wire_headers() -> dict[str, str]:
    return {
        TIMESTAMP_HEADER: rfc3339(int(time.time())),
        NONCE_HEADER: secrets.token_hex(16),
    }


def _wire_signin(base_url: str, body: bytes, headers: dict[str, str]) -> Response:
    return _http_send(base_url, Request("POST", "/signin", "", headers, body))


def _target_replay(base_url: str) -> ScenarioReport:
    report = ScenarioReport("replay")
    body = json.dumps({"principal_id": "probe"}).encode()
    headers = _wire_headers()
    first = _wire_signin(base_url, body, headers)
    report.check(
        first.status != 403 and _err(first) != "Replayed",
        "control: first submission processed",
    )
    replayed = _wire_signin(base_url, body, headers)
    report.check(_err(replayed) == "Replayed", "attack: identical resubmission rejected (Replayed)")
    fresh = _wire_signin(base_url, body, _wire_headers())
    report.check(_err(fresh) != "Replayed", "control: fresh nonce not mistaken for a replay")
    return report


def _target_tamper(base_url: str) -> ScenarioReport:
    report = ScenarioReport("tamper")
    body = json.dumps({"principal_id": "probe", "password": "benign-payload"}).encode()
    digest = crypto_core.digest(body).hex()
    headers = _wire_headers()
    headers[PAYLOAD_DIGEST_HEADER] = digest
    control = _wire_signin(base_url, body, headers)
    report.check(_err(control) != "TamperDetected", "control: intact payload not flagged")
    tampered_headers = _wire_headers()
    tampered_headers[PAYLOAD_DIGEST_HEADER] = digest
    attack = _wire_signin(base_url, body.replace(b"benign", b"mutant"), tampered_headers)
    report.check(
        _err(attack) == "TamperDetected",
        "attack: modified payload rejected (TamperDetected)",
    )
    return report


def _target_guessing(base_url: str) -> ScenarioReport:
    report = ScenarioReport("guessing")
    report.note("destructive: this locks out the client IP on the target for 24 hours")
    body = json.dumps({"principal_id": "probe", "password": "wrong"}).encode()
    first = _wire_signin(base_url, body, _wire_headers())
    report.check(_err(first) != "CoolingDown", "control: first attempt admitted")
    for _ in range(2):
        _wire_signin(base_url, body, _wire_headers())
    fourth = _wire_signin(base_url, body, _wire_headers())
    report.check(
        fourth.status == 403 and _err(fourth) == "CoolingDown",
        "attack: 4th attempt rejected (CoolingDown)",
    )
    return report


_TARGET = {
    "replay": _target_replay,
    "tamper": _target_tamper,
    "guessing": _target_guessing,
}


def run_against_target(scenario: str, base_url: str) -> ScenarioReport:
    if scenario not in _IN_PROCESS:
        raise UnknownScenario(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if scenario not in _TARGET:
        raise SimulationUnsupported(
            f"scenario {scenario!r} needs state control or a simulated clock; "
            "run it without --target (in-process harness)"
        )
    return _TARGET[scenario](base_url)


def run_scenario(scenario: str, target: Optional[str] = None) -> ScenarioReport:
    if target is not None:
        return run_against_target(scenario, target)
    return run_in_process(scenario)
