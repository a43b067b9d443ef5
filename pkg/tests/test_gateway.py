from __future__ import annotations

import base64
import json
import secrets

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prometheus_gateway import crypto_core as cc
from prometheus_gateway.clock import rfc3339
from prometheus_gateway.errors import MissingFile, ParseError, PolicyFloorViolation
from prometheus_gateway.gateway import validation as v
from prometheus_gateway.gateway.config import load_config
from prometheus_gateway.gateway.service import (
    CLIENT_IP_HEADER,
    NONCE_HEADER,
    PAYLOAD_DIGEST_HEADER,
    RECEIPT_HEADER,
    SESSION_HEADER,
    TIMESTAMP_HEADER,
    GatewayState,
    Request,
    handle_request,
)
from prometheus_gateway.harness import CLIENT_IP, FOREIGN_IP, SECOND_IP, World
from prometheus_gateway.identity_access import Principal
from prometheus_gateway.pki import encode_certificate
from prometheus_gateway.session_sso import decode_receipt, verify_receipt
from prometheus_gateway.token_auth import current_token


# ---------------------------------------------------------------------------
# input validation
# ---------------------------------------------------------------------------

IDENT = v.FIELD_SPECS["principal_id"]


@pytest.mark.parametrize("value", ["alice", "a.b-c_d@site", "user123"])
def test_validate_identifier_ok(value):
    assert v.validate_input("principal_id", value, IDENT).ok


@pytest.mark.parametrize("value,reason", [
    ("x' OR '1'='1", v.InputReject.INJECTION),
    ("drop;table", v.InputReject.INJECTION),
    ("comment--here", v.InputReject.INJECTION),
    ("<script>", v.InputReject.MARKUP),
    ("tab\tchar", v.InputReject.CONTROL_CHARACTERS),
    ("nul\x00byte", v.InputReject.CONTROL_CHARACTERS),
    ("x" * 65, v.InputReject.TOO_LONG),
    ("spaces here", v.InputReject.PATTERN),
])
def test_validate_identifier_rejections(value, reason):
    check = v.validate_input("principal_id", value, IDENT)
    assert not check.ok and check.reason is reason


def test_single_dash_is_fine():
    assert v.validate_input("ticket", "CM-17", v.FIELD_SPECS["ticket"]).ok


def test_freeform_field_skips_pattern_but_not_metachars():
    spec = v.FIELD_SPECS["password"]
    assert v.validate_input("password", "correct horse battery", spec).ok
    assert not v.validate_input("password", "it's a trap", spec).ok


SAFE_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,_@"


@settings(max_examples=60, deadline=None)
@given(
    st.text(alphabet=SAFE_ALPHABET, max_size=100),
    st.sampled_from(sorted("';<>\x00\x1b")),
    st.data(),
)
def test_any_forbidden_character_anywhere_rejects(clean, bad_char, data):
    spec = v.InputSpec(200)
    assert v.validate_input("field", clean, spec).ok
    position = data.draw(st.integers(min_value=0, max_value=len(clean)))
    assert not v.validate_input("field", clean[:position] + bad_char + clean[position:], spec).ok


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({}))
    config = load_config(path)
    assert config.token_step_seconds == 30
    assert config.token_digits == 6
    assert config.policy.session_ttl_minutes == 60
    assert config.home == tmp_path
    assert config.ca_state_path == tmp_path / "ca_state.json"


def test_cooldown_floor_enforced(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"policy": {"cooldown_hours": 12}}))
    with pytest.raises(PolicyFloorViolation):
        load_config(path)


@pytest.mark.parametrize("policy", [
    {"min_external_bits": 128},
    {"min_internal_bits": 64},
    {"min_asymmetric_bits": 512},
])
def test_encryption_floors_enforced(tmp_path, policy):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"policy": policy}))
    with pytest.raises(PolicyFloorViolation):
        load_config(path)


def test_key_bits_floor(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"key_bits": 512}))
    with pytest.raises(PolicyFloorViolation):
        load_config(path)


def test_raising_cooldown_allowed(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"policy": {"cooldown_hours": 48}}))
    assert load_config(path).policy.cooldown_hours == 48


def test_missing_config(tmp_path):
    with pytest.raises(MissingFile):
        load_config(tmp_path / "absent.json")


def test_unparsable_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{nope")
    with pytest.raises(ParseError):
        load_config(path)


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"listen_adress": "typo"}))
    with pytest.raises(ParseError):
        load_config(path)


def test_simulated_clock_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(
        {"clock_mode": "simulated", "clock_start": "2026-01-01T00:00:00Z"}
    ))
    config = load_config(path)
    from prometheus_gateway.gateway.config import make_clock
    assert make_clock(config).now() == 1767225600


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def signin_body(world: World, **extra) -> bytes:
    body = {"principal_id": "alice", "token_code": world.token_code(),
            "certificate": world.cert_envelope}
    body.update(extra)
    return json.dumps(body).encode()


def test_happy_path_end_to_end(world):
    signin = world.send(Request("POST", "/signin", CLIENT_IP, world.headers(),
                                signin_body(world)))
    assert signin.status == 200
    session_id = signin.body["session_id"]
    assert len(session_id) == 64
    assert signin.body["factors"] == ["Certificate", "Token"]

    headers = world.headers()
    headers[SESSION_HEADER] = session_id
    served = world.send(Request("GET", "/resource/flight-simulator", CLIENT_IP, headers))
    assert served.status == 200
    payload = base64.b64decode(served.body["payload"])
    assert payload == world.state.resources["flight-simulator"]
    receipt = decode_receipt(served.headers[RECEIPT_HEADER])
    assert verify_receipt(world.state.gateway_keypair.public_key, receipt)


def test_non_whitelisted_immediate_kick(world):
    response = world.send(Request("POST", "/signin", "203.0.113.1", world.headers(),
                                  signin_body(world)))
    assert response.status == 403
    assert response.body is None  # nothing parsed, nothing leaked
    # and the probe earned a 24h cooldown
    report = world.state.guard.cooldown_report(world.now())
    assert any(ip == "203.0.113.1" for ip, _ in report)


def test_stale_timestamp_rejected(world):
    headers = world.headers()
    headers[TIMESTAMP_HEADER] = rfc3339(world.now() - 121)
    response = world.send(Request("POST", "/signin", CLIENT_IP, headers, signin_body(world)))
    assert response.status == 401 and response.body["error"] == "Stale"


def test_nonce_replay_rejected(world):
    request = Request("POST", "/signin", CLIENT_IP, world.headers(), signin_body(world))
    assert world.send(request).status == 200
    replayed = world.send(request)
    assert replayed.status == 401 and replayed.body["error"] == "Replayed"


def test_missing_freshness_headers(world):
    response = world.send(Request("POST", "/signin", CLIENT_IP, {}, signin_body(world)))
    assert response.status == 400
    assert response.body["detail"] == "MissingFreshnessHeaders"


def test_bad_input_rejected_before_freshness(world):
    headers = world.headers()
    headers[TIMESTAMP_HEADER] = rfc3339(world.now() - 999)  # stale as well
    body = json.dumps({"principal_id": "x' OR '1'='1"}).encode()
    response = world.send(Request("POST", "/signin", CLIENT_IP, headers, body))
    # earliest gate wins: input validation, not staleness
    assert response.status == 400
    assert response.body["error"] == "Rejected"
    assert response.body["detail"] == "Injection"


def test_tamper_checked_before_freshness(world):
    headers = world.headers()
    headers[TIMESTAMP_HEADER] = rfc3339(world.now() - 999)
    headers[PAYLOAD_DIGEST_HEADER] = cc.digest(b"other").hex()
    response = world.send(Request("POST", "/signin", CLIENT_IP, headers, signin_body(world)))
    assert response.status == 401 and response.body["error"] == "TamperDetected"


def test_guard_outranks_everything(world):
    headers = {TIMESTAMP_HEADER: rfc3339(world.now() - 999), NONCE_HEADER: "zz"}
    response = world.send(Request("POST", "/signin", "203.0.113.7", headers, b"{broken"))
    assert response.status == 403 and response.body is None


def test_unknown_endpoint(world):
    response = world.send(Request("GET", "/nonesuch", CLIENT_IP, world.headers()))
    assert response.status == 400
    assert response.body["detail"] == "UnknownEndpoint"


def test_malformed_json_body(world):
    response = world.send(Request("POST", "/signin", CLIENT_IP, world.headers(), b"{nope"))
    assert response.status == 400 and response.body["detail"] == "Body"


def test_bad_session_header_format(world):
    headers = world.headers()
    headers[SESSION_HEADER] = "not-hex"
    response = world.send(Request("GET", "/resource/flight-simulator", CLIENT_IP, headers))
    assert response.status == 400


def test_unknown_session_denied(world):
    headers = world.headers()
    headers[SESSION_HEADER] = "0" * 64
    response = world.send(Request("GET", "/resource/flight-simulator", CLIENT_IP, headers))
    assert response.status == 403 and response.body["error"] == "NoSession"


def test_signin_failure_statuses(world):
    body = json.dumps({"principal_id": "alice", "token_code": world.wrong_code()}).encode()
    response = world.send(Request("POST", "/signin", CLIENT_IP, world.headers(), body))
    assert response.status == 401 and response.body["error"] == "FactorInvalid"


def test_no_payload_bytes_without_allow(world):
    payload_markers = [base64.b64encode(blob).decode() for blob in
                       world.state.resources.values()]
    responses = [
        world.send(Request("GET", "/resource/flight-simulator", CLIENT_IP,
                           {**world.headers(), SESSION_HEADER: "0" * 64})),
        world.send(Request("POST", "/signin", CLIENT_IP, world.headers(),
                           json.dumps({"principal_id": "alice"}).encode())),
        world.send(Request("GET", "/resource/flight-simulator", "203.0.113.2",
                           world.headers())),
    ]
    for response in responses:
        assert response.status != 200
        rendered = json.dumps(response.body) if response.body else ""
        for marker in payload_markers:
            assert marker not in rendered


def test_error_bodies_never_leak_internals(world):
    bad_requests = [
        Request("POST", "/signin", CLIENT_IP, world.headers(), b"{broken"),
        Request("POST", "/signin", CLIENT_IP, world.headers(),
                json.dumps({"principal_id": "<script>"}).encode()),
        Request("GET", "/resource/flight-simulator", CLIENT_IP,
                {**world.headers(), SESSION_HEADER: "0" * 64}),
        Request("GET", "/nonesuch", CLIENT_IP, world.headers()),
    ]
    for request in bad_requests:
        response = world.send(request)
        assert response.status != 200
        assert set(response.body) <= {"error", "notice", "detail", "field"}
        blob = json.dumps(response.body)
        assert "Traceback" not in blob
        assert str(world.state.config.home) not in blob


# ---------------------------------------------------------------------------
# admin endpoints
# ---------------------------------------------------------------------------

@pytest.fixture
def admin_world(world):
    state = world.state
    state.onboard_principal(Principal(
        id="carol", display_name="Carol", roles={"admin"}, hardware_credential=True,
    ))
    state.provision_seed("carol")
    cert, _ = state.issue_certificate_for("carol", days=30)
    world.clock.advance(30)
    body = json.dumps({
        "principal_id": "carol",
        "token_code": current_token(state.token_store.get("carol"), world.now()),
        "certificate": encode_certificate(cert),
    }).encode()
    response = world.send(Request("POST", "/signin", SECOND_IP, world.headers(), body))
    assert response.status == 200, response.body
    world.admin_session = response.body["session_id"]
    return world


def admin_request(world, method, path, body=None):
    headers = world.headers()
    headers[SESSION_HEADER] = world.admin_session
    payload = json.dumps(body).encode() if body is not None else b""
    return world.send(Request(method, path, SECOND_IP, headers, payload))


def test_admin_onboard_and_duplicate(admin_world):
    response = admin_request(admin_world, "POST", "/admin/onboard",
                             {"id": "dave", "roles": ["pilot"], "password": "dave-pw"})
    assert response.status == 200
    assert "dave" in admin_world.state.registry
    duplicate = admin_request(admin_world, "POST", "/admin/onboard",
                              {"id": "dave", "roles": ["pilot"]})
    assert duplicate.status == 409 and duplicate.body["error"] == "DuplicateId"


def test_admin_capacity_maps_to_503(admin_world):
    admin_world.state.registry.capacity = len(admin_world.state.registry)
    response = admin_request(admin_world, "POST", "/admin/onboard",
                             {"id": "overflow", "roles": ["pilot"]})
    assert response.status == 503 and response.body["error"] == "CapacityExceeded"


def test_admin_revoke_flow(admin_world):
    serial = admin_world.cert.serial
    response = admin_request(admin_world, "POST", "/admin/revoke",
                             {"serial": serial, "reason": "lost card"})
    assert response.status == 200
    admin_world.clock.advance(30)
    denied = admin_world.signin(CLIENT_IP, token_code=admin_world.token_code(),
                                with_cert=True)
    assert denied.status == 401 and denied.body["error"] == "FactorInvalid"
    missing = admin_request(admin_world, "POST", "/admin/revoke",
                            {"serial": 999, "reason": "x"})
    assert missing.status == 400 and missing.body["error"] == "UnknownSerial"


def test_admin_grant_role(admin_world):
    response = admin_request(admin_world, "POST", "/admin/grant-role",
                             {"id": "alice", "role": "backoffice", "ticket": "CM-17"})
    assert response.status == 200
    assert "backoffice" in admin_world.state.registry.get("alice").roles
    no_ticket = admin_request(admin_world, "POST", "/admin/grant-role",
                              {"id": "alice", "role": "x"})
    assert no_ticket.status == 400


def test_admin_cooldowns_report(admin_world):
    admin_world.send(Request("GET", "/resource/x", "203.0.113.3", admin_world.headers()))
    response = admin_request(admin_world, "GET", "/admin/cooldowns")
    assert response.status == 200
    assert any(entry["ip"] == "203.0.113.3" for entry in response.body["cooldowns"])


def test_admin_audit_verify(admin_world):
    response = admin_request(admin_world, "GET", "/admin/audit/verify")
    assert response.status == 200
    assert response.body["ok"] is True and response.body["records"] > 0


def test_non_admin_session_rejected_on_admin_api(admin_world):
    signin = admin_world.signin(CLIENT_IP, token_code=admin_world.token_code(),
                                with_cert=True)
    assert signin.status == 200
    headers = admin_world.headers()
    headers[SESSION_HEADER] = signin.body["session_id"]
    response = admin_world.send(
        Request("GET", "/admin/cooldowns", CLIENT_IP, headers)
    )
    assert response.status == 403 and response.body["error"] == "RoleMissing"


# ---------------------------------------------------------------------------
# cross-module audit accounting
# ---------------------------------------------------------------------------

def test_every_security_event_audited_exactly_once(world):
    state = world.state
    before = {action: 0 for action in (
        "signin", "access-granted", "access-denied", "privilege-change",
        "revocation", "cooldown-triggered",
    )}
    for record in state.audit_log.records:
        if record.action in before:
            before[record.action] += 1

    # 2 signin attempts: one success, one failure
    ok = world.signin(CLIENT_IP, token_code=world.token_code(), with_cert=True)
    assert ok.status == 200
    session_id = ok.body["session_id"]
    assert world.signin(CLIENT_IP, token_code=world.wrong_code()).status == 401

    # 3 access decisions: two grants, one denial (alice is not backoffice)
    for resource, expected in (("flight-simulator", 200), ("flight-simulator", 200),
                               ("back-office", 403)):
        headers = world.headers()
        headers[SESSION_HEADER] = session_id
        response = world.send(Request("GET", f"/resource/{resource}", CLIENT_IP, headers))
        assert response.status == expected

    # 1 privilege grant, 1 revocation, 1 cooldown trigger (3 failures on SECOND_IP)
    state.grant_role("alice", "backoffice", "CM-9")
    state.revoke_serial(world.cert.serial, "rotation")
    for offset in range(3):
        world.clock.advance(1)
        world.signin(SECOND_IP, token_code=world.wrong_code())

    counted = {action: 0 for action in before}
    for record in state.audit_log.records:
        if record.action in counted:
            counted[record.action] += 1
    deltas = {action: counted[action] - before[action] for action in before}
    assert deltas == {
        "signin": 2 + 3,          # the three lockout probes are sign-in attempts too
        "access-granted": 2,
        "access-denied": 1,
        "privilege-change": 1,
        "revocation": 1,
        "cooldown-triggered": 1,
    }
    assert state.audit_log.verify_chain().ok


# ---------------------------------------------------------------------------
# persistence and restart
# ---------------------------------------------------------------------------

def test_state_survives_restart(world):
    request = Request("POST", "/signin", CLIENT_IP, world.headers(), signin_body(world))
    used_code = json.loads(request.body)["token_code"]
    assert world.send(request).status == 200
    world.state.persist()

    reborn = GatewayState(world.state.config)
    assert "alice" in reborn.registry
    assert reborn.registry.get("alice").token_enrolled
    assert reborn.ca.next_serial == world.state.ca.next_serial
    # replay protection survives the restart (high-water counter persisted)
    body = json.dumps({"principal_id": "alice", "token_code": used_code,
                       "certificate": world.cert_envelope}).encode()
    headers = {TIMESTAMP_HEADER: rfc3339(reborn.clock.now()),
               NONCE_HEADER: secrets.token_hex(16)}
    response = handle_request(reborn, Request("POST", "/signin", CLIENT_IP, headers, body))
    assert response.status == 401 and response.body["error"] == "FactorInvalid"


def test_trusted_client_ip_header_honored_only_when_enabled(world):
    world.state.config.trust_client_ip_header = False
    ignored = world.send(Request("POST", "/signin", FOREIGN_IP,
                                 {**world.headers(), CLIENT_IP_HEADER: "203.0.113.250"},
                                 signin_body(world)))
    assert ignored.status == 200  # socket ip (whitelisted) wins, header ignored

    world.state.config.trust_client_ip_header = True
    world.clock.advance(30)
    honored = world.send(Request("POST", "/signin", CLIENT_IP,
                                 {**world.headers(), CLIENT_IP_HEADER: "203.0.113.251"},
                                 signin_body(world)))
    assert honored.status == 403 and honored.body is None
