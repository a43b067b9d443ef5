from __future__ import annotations

import dataclasses
import itertools

import pytest

from prometheus_gateway import crypto_core as cc
from prometheus_gateway import session_sso as sso
from prometheus_gateway.audit import AuditLog
from prometheus_gateway.clock import DAY
from prometheus_gateway.errors import InvalidSession
from prometheus_gateway.guard import Guard
from prometheus_gateway.identity_access import AclEntry, FactorKind, Principal, Registry
from prometheus_gateway.pki import CertificateAuthority
from prometheus_gateway.token_auth import TokenStore, current_token
from tests.conftest import T0

IP1 = "10.0.0.1"
IP2 = "10.0.0.2"


# ---------------------------------------------------------------------------
# trusted contexts
# ---------------------------------------------------------------------------

EXTERNAL_HIGH = sso.TrustedContext("ext", sso.EncryptionLevel.HIGH, 256)
INTERNAL_HIGH = sso.TrustedContext(
    "int", sso.EncryptionLevel.HIGH, 128, scope=sso.ContextScope.INTERNAL_SECRET
)


def test_external_floor_met():
    decision = sso.establish_trusted_context(EXTERNAL_HIGH, sso.EncryptionLevel.HIGH, 256)
    assert decision.established and decision.notice is None


def test_external_floor_violated():
    decision = sso.establish_trusted_context(EXTERNAL_HIGH, sso.EncryptionLevel.HIGH, 128)
    assert not decision.established
    assert "administrator" in decision.notice


def test_internal_secret_floor():
    assert sso.establish_trusted_context(INTERNAL_HIGH, sso.EncryptionLevel.HIGH, 128).established


def test_lower_offered_level_refused():
    decision = sso.establish_trusted_context(EXTERNAL_HIGH, sso.EncryptionLevel.LOW, 4096)
    assert not decision.established


def test_context_floor_enforced_at_construction():
    with pytest.raises(ValueError):
        sso.TrustedContext("bad", sso.EncryptionLevel.HIGH, 255)
    with pytest.raises(ValueError):
        sso.TrustedContext("bad", sso.EncryptionLevel.HIGH, 127,
                           scope=sso.ContextScope.INTERNAL_SECRET)


def test_establish_monotone():
    contexts = [
        EXTERNAL_HIGH,
        INTERNAL_HIGH,
        sso.TrustedContext("low", sso.EncryptionLevel.LOW, 64),
        sso.TrustedContext("open", sso.EncryptionLevel.NONE, 0),
    ]
    levels = list(sso.EncryptionLevel)
    bits_values = (0, 127, 128, 255, 256, 4096)
    for ctx in contexts:
        for level, bits in itertools.product(levels, bits_values):
            base = sso.establish_trusted_context(ctx, level, bits).established
            for higher_level in levels:
                if higher_level < level:
                    continue
                for more_bits in bits_values:
                    if more_bits < bits:
                        continue
                    upgraded = sso.establish_trusted_context(ctx, higher_level, more_bits)
                    assert not (base and not upgraded.established)


# ---------------------------------------------------------------------------
# freshness
# ---------------------------------------------------------------------------

def test_freshness_ok_then_replayed():
    window = sso.FreshnessWindow(120)
    assert window.check(T0, "n1", T0) is sso.Freshness.OK
    assert window.check(T0, "n1", T0 + 1) is sso.Freshness.REPLAYED


def test_freshness_stale_boundary():
    window = sso.FreshnessWindow(120)
    assert window.check(T0 - 120, "edge", T0) is sso.Freshness.OK
    assert window.check(T0 - 121, "old", T0) is sso.Freshness.STALE


def test_stale_nonce_not_recorded():
    window = sso.FreshnessWindow(120)
    assert window.check(T0 - 500, "n", T0) is sso.Freshness.STALE
    assert window.check(T0, "n", T0) is sso.Freshness.OK


def test_prune_is_explicit():
    window = sso.FreshnessWindow(120)
    window.check(T0, "n", T0)
    # without prune the nonce stays dead forever
    assert window.check(T0 + 10_000, "n", T0 + 10_000) is sso.Freshness.REPLAYED
    assert window.prune(T0 + 10_000) == 1
    assert window.check(T0 + 10_000, "fresh", T0 + 10_000) is sso.Freshness.OK


def test_nonce_unique_over_sequences():
    window = sso.FreshnessWindow(120)
    import random
    rng = random.Random(12)
    ok_nonces: set[str] = set()
    now = T0
    for _ in range(500):
        now += rng.randrange(0, 3)
        nonce = f"n{rng.randrange(100)}"
        if window.check(now, nonce, now) is sso.Freshness.OK:
            assert nonce not in ok_nonces
            ok_nonces.add(nonce)


# ---------------------------------------------------------------------------
# payload integrity
# ---------------------------------------------------------------------------

def test_payload_integrity():
    message = b"telemetry"
    assert sso.verify_payload_integrity(message, cc.digest(message))
    flipped = bytes([message[0] ^ 1]) + message[1:]
    assert not sso.verify_payload_integrity(flipped, cc.digest(message))
    assert not sso.verify_payload_integrity(message, bytes(32))


# ---------------------------------------------------------------------------
# receipts
# ---------------------------------------------------------------------------

def make_session(now=T0, ttl=3600, ip=IP1) -> sso.Session:
    return sso.Session(
        session_id="ab" * 32,
        principal_id="alice",
        issued_at=now,
        expires_at=now + ttl,
        bound_ip=ip,
        factors=frozenset({FactorKind.CERTIFICATE, FactorKind.TOKEN}),
    )


def test_receipt_roundtrip():
    keypair = cc.toy_keypair()
    receipt = sso.issue_receipt(keypair.private_key, make_session(), b"GET /resource/x", T0)
    assert sso.verify_receipt(keypair.public_key, receipt)


def test_receipt_digest_tamper():
    keypair = cc.toy_keypair()
    receipt = sso.issue_receipt(keypair.private_key, make_session(), b"req", T0)
    mangled = dataclasses.replace(
        receipt, request_digest=bytes([receipt.request_digest[0] ^ 1]) + receipt.request_digest[1:]
    )
    assert not sso.verify_receipt(keypair.public_key, mangled)


def test_receipt_wrong_key(keypair_a):
    receipt = sso.issue_receipt(cc.toy_keypair().private_key, make_session(), b"req", T0)
    assert not sso.verify_receipt(keypair_a.public_key, receipt)


def test_receipt_encoding_roundtrip():
    keypair = cc.toy_keypair()
    receipt = sso.issue_receipt(keypair.private_key, make_session(), b"req", T0)
    assert sso.decode_receipt(sso.encode_receipt(receipt)) == receipt


def test_receipt_for_expired_session():
    keypair = cc.toy_keypair()
    with pytest.raises(InvalidSession):
        sso.issue_receipt(keypair.private_key, make_session(ttl=10), b"req", T0 + 11)


def test_session_requires_two_factors():
    with pytest.raises(ValueError):
        sso.Session("cd" * 32, "alice", T0, T0 + 10, IP1,
                    frozenset({FactorKind.CERTIFICATE}))


# ---------------------------------------------------------------------------
# sign-in orchestration (toy-scheme CA for speed and determinism)
# ---------------------------------------------------------------------------

class SsoWorld:
    def __init__(self) -> None:
        self.audit = AuditLog()
        self.registry = Registry(audit_log=self.audit)
        self.token_store = TokenStore()
        self.guard = Guard(whitelist={IP1, IP2})
        self.ca = CertificateAuthority("root", cc.toy_keypair())
        self.crl = self.ca.current_crl(T0)
        self.acl = [
            AclEntry("flight-simulator", frozenset({"pilot", "admin"})),
            AclEntry("back-office", frozenset({"backoffice", "admin"})),
            AclEntry("admin-console", frozenset({"admin"})),
        ]
        self.service = sso.SsoService(
            registry=self.registry,
            token_store=self.token_store,
            trust_anchor=self.ca.public_key,
            crl_provider=lambda: self.crl,
            guard=self.guard,
            audit_log=self.audit,
            acl_provider=lambda: self.acl,
            admin_resources=("admin-console",),
            session_ttl_seconds=3600,
        )
        self.certs = {}
        for principal in (
            Principal(id="alice", roles={"pilot", "backoffice"},
                      password_credential=cc.new_salted(b"alice-pw")),
            Principal(id="bob", roles={"pilot"},
                      password_credential=cc.new_salted(b"bob-pw")),
            Principal(id="carol", roles={"admin"}, hardware_credential=True,
                      password_credential=cc.new_salted(b"carol-pw")),
        ):
            self.registry.onboard(principal)
            self.token_store.provision_seed(principal.id, self.registry)
            subject_key = cc.toy_keypair()
            self.certs[principal.id] = self.ca.issue_certificate(
                principal.id, subject_key.public_key, T0 - DAY, T0 + 30 * DAY
            )
        self.crl = self.ca.current_crl(T0)  # refresh: issuance raised the serial ceiling

    def code(self, principal_id: str, now: int) -> str:
        return current_token(self.token_store.get(principal_id), now)

    def signin_records(self) -> list:
        return [r for r in self.audit.records if r.action == "signin"]


@pytest.fixture
def sw() -> SsoWorld:
    return SsoWorld()


def test_signin_cert_and_token(sw):
    result = sw.service.signin("alice", IP1, T0, certificate=sw.certs["alice"],
                               token_code=sw.code("alice", T0))
    assert isinstance(result, sso.Session)
    assert result.factors == frozenset({FactorKind.CERTIFICATE, FactorKind.TOKEN})
    assert result.bound_ip == IP1
    assert result.expires_at == T0 + 3600


def test_signin_single_factor_insufficient(sw):
    result = sw.service.signin("alice", IP1, T0, certificate=sw.certs["alice"])
    assert isinstance(result, sso.SigninFailure)
    assert result.reason is sso.SigninFailureReason.INSUFFICIENT_FACTORS


def test_signin_cross_identity(sw):
    result = sw.service.signin("bob", IP1, T0, certificate=sw.certs["alice"],
                               token_code=sw.code("bob", T0))
    assert isinstance(result, sso.SigninFailure)
    assert result.reason is sso.SigninFailureReason.IDENTITY_MISMATCH


def test_signin_bad_token(sw):
    result = sw.service.signin("alice", IP1, T0, certificate=sw.certs["alice"],
                               token_code="000000")
    assert isinstance(result, sso.SigninFailure)
    assert result.reason is sso.SigninFailureReason.FACTOR_INVALID
    assert result.which is FactorKind.TOKEN


def test_signin_password_and_token(sw):
    result = sw.service.signin("alice", IP1, T0, token_code=sw.code("alice", T0),
                               password=b"alice-pw")
    assert isinstance(result, sso.Session)
    assert result.factors == frozenset({FactorKind.TOKEN, FactorKind.PASSWORD})


def test_signin_wrong_password(sw):
    result = sw.service.signin("alice", IP1, T0, token_code=sw.code("alice", T0),
                               password=b"wrong")
    assert isinstance(result, sso.SigninFailure)
    assert result.which is FactorKind.PASSWORD


def test_signin_unknown_principal(sw):
    result = sw.service.signin("ghost", IP1, T0, token_code="123456", password=b"x")
    assert isinstance(result, sso.SigninFailure)
    assert result.reason is sso.SigninFailureReason.FACTOR_INVALID


def test_signin_revoked_certificate(sw):
    sw.crl = sw.ca.revoke(sw.certs["alice"].serial, "lost", T0)
    result = sw.service.signin("alice", IP1, T0, certificate=sw.certs["alice"],
                               token_code=sw.code("alice", T0))
    assert isinstance(result, sso.SigninFailure)
    assert result.which is FactorKind.CERTIFICATE
    assert result.detail == "Revoked"


def test_signin_audits_every_attempt(sw):
    sw.service.signin("alice", IP1, T0, certificate=sw.certs["alice"],
                      token_code=sw.code("alice", T0))
    sw.service.signin("alice", IP1, T0 + 60, certificate=sw.certs["alice"])
    records = sw.signin_records()
    assert len(records) == 2
    assert records[0].outcome.success and not records[1].outcome.success


def test_signin_failures_feed_guard_and_success_resets(sw):
    for offset in range(2):
        sw.service.signin("alice", IP1, T0 + offset, token_code="000000", password=b"nope")
    assert sw.guard.failures[IP1].count == 2
    sw.service.signin("alice", IP1, T0 + 90, token_code=sw.code("alice", T0 + 90),
                      password=b"alice-pw")
    assert sw.guard.failures[IP1].count == 0


def test_third_failure_triggers_cooldown_audit(sw):
    for offset in range(3):
        sw.service.signin("alice", IP2, T0 + offset, token_code="000000", password=b"no")
    cooldown_records = [r for r in sw.audit.records if r.action == "cooldown-triggered"]
    assert len(cooldown_records) == 1
    assert cooldown_records[0].actor == IP2
    assert sw.guard.cooldown_report(T0 + 3) != []


# ---------------------------------------------------------------------------
# request authorization
# ---------------------------------------------------------------------------

def session_for(sw, principal="alice", ip=IP1, at=T0) -> sso.Session:
    code = sw.code(principal, at)
    result = sw.service.signin(principal, ip, at, certificate=sw.certs[principal],
                               token_code=code)
    assert isinstance(result, sso.Session), result
    return result


def test_authorize_allow_and_audit(sw):
    session = session_for(sw)
    decision = sw.service.authorize_request(session.session_id, IP1, "flight-simulator", T0)
    assert decision.allowed
    granted = [r for r in sw.audit.records if r.action == "access-granted"]
    assert len(granted) == 1


def test_sso_one_session_many_apps(sw):
    session = session_for(sw)
    signins_before = len(sw.signin_records())
    for resource in ("flight-simulator", "back-office"):
        assert sw.service.authorize_request(session.session_id, IP1, resource, T0).allowed
    assert len(sw.signin_records()) == signins_before  # zero extra sign-ins


def test_hijack_kills_session_for_everyone(sw):
    session = session_for(sw)
    stolen = sw.service.authorize_request(session.session_id, IP2, "flight-simulator", T0)
    assert stolen.reason is sso.AuthzReason.HIJACK_SUSPECTED
    assert [r for r in sw.audit.records if r.action == "hijack-detected"]
    for ip in (IP1, IP2):
        decision = sw.service.authorize_request(session.session_id, ip, "flight-simulator", T0)
        assert not decision.allowed
        assert decision.reason is sso.AuthzReason.NO_SESSION


def test_expiry_boundary(sw):
    session = session_for(sw)
    at_limit = sw.service.authorize_request(
        session.session_id, IP1, "flight-simulator", session.expires_at
    )
    assert at_limit.allowed
    past = sw.service.authorize_request(
        session.session_id, IP1, "flight-simulator", session.expires_at + 1
    )
    assert past.reason is sso.AuthzReason.EXPIRED
    assert sw.service.sessions.get(session.session_id) is None


def test_unknown_session(sw):
    decision = sw.service.authorize_request("0" * 64, IP1, "flight-simulator", T0)
    assert decision.reason is sso.AuthzReason.NO_SESSION


def test_denials_feed_escalation(sw):
    session = session_for(sw, principal="bob")  # bob: pilot only
    for offset in range(3):
        decision = sw.service.authorize_request(
            session.session_id, IP1, "back-office", T0 + offset
        )
        assert decision.reason is sso.AuthzReason.ROLE_MISSING
    investigation = sw.audit.detect_escalation("bob", T0 + 10)
    assert investigation is not None and investigation.resource == "back-office"


def test_admin_requires_cert_and_token_factors(sw):
    code = sw.code("carol", T0)
    with_password = sw.service.signin("carol", IP1, T0, token_code=code,
                                      password=b"carol-pw")
    assert isinstance(with_password, sso.Session)  # {Token, Password}
    denied = sw.service.authorize_request(with_password.session_id, IP1, "admin-console", T0)
    assert denied.reason is sso.AuthzReason.SECOND_FACTOR_REQUIRED

    full = session_for(sw, principal="carol", at=T0 + 60)  # {Certificate, Token}
    allowed = sw.service.authorize_request(full.session_id, IP1, "admin-console", T0 + 60)
    assert allowed.allowed


def test_session_ids_unique(sw):
    ids = set()
    for offset in range(0, 150, 30):
        session = session_for(sw, at=T0 + offset)
        assert session.session_id not in ids
        ids.add(session.session_id)
