"""Stateless cryptographic primitives used by every other subsystem.

Hashing is fixed to SHA-256 and the MAC is HMAC-SHA256, so digests and tags
are always exactly 32 bytes. Signatures go through a pluggable scheme
registry: the production scheme is RSA (PKCS#1 v1.5 over SHA-256, default
2048-bit modulus, hard floor 1024), and a deterministic toy
modular-exponentiation scheme exists purely so tests can check signatures
against an independent arithmetic oracle. Toy keys are never produced by
:func:`generate_keypair`; they come only from :func:`toy_keypair`.

All digest and tag comparisons are constant-time.
"""

from __future__ import annotations

import base64
import hashlib
import hmac as _hmac
import json
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .errors import InvalidKey, KeyTooShort, PolicyViolation, SaltTooShort

DIGEST_BYTES = 32
MIN_SALT_BYTES = 16
MIN_MAC_KEY_BYTES = 16
MIN_ASYMMETRIC_BITS = 1024
DEFAULT_ASYMMETRIC_BITS = 2048


def digest(data: bytes) -> bytes:
    """SHA-256 digest; 32 bytes, deterministic."""
    return hashlib.sha256(data).digest()


def constant_time_equal(a: bytes, b: bytes) -> bool:
    return _hmac.compare_digest(a, b)


def mac(key: bytes, message: bytes) -> bytes:
    """Keyed HMAC-SHA256 tag; 32 bytes."""
    if len(key) < MIN_MAC_KEY_BYTES:
        raise KeyTooShort(f"MAC key must be at least {MIN_MAC_KEY_BYTES} bytes, got {len(key)}")
    return _hmac.new(key, message, hashlib.sha256).digest()


# ---------------------------------------------------------------------------
# Salted credentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaltedCredential:
    """Salt plus digest over (salt || secret); the secret itself is never kept."""

    salt: bytes
    digest: bytes


def derive_salted(secret: bytes, salt: bytes) -> SaltedCredential:
    if len(salt) < MIN_SALT_BYTES:
        raise SaltTooShort(f"salt must be at least {MIN_SALT_BYTES} bytes, got {len(salt)}")
    return SaltedCredential(salt=salt, digest=digest(salt + secret))


def new_salted(secret: bytes) -> SaltedCredential:
    """Provision a credential with a fresh random salt."""
    return derive_salted(secret, secrets.token_bytes(MIN_SALT_BYTES))


def verify_salted(cred: SaltedCredential, secret: bytes) -> bool:
    return constant_time_equal(digest(cred.salt + secret), cred.digest)


# ---------------------------------------------------------------------------
# Asymmetric keys and signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PublicKey:
    scheme: str
    data: bytes


@dataclass(frozen=True)
class PrivateKey:
    scheme: str
    data: bytes


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    private_key: PrivateKey
    modulus_bits: int


class _RsaScheme:
    """RSA with PKCS#1 v1.5 / SHA-256 signatures (deterministic)."""

    name = "rsa"

    def generate(self, bits: int) -> KeyPair:
        key = rsa.generate_private_key(public_exponent=65537, key_size=bits)
        private_der = key.private_bytes(
            encoding=serialization.Encoding.DER,
            format=serialization.PrivateFormat.PKCS8,
            encryption_algorithm=serialization.NoEncryption(),
        )
        public_der = key.public_key().public_bytes(
            encoding=serialization.Encoding.DER,
            format=serialization.PublicFormat.SubjectPublicKeyInfo,
        )
        return KeyPair(
            public_key=PublicKey(self.name, public_der),
            private_key=PrivateKey(self.name, private_der),
            modulus_bits=bits,
        )

    def sign(self, private_data: bytes, message: bytes) -> bytes:
        try:
            key = serialization.load_der_private_key(private_data, password=None)
        except Exception as exc:
            raise InvalidKey(f"cannot load RSA private key: {exc}") from exc
        if not isinstance(key, rsa.RSAPrivateKey):
            raise InvalidKey("private key is not RSA")
        return key.sign(message, padding.PKCS1v15(), hashes.SHA256())

    def verify(self, public_data: bytes, message: bytes, signature: bytes) -> bool:
        try:
            key = serialization.load_der_public_key(public_data)
        except Exception:
            return False
        if not isinstance(key, rsa.RSAPublicKey):
            return False
        try:
            key.verify(signature, message, padding.PKCS1v15(), hashes.SHA256())
            return True
        except InvalidSignature:
            return False


class _ToyModexpScheme:
    """Textbook modular-exponentiation signatures over a tiny fixed modulus.

    Cryptographically worthless; exists only so deterministic tests can
    reproduce signatures with an independent arithmetic oracle.
    """

    name = "toy"

    # classic textbook parameters: p=61, q=53
    N = 3233
    E = 17
    D = 2753

    def generate(self, bits: int) -> KeyPair:
        pub = json.dumps({"n": self.N, "e": self.E}).encode()
        priv = json.dumps({"n": self.N, "d": self.D}).encode()
        return KeyPair(
            public_key=PublicKey(self.name, pub),
            private_key=PrivateKey(self.name, priv),
            modulus_bits=self.N.bit_length(),
        )

    def sign(self, private_data: bytes, message: bytes) -> bytes:
        try:
            params = json.loads(private_data)
            n, d = int(params["n"]), int(params["d"])
        except Exception as exc:
            raise InvalidKey(f"cannot load toy private key: {exc}") from exc
        m = int.from_bytes(digest(message), "big") % n
        s = pow(m, d, n)
        return s.to_bytes(8, "big")

    def verify(self, public_data: bytes, message: bytes, signature: bytes) -> bool:
        try:
            params = json.loads(public_data)
            n, e = int(params["n"]), int(params["e"])
            s = int.from_bytes(signature, "big")
        except Exception:
            return False
        m = int.from_bytes(digest(message), "big") % n
        return pow(s, e, n) == m


_SCHEMES = {
    _RsaScheme.name: _RsaScheme(),
    _ToyModexpScheme.name: _ToyModexpScheme(),
}


def generate_keypair(bits: int = DEFAULT_ASYMMETRIC_BITS) -> KeyPair:
    """Generate a production keypair; moduli below 1024 bits are refused."""
    if bits < MIN_ASYMMETRIC_BITS:
        raise PolicyViolation(
            f"asymmetric keys require at least {MIN_ASYMMETRIC_BITS} bits, got {bits}"
        )
    return _SCHEMES["rsa"].generate(bits)


def toy_keypair() -> KeyPair:
    """Deterministic test-mode keypair (n=3233, e=17, d=2753). Never for production."""
    return _SCHEMES["toy"].generate(0)


def keypair_to_obj(keypair: KeyPair) -> dict:
    """JSON-safe keypair representation for state and enrollment files."""
    return {
        "scheme": keypair.private_key.scheme,
        "modulus_bits": keypair.modulus_bits,
        "private_key": base64.b64encode(keypair.private_key.data).decode("ascii"),
        "public_key": base64.b64encode(keypair.public_key.data).decode("ascii"),
    }


def keypair_from_obj(obj: dict) -> KeyPair:
    scheme = obj["scheme"]
    return KeyPair(
        public_key=PublicKey(scheme, base64.b64decode(obj["public_key"])),
        private_key=PrivateKey(scheme, base64.b64decode(obj["private_key"])),
        modulus_bits=int(obj["modulus_bits"]),
    )


def sign(private_key: PrivateKey, message: bytes) -> bytes:
    scheme = _SCHEMES.get(private_key.scheme)
    if scheme is None:
        raise InvalidKey(f"unknown signature scheme {private_key.scheme!r}")
    return scheme.sign(private_key.data, message)


def verify_signature(public_key: PublicKey, message: bytes, signature: bytes) -> bool:
    scheme = _SCHEMES.get(public_key.scheme)
    if scheme is None:
        return False
    return scheme.verify(public_key.data, message, signature)
