"""Error hierarchy shared across the gateway.

Every operational failure raised by a subsystem derives from
:class:`PrometheusError`; the CLI reports failures by class name, so class
names are part of the operator-facing contract.
"""


class PrometheusError(Exception):
    """Base class for all gateway errors."""


# crypto_core

class SaltTooShort(PrometheusError):
    pass


class KeyTooShort(PrometheusError):
    pass


class PolicyViolation(PrometheusError):
    pass


class InvalidKey(PrometheusError):
    pass


# pki

class InvalidValidityWindow(PrometheusError):
    pass


class EmptySubject(PrometheusError):
    pass


class UnknownSerial(PrometheusError):
    pass


class BadCrlSignature(PrometheusError):
    pass


class EnvelopeFormatError(PrometheusError):
    pass


class NoCertificateAuthority(PrometheusError):
    pass


class AlreadyInitialized(PrometheusError):
    pass


# token_auth

class UnknownPrincipal(PrometheusError):
    pass


class AlreadyProvisioned(PrometheusError):
    pass


# identity_access

class DuplicateId(PrometheusError):
    pass


class CapacityExceeded(PrometheusError):
    pass


class MissingChangeTicket(PrometheusError):
    pass


# guard

class NotConnected(PrometheusError):
    pass


# session_sso

class InvalidSession(PrometheusError):
    pass


# gateway

class MissingFile(PrometheusError):
    pass


class ParseError(PrometheusError):
    pass


class PolicyFloorViolation(PrometheusError):
    pass


# cli / simulation harness

class TargetUnreachable(PrometheusError):
    pass


class UnknownScenario(PrometheusError):
    pass


class SimulationUnsupported(PrometheusError):
    pass
