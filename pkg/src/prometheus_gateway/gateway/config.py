"""Gateway configuration: file loading, defaults, and policy floor checks.

Config is a JSON object; relative paths resolve against the gateway home
directory (the config file's directory unless ``home`` is set). Overrides
of the hard policy minimums — 24-hour cooldown, 256-bit external and
128-bit internal encryption floors, 1024-bit asymmetric keys — are rejected
at startup rather than silently clamped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..clock import Clock, RealClock, SimulatedClock, parse_rfc3339
from ..errors import MissingFile, ParseError, PolicyFloorViolation
from ..identity_access import POLICY_FLOORS, PolicyConstants

DEFAULT_RESOURCES = {
    "flight-simulator": "flight simulator application payload",
    "back-office": "back office application payload",
    "admin-console": "administrator console payload",
}


@dataclass
class GatewayConfig:
    home: Path
    listen_address: str = "127.0.0.1:8466"
    ca_id: str = "prometheus-root"
    ca_state_path: Path = Path("ca_state.json")
    gateway_key_path: Path = Path("gateway_key.json")
    principals_path: Path = Path("principals.jsonl")
    acl_path: Path = Path("acl.json")
    whitelist_path: Path = Path("whitelist.txt")
    audit_log_path: Path = Path("audit.jsonl")
    token_seeds_path: Path = Path("seeds.txt")
    guard_state_path: Path = Path("guard_state.json")
    resources: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_RESOURCES))
    admin_resources: tuple[str, ...] = ("admin-console",)
    admin_api_resource: str = "admin-console"
    policy: PolicyConstants = field(default_factory=PolicyConstants)
    max_concurrent_per_ip: int = 8
    freshness_max_age_seconds: int = 120
    token_step_seconds: int = 30
    token_digits: int = 6
    key_bits: int = 2048
    clock_mode: str = "real"
    clock_start: Optional[int] = None
    trust_client_ip_header: bool = False
    # deployment attestation only; not verified in software
    fips_140_2_attested: bool = False

    def __post_init__(self) -> None:
        self.home = Path(self.home)
        for name in _PATH_FIELDS:
            value = Path(getattr(self, name))
            if not value.is_absolute():
                value = self.home / value
            setattr(self, name, value)


_PATH_FIELDS = (
    "ca_state_path",
    "gateway_key_path",
    "principals_path",
    "acl_path",
    "whitelist_path",
    "audit_log_path",
    "token_seeds_path",
    "guard_state_path",
)

_POSITIVE_FIELDS = (
    "max_concurrent_per_ip",
    "freshness_max_age_seconds",
    "token_step_seconds",
    "key_bits",
)


def _check_policy(config: GatewayConfig) -> None:
    for name, floor in POLICY_FLOORS.items():
        value = getattr(config.policy, name)
        if value < floor:
            raise PolicyFloorViolation(f"{name}={value} is below the hard floor {floor}")
    for name in ("max_signin_failures", "escalation_threshold", "session_ttl_minutes",
                 "phase_one_users", "phase_three_capacity"):
        if getattr(config.policy, name) <= 0:
            raise PolicyFloorViolation(f"policy {name} must be positive")
    for name in _POSITIVE_FIELDS:
        if getattr(config, name) <= 0:
            raise PolicyFloorViolation(f"{name} must be positive")
    if config.key_bits < config.policy.min_asymmetric_bits:
        raise PolicyFloorViolation(
            f"key_bits={config.key_bits} below asymmetric floor "
            f"{config.policy.min_asymmetric_bits}"
        )
    if not 6 <= config.token_digits <= 9:
        raise PolicyFloorViolation("token_digits must be in [6, 9]")
    if config.admin_api_resource not in config.admin_resources:
        raise PolicyFloorViolation("admin_api_resource must be in admin_resources")
    if config.clock_mode not in ("real", "simulated"):
        raise PolicyFloorViolation(f"unknown clock_mode {config.clock_mode!r}")


def default_config(home: Path) -> GatewayConfig:
    config = GatewayConfig(home=Path(home))
    _check_policy(config)
    return config


def load_config(path: Path) -> GatewayConfig:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError("config must be a JSON object")

    home = Path(raw.pop("home", path.parent))
    policy_raw = raw.pop("policy", {})
    if not isinstance(policy_raw, dict):
        raise ParseError("config 'policy' must be an object")
    try:
        policy = PolicyConstants(**policy_raw)
    except TypeError as exc:
        raise ParseError(f"bad policy key: {exc}") from exc

    clock_start = raw.pop("clock_start", None)
    if isinstance(clock_start, str):
        clock_start = parse_rfc3339(clock_start)

    known = {f for f in GatewayConfig.__dataclass_fields__ if f not in ("home", "policy")}
    unknown = set(raw) - known
    if unknown:
        raise ParseError(f"unknown config keys: {sorted(unknown)}")
    if "admin_resources" in raw:
        raw["admin_resources"] = tuple(raw["admin_resources"])
    try:
        config = GatewayConfig(home=home, policy=policy, clock_start=clock_start, **raw)
    except TypeError as exc:
        raise ParseError(f"bad config value: {exc}") from exc
    _check_policy(config)
    return config


def save_config(config: GatewayConfig, path: Path) -> None:
    from ..clock import rfc3339

    obj: dict = {
        "home": str(config.home),
        "listen_address": config.listen_address,
        "ca_id": config.ca_id,
        "resources": config.resources,
        "admin_resources": list(config.admin_resources),
        "admin_api_resource": config.admin_api_resource,
        "policy": {
            "max_signin_failures": config.policy.max_signin_failures,
            "cooldown_hours": config.policy.cooldown_hours,
            "escalation_threshold": config.policy.escalation_threshold,
            "min_external_bits": config.policy.min_external_bits,
            "min_internal_bits": config.policy.min_internal_bits,
            "min_asymmetric_bits": config.policy.min_asymmetric_bits,
            "phase_one_users": config.policy.phase_one_users,
            "phase_three_capacity": config.policy.phase_three_capacity,
            "session_ttl_minutes": config.policy.session_ttl_minutes,
        },
        "max_concurrent_per_ip": config.max_concurrent_per_ip,
        "freshness_max_age_seconds": config.freshness_max_age_seconds,
        "token_step_seconds": config.token_step_seconds,
        "token_digits": config.token_digits,
        "key_bits": config.key_bits,
        "clock_mode": config.clock_mode,
        "trust_client_ip_header": config.trust_client_ip_header,
        "fips_140_2_attested": config.fips_140_2_attested,
    }
    for name in _PATH_FIELDS:
        obj[name] = str(getattr(config, name))
    if config.clock_start is not None:
        obj["clock_start"] = rfc3339(config.clock_start)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def make_clock(config: GatewayConfig) -> Clock:
    if config.clock_mode == "simulated":
        start = config.clock_start if config.clock_start is not None else 0
        return SimulatedClock(start)
    return RealClock()


def with_simulated_clock(config: GatewayConfig, start: int) -> GatewayConfig:
    return replace(config, clock_mode="simulated", clock_start=start)
