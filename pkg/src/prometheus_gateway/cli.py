"""Administrator command line for the gateway.

State lives under a home directory (``--config`` pointing at a config file,
or ``PROMETHEUS_HOME``, or ``./prometheus-home``). Exit codes: 0 on
success, 1 on operational failure (the error class name is printed), 2 on
usage errors.

``--clock SIMULATED:<rfc3339>`` pins time for deterministic runs, which is
how the lockout timing can be exercised without waiting a day.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .clock import Clock, RealClock, SimulatedClock, parse_rfc3339, rfc3339
from .crypto_core import keypair_to_obj, new_salted
from .errors import ParseError, PrometheusError
from .gateway.config import GatewayConfig, default_config, load_config
from .gateway.httpserver import GatewayServer
from .gateway.service import GatewayState, initialize_home
from .gateway.validation import FIELD_SPECS, validate_input
from .harness import SCENARIOS, run_scenario
from .identity_access import Principal
from .audit import verify_log_file
from .pki import encode_certificate
from .token_auth import export_seed_line

DEFAULT_HOME = "prometheus-home"


def _checked(spec_name: str, value: str, flag: str) -> str:
    """CLI inputs go through the same server-side validation as wire inputs."""
    check = validate_input(spec_name, value, FIELD_SPECS[spec_name])
    if not check.ok:
        raise ParseError(f"{flag} rejected ({check.reason.value}): {value!r}")
    return value


def _environment(args: argparse.Namespace) -> tuple[GatewayConfig, Optional[Clock]]:
    if args.config:
        config = load_config(Path(args.config))
    else:
        home = Path(os.environ.get("PROMETHEUS_HOME", DEFAULT_HOME))
        config = default_config(home)
    clock: Optional[Clock] = None
    if args.clock:
        spec = args.clock
        upper = spec.upper()
        if upper.startswith("SIMULATED:"):
            clock = SimulatedClock(parse_rfc3339(spec.split(":", 1)[1]))
        elif upper == "REAL":
            clock = RealClock()
        else:
            raise ParseError(f"bad --clock {spec!r}; use REAL or SIMULATED:<rfc3339>")
    return config, clock


def _state(args: argparse.Namespace, require_ca: bool = True) -> GatewayState:
    config, clock = _environment(args)
    return GatewayState(config, clock=clock, require_ca=require_ca)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ca_init(args: argparse.Namespace) -> int:
    config, _clock = _environment(args)
    ca = initialize_home(config)
    print(f"initialized certificate authority '{ca.id}' in {config.home}")
    return 0


def cmd_ca_issue(args: argparse.Namespace) -> int:
    subject = _checked("principal_id", args.subject, "--subject")
    state = _state(args)
    cert, keypair = state.issue_certificate_for(subject, args.days, args.bits)
    out_dir = Path(args.out) if args.out else state.config.home
    out_dir.mkdir(parents=True, exist_ok=True)
    cert_path = out_dir / f"{subject}.cert"
    key_path = out_dir / f"{subject}.key"
    cert_path.write_text(encode_certificate(cert) + "\n", encoding="utf-8")
    key_path.write_text(json.dumps(keypair_to_obj(keypair), indent=2) + "\n", encoding="utf-8")
    print(f"issued serial {cert.serial} for {subject}")
    print(f"  certificate: {cert_path}")
    print(f"  private key: {key_path}")
    return 0


def cmd_ca_revoke(args: argparse.Namespace) -> int:
    state = _state(args)
    state.revoke_serial(args.serial, args.reason)
    print(f"revoked serial {args.serial} ({args.reason})")
    return 0


def cmd_onboard(args: argparse.Namespace) -> int:
    principal_id = _checked("principal_id", args.id, "--id")
    roles = {_checked("role", role, "--roles")
             for role in (args.roles or "").split(",") if role}
    state = _state(args, require_ca=False)
    principal = Principal(
        id=principal_id,
        display_name=args.display_name or args.id,
        roles=roles,
        hardware_credential=args.hardware_credential,
        password_credential=new_salted(args.password.encode()) if args.password else None,
    )
    state.onboard_principal(principal)
    print(f"onboarded {principal_id} roles={','.join(sorted(roles)) or '-'}")
    return 0


def cmd_seed_provision(args: argparse.Namespace) -> int:
    principal_id = _checked("principal_id", args.id, "--id")
    state = _state(args, require_ca=False)
    seed = state.provision_seed(principal_id)
    print(export_seed_line(seed))
    return 0


def cmd_grant_role(args: argparse.Namespace) -> int:
    principal_id = _checked("principal_id", args.id, "--id")
    role = _checked("role", args.role, "--role")
    ticket = _checked("ticket", args.ticket, "--ticket")
    state = _state(args, require_ca=False)
    state.grant_role(principal_id, role, ticket)
    print(f"granted role '{role}' to {principal_id} (ticket {ticket})")
    return 0


def cmd_cooldowns(args: argparse.Namespace) -> int:
    state = _state(args, require_ca=False)
    entries = state.guard.cooldown_report(state.clock.now())
    if not entries:
        print("no active cooldowns")
        return 0
    print(f"{'ip':<40} until")
    for ip, until in entries:
        print(f"{ip:<40} {rfc3339(until)}")
    return 0


def cmd_audit_verify(args: argparse.Namespace) -> int:
    config, _clock = _environment(args)
    if not config.audit_log_path.exists():
        print("OK (0 records)")
        return 0
    status = verify_log_file(config.audit_log_path)
    if status.ok:
        print(f"OK ({status.length} records)")
        return 0
    print(f"CORRUPT at seq {status.corrupt_seq}")
    return 1


def cmd_serve(args: argparse.Namespace) -> int:
    state = _state(args)
    server = GatewayServer(state)
    host, port = server.address
    attested = "yes" if state.config.fips_140_2_attested else "no"
    print(f"gateway listening on {host}:{port} (FIPS 140-2 attested: {attested})",
          flush=True)
    server.serve_forever()
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    report = run_scenario(args.scenario, args.target)
    print(report.render())
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prometheus-gw",
        description="Identity-management and single-sign-on gateway administration",
    )
    parser.add_argument("--config", help="path to gateway config JSON")
    parser.add_argument(
        "--clock",
        help="REAL or SIMULATED:<rfc3339> for deterministic time",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ca = sub.add_parser("ca", help="certificate authority operations")
    ca_sub = ca.add_subparsers(dest="ca_command", required=True)
    ca_init = ca_sub.add_parser("init", help="create the CA and starter state files")
    ca_init.set_defaults(func=cmd_ca_init)
    ca_issue = ca_sub.add_parser("issue", help="issue a certificate (and subject keypair)")
    ca_issue.add_argument("--subject", required=True)
    ca_issue.add_argument("--days", type=int, default=365)
    ca_issue.add_argument("--bits", type=int, default=None)
    ca_issue.add_argument("--out", help="directory for the cert/key files (default: home)")
    ca_issue.set_defaults(func=cmd_ca_issue)
    ca_revoke = ca_sub.add_parser("revoke", help="revoke a certificate by serial")
    ca_revoke.add_argument("--serial", type=int, required=True)
    ca_revoke.add_argument("--reason", default="unspecified")
    ca_revoke.set_defaults(func=cmd_ca_revoke)

    onboard = sub.add_parser("onboard", help="register a principal")
    onboard.add_argument("--id", required=True)
    onboard.add_argument("--roles", default="", help="comma-separated role names")
    onboard.add_argument("--display-name", dest="display_name")
    onboard.add_argument("--password", help="provision a salted password credential")
    onboard.add_argument(
        "--hardware-credential", action="store_true",
        help="mark the principal as holding a hardware credential",
    )
    onboard.set_defaults(func=cmd_onboard)

    seed = sub.add_parser("seed", help="one-time-token seed operations")
    seed_sub = seed.add_subparsers(dest="seed_command", required=True)
    seed_provision = seed_sub.add_parser("provision", help="enroll a token seed")
    seed_provision.add_argument("--id", required=True)
    seed_provision.set_defaults(func=cmd_seed_provision)

    grant = sub.add_parser("grant-role", help="grant a role under a change ticket")
    grant.add_argument("--id", required=True)
    grant.add_argument("--role", required=True)
    grant.add_argument("--ticket", required=True)
    grant.set_defaults(func=cmd_grant_role)

    cooldowns = sub.add_parser("cooldowns", help="report active IP cooldowns")
    cooldowns.set_defaults(func=cmd_cooldowns)

    audit = sub.add_parser("audit", help="audit log operations")
    audit_sub = audit.add_subparsers(dest="audit_command", required=True)
    audit_verify = audit_sub.add_parser("verify", help="verify the audit hash chain")
    audit_verify.set_defaults(func=cmd_audit_verify)

    serve = sub.add_parser("serve", help="run the gateway HTTP server")
    serve.set_defaults(func=cmd_serve)

    simulate = sub.add_parser("simulate", help="run an attack-simulation scenario")
    simulate.add_argument("--scenario", required=True, choices=SCENARIOS)
    simulate.add_argument("--target", help="base URL of a running gateway (wire mode)")
    simulate.set_defaults(func=cmd_simulate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrometheusError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
