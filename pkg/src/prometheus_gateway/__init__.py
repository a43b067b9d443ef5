"""Identity-management and single-sign-on gateway.

Subsystems:

- ``crypto_core``     hashing, salted credentials, keypairs, signing, MAC
- ``pki``             certificate authority, revocation list, status checks
- ``token_auth``      one-time-token second factor with replay rejection
- ``identity_access`` principal registry, roles, ACL decisions
- ``guard``           IP whitelist, three-strike lockout, connection limits
- ``session_sso``     two-factor sign-in, SSO sessions, receipts, freshness
- ``audit``           hash-chained append-only audit log
- ``gateway``         request pipeline, config, HTTP front end
- ``cli``             admin command line and attack-simulation harness
"""

__version__ = "0.1.0"
