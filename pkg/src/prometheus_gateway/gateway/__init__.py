"""Service surface: config, server-side input validation, request pipeline, HTTP."""

from .config import GatewayConfig, default_config, load_config, make_clock, save_config
from .service import GatewayState, Request, Response, handle_request
from .validation import InputCheck, InputReject, InputSpec, FIELD_SPECS, validate_input

__all__ = [
    "GatewayConfig",
    "GatewayState",
    "InputCheck",
    "InputReject",
    "InputSpec",
    "FIELD_SPECS",
    "Request",
    "Response",
    "default_config",
    "handle_request",
    "load_config",
    "make_clock",
    "save_config",
    "validate_input",
]
