from __future__ import annotations

import pytest

from prometheus_gateway import crypto_core
from prometheus_gateway.clock import SimulatedClock, parse_rfc3339
from prometheus_gateway.harness import World

T0 = parse_rfc3339("2026-03-01T00:00:00Z")


@pytest.fixture(scope="session")
def keypair_a() -> crypto_core.KeyPair:
    return crypto_core.generate_keypair(1024)


@pytest.fixture(scope="session")
def keypair_b() -> crypto_core.KeyPair:
    return crypto_core.generate_keypair(1024)


@pytest.fixture(scope="session")
def keypair_c() -> crypto_core.KeyPair:
    return crypto_core.generate_keypair(1024)


@pytest.fixture
def clock() -> SimulatedClock:
    return SimulatedClock(T0)


@pytest.fixture
def world(tmp_path) -> World:
    """Fresh in-process gateway with one enrolled principal (alice)."""
    return World(tmp_path / "home")
