"""Thin HTTP/1.1 adapter over the request pipeline.

JSON in, JSON out; the pipeline in :mod:`.service` owns all semantics. One
thread per connection keeps the per-IP concurrent-connection accounting in
the guard meaningful.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .service import GatewayState, Request, handle_request


class _Handler(BaseHTTPRequestHandler):
    server_version = "PrometheusGateway"
    protocol_version = "HTTP/1.1"

    def do_GET(self) -> None:  # noqa: N802 (http.server naming)
        self._handle()

    def do_POST(self) -> None:  # noqa: N802
        self._handle()

    def _handle(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length > 0 else b""
        request = Request(
            method=self.command,
            path=self.path,
            ip=self.client_address[0],
            headers={key: value for key, value in self.headers.items()},
            body=body,
        )
        response = handle_request(self.server.state, request)  # type: ignore[attr-defined]
        payload = (
            json.dumps(response.body).encode("utf-8") if response.body is not None else b""
        )
        self.send_response(response.status)
        for key, value in response.headers.items():
            self.send_header(key, value)
        if payload:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    def log_message(self, format: str, *args) -> None:  # noqa: A002
        pass  # request outcomes land in the audit log, not stderr


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], state: GatewayState) -> None:
        super().__init__(address, _Handler)
        self.state = state


class GatewayServer:
    """Serve a gateway state over HTTP; usable as a context manager in tests."""

    def __init__(self, state: GatewayState, host: str | None = None, port: int | None = None):
        if host is None or port is None:
            cfg_host, _, cfg_port = state.config.listen_address.partition(":")
            host = host if host is not None else (cfg_host or "127.0.0.1")
            port = port if port is not None else int(cfg_port or 0)
        self.state = state
        self._server = _Server((host, port), state)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[0], self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.state.persist()

    def __enter__(self) -> "GatewayServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    def serve_forever(self) -> None:
        """Foreground serving for the CLI ``serve`` subcommand."""
        try:
            self._server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self._server.server_close()
            self.state.persist()
