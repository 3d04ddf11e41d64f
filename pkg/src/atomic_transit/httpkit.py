"""Minimal HTTP plumbing for the desk-scale services.

Every service in this package (broker, realtime bridge, estimator, router)
exposes a small JSON/binary REST surface. This module gives them a shared
threaded server with pattern routing, plus thin client helpers, so the
service modules contain only their own endpoint logic.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import parse_qs, urlsplit

import requests

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0


@dataclass
class Request:
    method: str
    path: str
    params: dict[str, str]
    query: dict[str, str]
    headers: dict[str, str]
    body: bytes

    def json(self):
        return json.loads(self.body.decode("utf-8"))


@dataclass
class Response:
    status: int = 200
    body: bytes = b""
    content_type: str = "application/json"
    headers: dict[str, str] = field(default_factory=dict)


def json_response(payload, status: int = 200) -> Response:
    return Response(status=status, body=json.dumps(payload).encode("utf-8"))


def error_response(status: int, error: str, detail: str = "") -> Response:
    return json_response({"error": error, "detail": detail}, status=status)


def bytes_response(data: bytes, content_type: str) -> Response:
    return Response(status=200, body=data, content_type=content_type)


def _compile_pattern(pattern: str) -> re.Pattern:
    # "/v2/entities/{id}/attrs" -> named groups, one path segment per param
    regex = re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", pattern)
    return re.compile("^" + regex + "$")


class HttpService:
    """A threaded HTTP server with `{param}`-style route patterns.

    Routes are registered before `start()`. The server binds to an
    ephemeral port when `port=0`, which the tests rely on.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, name: str = "service"):
        self.host = host
        self.port = port
        self.name = name
        self._routes: list[tuple[str, re.Pattern, Callable[[Request], Response]]] = []
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def add_route(self, method: str, pattern: str, handler: Callable[[Request], Response]) -> None:
        self._routes.append((method.upper(), _compile_pattern(pattern), handler))

    def _dispatch(self, request: Request) -> Response:
        matched_path = False
        for method, regex, handler in self._routes:
            m = regex.match(request.path)
            if not m:
                continue
            matched_path = True
            if method != request.method:
                continue
            request.params = {k: v for k, v in m.groupdict().items()}
            try:
                return handler(request)
            except Exception:
                log.exception("%s: handler error on %s %s", self.name, request.method, request.path)
                return error_response(500, "InternalError")
        if matched_path:
            return error_response(405, "MethodNotAllowed")
        return error_response(404, "NotFound", request.path)

    def start(self) -> None:
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # route to logging, not stderr
                log.debug("%s: %s", service.name, fmt % args)

            def _handle(self):
                split = urlsplit(self.path)
                query = {k: v[0] for k, v in parse_qs(split.query).items()}
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                request = Request(
                    method=self.command,
                    path=split.path,
                    params={},
                    query=query,
                    headers={k: v for k, v in self.headers.items()},
                    body=body,
                )
                response = service._dispatch(request)
                self.send_response(response.status)
                self.send_header("Content-Type", response.content_type)
                self.send_header("Content-Length", str(len(response.body)))
                for key, value in response.headers.items():
                    self.send_header(key, value)
                self.end_headers()
                self.wfile.write(response.body)

            do_GET = do_POST = do_PATCH = do_DELETE = do_PUT = _handle

        self._server = ThreadingHTTPServer((self.host, self.port), Handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, name=f"http-{self.name}", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"


def get_json(url: str, params: dict | None = None, timeout: float = DEFAULT_TIMEOUT):
    resp = requests.get(url, params=params, timeout=timeout)
    return resp.status_code, _decode_json(resp)


def post_json(url: str, payload, timeout: float = DEFAULT_TIMEOUT):
    resp = requests.post(url, json=payload, timeout=timeout)
    return resp.status_code, _decode_json(resp)


def patch_json(url: str, payload, timeout: float = DEFAULT_TIMEOUT):
    resp = requests.patch(url, json=payload, timeout=timeout)
    return resp.status_code, _decode_json(resp)


def delete(url: str, timeout: float = DEFAULT_TIMEOUT) -> int:
    return requests.delete(url, timeout=timeout).status_code


def get_bytes(url: str, timeout: float = DEFAULT_TIMEOUT) -> tuple[int, bytes]:
    resp = requests.get(url, timeout=timeout)
    return resp.status_code, resp.content


def post_bytes(url: str, data: bytes, headers: dict[str, str] | None = None,
               timeout: float = DEFAULT_TIMEOUT) -> tuple[int, bytes]:
    resp = requests.post(url, data=data, headers=headers or {}, timeout=timeout)
    return resp.status_code, resp.content


def _decode_json(resp: requests.Response):
    if not resp.content:
        return None
    try:
        return resp.json()
    except ValueError:
        return None
