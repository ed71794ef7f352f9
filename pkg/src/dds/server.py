"""HTTP/JSON service over the kernel.

Plain threading stdlib server: bodies are canonical JSON with a trailing
newline, so they are byte-identical to the CLI's JSON output for the same
store state. Sessions bind a token to an agent; every mutating request must
carry one, and the resulting events are attributed to that agent. The only
mutating endpoints are POST /items/{id}/execute and POST /modules — writes
cannot bypass the engine.
"""

from __future__ import annotations

import json
import re
import secrets
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, unquote, urlparse

from . import modules, views
from .canonical import canonical_bytes
from .errors import (
    AuthError,
    ConflictingVersion,
    ConstraintViolation,
    DdsError,
    DivisionByZero,
    IllegalTransition,
    ImmutableProperty,
    InvalidDefinition,
    MissingDependency,
    NameTaken,
    NoSuchVersion,
    NoSuchView,
    ParseError,
    RangeOutOfBounds,
    SchemaViolation,
    ScriptError,
    StaleJob,
    StorageFailure,
    TypeMismatch,
    UnknownActivity,
    UnknownAgent,
    UnknownItem,
    UnknownModule,
    UnknownPath,
    UnknownTarget,
)
from .execution import Engine

DEFAULT_SESSION_TTL = 24 * 3600

STATUS_BY_ERROR = {
    UnknownItem: 404,
    UnknownAgent: 404,
    UnknownActivity: 404,
    UnknownModule: 404,
    NoSuchView: 404,
    NoSuchVersion: 404,
    RangeOutOfBounds: 404,
    AuthError: 401,
    StaleJob: 409,
    IllegalTransition: 409,
    NameTaken: 409,
    ConflictingVersion: 409,
    ConstraintViolation: 409,
    ImmutableProperty: 409,
    SchemaViolation: 422,
    InvalidDefinition: 422,
    ScriptError: 422,
    ParseError: 422,
    TypeMismatch: 422,
    UnknownPath: 422,
    DivisionByZero: 422,
    UnknownTarget: 422,
    MissingDependency: 422,
    StorageFailure: 500,
}

# method, pattern, handler name, mutating?
ROUTES = (
    ("POST", r"^/sessions$", "create_session", False),
    ("GET", r"^/items$", "list_items", False),
    ("GET", r"^/items/([^/]+)$", "show_item", False),
    ("GET", r"^/items/([^/]+)/events$", "item_events", False),
    ("GET", r"^/items/([^/]+)/viewpoints/([^/]+)/([^/]+)$", "item_viewpoint", False),
    ("GET", r"^/agents/([^/]+)/jobs$", "agent_jobs", False),
    ("POST", r"^/items/([^/]+)/execute$", "execute", True),
    ("POST", r"^/modules$", "import_module", True),
    ("GET", r"^/modules/([^/]+)/([^/]+)/bundle$", "export_module", False),
)


def status_for(exc: DdsError) -> int:
    for cls, status in STATUS_BY_ERROR.items():
        if isinstance(exc, cls):
            return status
    return 500


class SessionTable:
    def __init__(self, ttl: int = DEFAULT_SESSION_TTL):
        self._ttl = ttl
        self._tokens: dict[str, tuple[str, float]] = {}  # token -> (agent uuid, expiry)
        self._lock = threading.Lock()

    def create(self, agent_uuid: str) -> str:
        token = secrets.token_hex(16)
        with self._lock:
            self._tokens[token] = (agent_uuid, time.time() + self._ttl)
        return token

    def agent_for(self, token: Optional[str]) -> str:
        if not token:
            raise AuthError("missing token")
        with self._lock:
            entry = self._tokens.get(token)
            if entry is None:
                raise AuthError("unknown token")
            uuid, expiry = entry
            if expiry < time.time():
                del self._tokens[token]
                raise AuthError("expired token")
            return uuid


class DdsServer:
    """Owns the engine-facing handlers; the BaseHTTPRequestHandler shim below
    just routes to them."""

    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 0,
                 session_ttl: int = DEFAULT_SESSION_TTL):
        self.engine = engine
        self.store = engine.store
        self.sessions = SessionTable(ttl=session_ttl)
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(self))
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- handlers (return (status, doc)) --

    def create_session(self, request, body) -> tuple[int, object]:
        name = (body or {}).get("agent-name")
        if not isinstance(name, str):
            raise SchemaViolation([{"code": "MissingRequired", "path": "agent-name"}])
        ref = self.store.ref(name)  # UnknownItem -> 404
        if self.store.state(ref).property_value("Type") != "Agent":
            raise UnknownAgent(name)
        token = self.sessions.create(ref.uuid)
        return 200, {"agent": ref.to_doc(), "token": token}

    def list_items(self, request, body) -> tuple[int, object]:
        query = request["query"]
        type_filter = query.get("type", [None])[0]
        prop_filters = []
        for key, values in query.items():
            if key.startswith("property."):
                for value in values:
                    prop_filters.append((key[len("property."):], value))
        return 200, views.items_listing(self.store, type_filter, prop_filters)

    def show_item(self, request, body) -> tuple[int, object]:
        ref = self.store.ref(request["params"][0])
        return 200, views.item_state_doc(self.store, ref)

    def item_events(self, request, body) -> tuple[int, object]:
        ref = self.store.ref(request["params"][0])
        query = request["query"]
        from_seq = int(query.get("from", ["0"])[0])
        to_raw = query.get("to", [None])[0]
        to_seq = None if to_raw is None else int(to_raw)
        return 200, views.events_doc(self.store, ref, from_seq, to_seq)

    def item_viewpoint(self, request, body) -> tuple[int, object]:
        ref = self.store.ref(request["params"][0])
        schema_name, view_name = request["params"][1], request["params"][2]
        return 200, views.viewpoint_doc(self.store, ref, schema_name, view_name)

    def agent_jobs(self, request, body) -> tuple[int, object]:
        ref = self.store.ref(request["params"][0])
        return 200, views.jobs_doc(self.engine, ref)

    def execute(self, request, body) -> tuple[int, object]:
        agent_uuid = self.sessions.agent_for(request["token"])
        agent = self.store.ref(agent_uuid)
        ref = self.store.ref(request["params"][0])
        if not isinstance(body, dict):
            raise SchemaViolation([{"code": "TypeViolation", "path": ""}])
        path = body.get("activity-path")
        transition = body.get("transition")
        if not isinstance(path, str) or not isinstance(transition, str):
            raise SchemaViolation(
                [{"code": "MissingRequired", "path": "activity-path/transition"}]
            )
        event = self.engine.execute(
            agent,
            ref,
            path,
            transition,
            outcome=body.get("outcome"),
            branch_decision=body.get("branch"),
            expected_seq=body.get("expected-seq"),
        )
        return 200, event.to_doc()

    def import_module(self, request, body) -> tuple[int, object]:
        agent_uuid = self.sessions.agent_for(request["token"])
        agent = self.store.ref(agent_uuid)
        if not isinstance(body, dict):
            raise SchemaViolation([{"code": "TypeViolation", "path": ""}])
        ref = modules.import_module(self.engine, agent, body)
        return 200, {"item": ref.to_doc()}

    def export_module(self, request, body) -> tuple[int, object]:
        name, version = request["params"][0], request["params"][1]
        raw = modules.export_bundle(self.store, name, version)
        return 200, _Raw(raw)


class _Raw:
    def __init__(self, data: bytes):
        self.data = data


def _make_handler(server: DdsServer):
    compiled = [(m, re.compile(p), name, mut) for m, p, name, mut in ROUTES]

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # tests stay quiet
            pass

        def _dispatch(self, method: str) -> None:
            parsed = urlparse(self.path)
            path = parsed.path
            for route_method, pattern, name, _ in compiled:
                if route_method != method:
                    continue
                match = pattern.match(path)
                if match is None:
                    continue
                self._run(name, match)
                return
            self._send(404, {"error": "NotFound", "message": path})

        def _run(self, name: str, match) -> None:
            try:
                body = self._read_body()
            except ValueError:
                self._send(400, {"error": "BadRequest", "message": "body is not JSON"})
                return
            token = None
            auth = self.headers.get("Authorization", "")
            if auth.startswith("Bearer "):
                token = auth[len("Bearer "):]
            request = {
                "params": tuple(unquote(g) for g in match.groups()),
                "query": parse_qs(urlparse(self.path).query),
                "token": token,
            }
            try:
                status, doc = getattr(server, name)(request, body)
            except DdsError as exc:
                self._send(status_for(exc), exc.to_doc())
                return
            except (ValueError, KeyError) as exc:
                self._send(400, {"error": "BadRequest", "message": str(exc)})
                return
            if isinstance(doc, _Raw):
                self._send_bytes(status, doc.data)
            else:
                self._send(status, doc)

        def _read_body(self):
            length = int(self.headers.get("Content-Length", 0) or 0)
            if length == 0:
                return None
            raw = self.rfile.read(length)
            return json.loads(raw.decode("utf-8"))

        def _send(self, status: int, doc) -> None:
            self._send_bytes(status, canonical_bytes(doc) + b"\n")

        def _send_bytes(self, status: int, data: bytes) -> None:
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self._cors()
            self.end_headers()
            self.wfile.write(data)

        def _cors(self) -> None:
            # the operator console is served from its own origin
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

        def do_GET(self) -> None:
            self._dispatch("GET")

        def do_POST(self) -> None:
            self._dispatch("POST")

        def do_OPTIONS(self) -> None:
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

    return Handler
