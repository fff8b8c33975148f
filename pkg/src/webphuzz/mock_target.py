"""In-process HTTP target simulating a small vulnerable PHP script plus the
feedback-file protocol; the desk-scale oracle for end-to-end tests."""
from __future__ import annotations

import os
import re
import threading
import xml.etree.ElementTree as ET
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from posixpath import normpath
from urllib.parse import parse_qs, urlsplit

from .feedback import serialize_feedback
from .model import FeedbackRecord, HookEvent, ResponseSummary, Termination
from .request_engine import FEEDBACK_ID_HEADER

TARGET_FILE = "vuln.php"

LINE_READ = 1
LINE_GATE = 2
GUARD_LINES = {"s": 3, "r": 7, "u": 10, "f": 13, "e": 16, "x": 20, "o": 23}
SINK_LINES = {"s": {4, 5}, "r": {8}, "u": {11}, "f": {14}, "e": {17, 18},
              "x": {21}, "o": {24}}

DOC_ROOT = "/var/www"
VIRTUAL_FS = {"/etc/passwd", f"{DOC_ROOT}/data.txt"}

_SERIALIZED_RE = re.compile(
    r'^(N;|b:[01];|i:-?\d+;|d:-?\d+(\.\d+)?;|s:\d+:"|a:\d+:\{|O:\d+:")')


def _unbalanced_quotes(s: str) -> bool:
    return s.count("'") % 2 == 1 or s.count('"') % 2 == 1


def _shell_error(d: str):
    if _unbalanced_quotes(d):
        return "sh: 1: Syntax error: Unterminated quoted string"
    if ";" in d:
        rest = d.split(";", 1)[1].strip()
        token = rest.split()[0] if rest.split() else ""
        if token and token != "echo":
            return f"sh: 1: {token}: not found"
    return None


def _xml_error(d: str):
    if ("<!ENTITY" in d or "<!DOCTYPE" in d) and "SYSTEM" in d:
        return 'DOMDocument::loadXML(): I/O warning : failed to load external entity'
    try:
        ET.fromstring(d)
    except ET.ParseError:
        # libxml prefixes standalone-string parse errors with "in Entity"
        return "DOMDocument::loadXML(): Start tag expected, '<' not found in Entity, line: 1"
    return None


def _fs_exists(path: str) -> bool:
    if not path.startswith("/"):
        path = f"{DOC_ROOT}/{path}"
    return normpath(path) in VIRTUAL_FS


def evaluate(m: str, d: str, feedback_id: str = "") -> tuple[ResponseSummary, FeedbackRecord]:
    """Pure request semantics: control flow, simulated sinks, coverage."""
    coverage = {LINE_READ, LINE_GATE}
    hooks: list[HookEvent] = []
    status = 200
    headers = {"Content-Type": "text/html"}
    body = "<html><body>ok</body></html>"

    if m[:1] == "m":
        coverage.update(GUARD_LINES.values())
        branch = m[1:2]
        if branch in SINK_LINES:
            coverage.update(SINK_LINES[branch])

        if branch == "s":
            error = None
            if _unbalanced_quotes(d):
                error = ("You have an error in your SQL syntax; check the manual "
                         "that corresponds to your MySQL server version")
            hooks.append(HookEvent(function="mysqli_query",
                                   args=[f"SELECT * FROM t WHERE id =  {d}"],
                                   error=error, returned_false=error is not None))
        elif branch == "r":
            error = _shell_error(d)
            hooks.append(HookEvent(function="system", args=[f"echo {d}"], error=error))
        elif branch == "u":
            error = None
            if not _SERIALIZED_RE.match(d):
                error = f"unserialize(): Error at offset 0 of {len(d)} bytes"
            hooks.append(HookEvent(function="unserialize", args=[d], error=error,
                                   returned_false=error is not None))
        elif branch == "f":
            error = None
            if not _fs_exists(d):
                error = (f"file_get_contents({d}): failed to open stream: "
                         "No such file or directory")
            hooks.append(HookEvent(function="file_get_contents", args=[d],
                                   error=error, returned_false=error is not None))
        elif branch == "e":
            hooks.append(HookEvent(function="DOMDocument::loadXML",
                                   args=[d, "flags=NOENT"], error=_xml_error(d)))
        elif branch == "x":
            body = f"<html><body>{d}</body></html>"
        elif branch == "o":
            status = 302
            headers["Location"] = d.replace("\r", "").replace("\n", "")

    record = FeedbackRecord(id=feedback_id, coverage={TARGET_FILE: coverage},
                            hook_events=hooks, termination=Termination.NORMAL)
    response = ResponseSummary(status=status, headers=headers,
                               body=body.encode("utf-8"))
    return response, record


def write_feedback_file(shared_dir: str | Path, record: FeedbackRecord) -> None:
    """tmp+rename so collectors never observe a partial file."""
    path = Path(shared_dir) / f"{record.id}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_bytes(serialize_feedback(record))
    os.replace(tmp, path)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # buffer the whole response and send it in one segment; the default
    # unbuffered writes interact with Nagle/delayed-ACK into ~40ms stalls
    wbufsize = 64 * 1024
    disable_nagle_algorithm = True

    def do_GET(self):
        parts = urlsplit(self.path)
        if parts.path != "/vuln":
            self._respond(404, {"Content-Type": "text/plain"}, b"not found")
            return
        qs = parse_qs(parts.query, keep_blank_values=True)
        m = qs.get("m", [""])[0]
        d = qs.get("d", [""])[0]
        feedback_id = self.headers.get(FEEDBACK_ID_HEADER)

        response, record = evaluate(m, d, feedback_id or "")
        if feedback_id:
            # protocol ordering: the feedback file lands before the response
            write_feedback_file(self.server.shared_dir, record)
        self._respond(response.status, response.headers, response.body)

    def _respond(self, status: int, headers: dict, body: bytes):
        self.send_response(status)
        for name, value in headers.items():
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class MockTarget:
    def __init__(self, shared_dir: str | Path, port: int = 0):
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._server.shared_dir = str(shared_dir)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}/vuln"

    def start(self) -> "MockTarget":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def serve(shared_dir: str | Path, port: int = 0) -> MockTarget:
    return MockTarget(shared_dir, port).start()
