"""Shared fixtures for the PHP instrumentation shim tests.

The contract tests are static and always run; everything that needs a
real interpreter is marked with `requires_php` and skips cleanly on
hosts without one.
"""
import os
import shutil
import socket
import subprocess
import time
import urllib.error
import urllib.request
from pathlib import Path

import pytest

SHIM_DIR = Path(__file__).resolve().parents[1]
PHP_DIR = SHIM_DIR / "php"
CORPUS_DIR = SHIM_DIR / "corpus"
DOCKER_DIR = SHIM_DIR / "docker"

PHP = shutil.which("php")

requires_php = pytest.mark.skipif(
    PHP is None, reason="php interpreter not available")


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class PhpServer:
    """A `php -S` built-in server over the corpus, optionally shimmed."""

    def __init__(self, shared_dir: Path, xss_store: Path, shimmed: bool = True):
        self.shared_dir = shared_dir
        self.port = _free_port()
        args = [PHP, "-S", f"127.0.0.1:{self.port}", "-t", str(CORPUS_DIR),
                "-d", "display_errors=Off", "-d", "log_errors=On"]
        if shimmed:
            args += ["-d", f"auto_prepend_file={PHP_DIR / 'prepend.php'}",
                     "-d", f"auto_append_file={PHP_DIR / 'append.php'}"]
        env = dict(os.environ)
        env.update({
            "FUZZ_SHARED_DIR": str(shared_dir),
            "FUZZ_COVERAGE_DRIVER": "xdebug",
            "FUZZ_COVERAGE_PATHS": str(CORPUS_DIR),
            "FUZZ_WP_OVERRIDES": "0",
            "FUZZ_XSS_STORE": str(xss_store),
        })
        self.proc = subprocess.Popen(args, env=env,
                                     stdout=subprocess.DEVNULL,
                                     stderr=subprocess.DEVNULL)
        self._wait_ready()

    def _wait_ready(self, timeout_s: float = 10.0) -> None:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            try:
                self.get("term_normal.php")
                return
            except (urllib.error.URLError, ConnectionError):
                time.sleep(0.05)
        raise RuntimeError("php -S did not come up")

    def get(self, path: str, feedback_id: str | None = None,
            method: str = "GET", data: bytes | None = None,
            headers: dict | None = None):
        url = f"http://127.0.0.1:{self.port}/{path}"
        req = urllib.request.Request(url, data=data, method=method)
        if feedback_id:
            req.add_header("X-Fuzzer-Covid", feedback_id)
        for name, value in (headers or {}).items():
            req.add_header(name, value)
        try:
            with urllib.request.urlopen(req, timeout=10) as resp:
                return resp.status, dict(resp.headers), resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, dict(exc.headers), exc.read()

    def wait_feedback(self, feedback_id: str, timeout_s: float = 5.0) -> bytes:
        path = self.shared_dir / f"{feedback_id}.json"
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if path.exists():
                return path.read_bytes()
            time.sleep(0.01)
        raise AssertionError(f"feedback file {path} never appeared")

    def stop(self) -> None:
        self.proc.terminate()
        self.proc.wait(timeout=10)


@pytest.fixture
def shared_dir(tmp_path):
    d = tmp_path / "shared"
    d.mkdir()
    return d


@pytest.fixture
def php_server(tmp_path, shared_dir):
    server = PhpServer(shared_dir, tmp_path / "guestbook.txt")
    yield server
    server.stop()


@pytest.fixture
def bare_server(tmp_path, shared_dir):
    """Same corpus, no shim: the baseline for transparency checks."""
    server = PhpServer(shared_dir, tmp_path / "guestbook.txt", shimmed=False)
    yield server
    server.stop()
