"""Retrieval and parsing of per-request feedback files from the shared volume."""
from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Optional

from .model import FeedbackRecord, HookEvent, Termination

DEFAULT_WAIT_MS = 2000
POLL_INTERVAL_S = 0.005


class ParseError(ValueError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


def parse_feedback(data: bytes) -> FeedbackRecord:
    """Parse one feedback file. Unknown fields are ignored so the shim can
    grow the schema without breaking older fuzzers."""
    try:
        obj = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", exc.start) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(obj, dict):
        raise ParseError("top-level value is not an object")

    try:
        coverage = {}
        for fname, lines in (obj.get("coverage") or {}).items():
            coverage[str(fname)] = {int(ln) for ln in lines if int(ln) >= 1}
        hooks = []
        for h in obj.get("hooks") or []:
            hooks.append(HookEvent(
                function=str(h["function"]),
                args=[str(a) for a in h.get("args") or []],
                error=h.get("error"),
                exception=h.get("exception"),
                returned_false=bool(h.get("returned_false", False)),
            ))
        record = FeedbackRecord(
            id=str(obj.get("id", "")),
            coverage=coverage,
            hook_events=hooks,
            php_errors=list(obj.get("php_errors") or []),
            php_exceptions=list(obj.get("php_exceptions") or []),
            termination=Termination(obj.get("termination", "normal")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"schema violation: {exc}") from exc
    return record


def serialize_feedback(record: FeedbackRecord) -> bytes:
    """Inverse of parse_feedback; used by the mock target and tests."""
    obj = {
        "id": record.id,
        "coverage": {f: sorted(lines) for f, lines in record.coverage.items()},
        "hooks": [
            {"function": h.function, "args": h.args, "error": h.error,
             "exception": h.exception, "returned_false": h.returned_false}
            for h in record.hook_events
        ],
        "php_errors": record.php_errors,
        "php_exceptions": record.php_exceptions,
        "termination": record.termination.value,
    }
    return json.dumps(obj).encode("utf-8")


def collect(feedback_id: str, shared_dir: str | Path,
            wait_ms: int = DEFAULT_WAIT_MS) -> Optional[FeedbackRecord]:
    """Poll for <shared_dir>/<feedback_id>.json; parse and delete it.

    Returns None when the file never shows up within wait_ms. Malformed
    files are quarantined under <shared_dir>/bad/ instead of deleted.
    """
    path = Path(shared_dir) / f"{feedback_id}.json"
    deadline = time.monotonic() + wait_ms / 1000.0
    while True:
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            if time.monotonic() >= deadline:
                return None
            time.sleep(POLL_INTERVAL_S)
            continue
        try:
            record = parse_feedback(data)
        except ParseError:
            bad_dir = Path(shared_dir) / "bad"
            bad_dir.mkdir(exist_ok=True)
            path.replace(bad_dir / path.name)
            raise
        path.unlink(missing_ok=True)
        return record
