"""Turn candidates into concrete HTTP requests and execute them."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional
from urllib.parse import quote, urlsplit, urlunsplit

import requests

from .model import BODY_METHODS, Candidate, Location, ResponseSummary

FEEDBACK_ID_HEADER = "X-Fuzzer-Covid"
MAX_BODY_BYTES = 1024 * 1024
CONNECT_ATTEMPTS = 3
CONNECT_BACKOFF_S = 0.2


class BodyEncoding(str, Enum):
    URLENCODED = "urlencoded"
    JSON = "json"
    NONE = "none"


class InvalidHeaderValue(ValueError):
    """A fuzzed header/cookie value grew a CR/LF; the candidate is dropped
    instead of encoded (header injection is not a supported vuln class)."""


class RequestTimeout(RuntimeError):
    pass


class ConnectError(RuntimeError):
    pass


@dataclass
class PreparedRequest:
    method: str
    url: str
    headers: dict[str, str] = field(default_factory=dict)
    body: Optional[bytes] = None
    body_encoding: BodyEncoding = BodyEncoding.NONE


def _enc(s: str) -> str:
    return quote(s, safe="")


def prepare_request(c: Candidate) -> PreparedRequest:
    """Pure candidate -> request translation (replayable, no hidden state)."""
    scheme, netloc, path, _, _ = urlsplit(c.endpoint.target_url)

    headers = {FEEDBACK_ID_HEADER: c.feedback_id}
    for name, value in c.items_at(Location.HEADER):
        if "\r" in value or "\n" in value:
            raise InvalidHeaderValue(f"CR/LF in header {name!r}")
        headers[name] = value

    cookies = c.items_at(Location.COOKIE)
    if cookies:
        for name, value in cookies:
            if "\r" in value or "\n" in value:
                raise InvalidHeaderValue(f"CR/LF in cookie {name!r}")
        headers["Cookie"] = "; ".join(f"{n}={v}" for n, v in cookies)

    query = "&".join(f"{_enc(n)}={_enc(v)}" for n, v in c.items_at(Location.QUERY))
    url = urlunsplit((scheme, netloc, path or "/", query, ""))

    body = None
    encoding = BodyEncoding.NONE
    body_params = c.items_at(Location.BODY)
    if c.method in BODY_METHODS and body_params:
        if (headers.get("Content-Type") or "").split(";")[0].strip() == "application/json":
            body = json.dumps(dict(body_params)).encode("utf-8", errors="surrogateescape")
            encoding = BodyEncoding.JSON
        else:
            body = "&".join(f"{_enc(n)}={_enc(v)}" for n, v in body_params).encode("ascii")
            encoding = BodyEncoding.URLENCODED
            headers.setdefault("Content-Type", "application/x-www-form-urlencoded")

    return PreparedRequest(method=c.method, url=url, headers=headers,
                           body=body, body_encoding=encoding)


def execute(r: PreparedRequest, timeout_s: float,
            session: Optional[requests.Session] = None) -> ResponseSummary:
    """Send the request. Redirects are never followed (open-redirect
    detection needs the raw 3xx), bodies are capped at 1 MiB."""
    sess = session or requests.Session()
    last_exc = None
    for attempt in range(CONNECT_ATTEMPTS):
        try:
            resp = sess.request(r.method, r.url, headers=r.headers, data=r.body,
                                timeout=timeout_s, allow_redirects=False, stream=True)
            break
        except requests.exceptions.Timeout as exc:
            raise RequestTimeout(str(exc)) from exc
        except requests.exceptions.ConnectionError as exc:
            last_exc = exc
            time.sleep(CONNECT_BACKOFF_S * (attempt + 1))
    else:
        raise ConnectError(str(last_exc)) from last_exc

    try:
        body = resp.raw.read(MAX_BODY_BYTES + 1, decode_content=True)
    except requests.exceptions.RequestException as exc:
        raise RequestTimeout(str(exc)) from exc
    finally:
        resp.close()
    truncated = len(body) > MAX_BODY_BYTES
    return ResponseSummary(status=resp.status_code, headers=dict(resp.headers),
                           body=body[:MAX_BODY_BYTES], truncated=truncated)
