"""Domain types shared by every part of the fuzzer, plus candidate hashing."""
from __future__ import annotations

import hashlib
import re
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional
from urllib.parse import urlsplit


class ParamMode(str, Enum):
    FIXED = "fixed"
    FUZZ = "fuzz"
    LOGIN = "login"


class Location(str, Enum):
    QUERY = "query"
    BODY = "body"
    COOKIE = "cookie"
    HEADER = "header"


# Canonical group order used by candidate_hash.
HASH_LOCATION_ORDER = (Location.QUERY, Location.BODY, Location.COOKIE, Location.HEADER)

HTTP_METHODS = {"GET", "POST", "PUT", "DELETE", "OPTIONS", "TRACE", "HEAD", "PATCH"}
BODY_METHODS = {"POST", "PUT", "DELETE"}

# RFC 7230 token characters (header/cookie names); query/body names additionally
# must survive urlencoding, which the stricter token set guarantees too.
_TOKEN_RE = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    seeds: tuple[str, ...]
    mode: ParamMode = ParamMode.FUZZ
    location: Location = Location.QUERY

    def __post_init__(self):
        if not _TOKEN_RE.match(self.name):
            raise ModelError(f"illegal parameter name {self.name!r}")
        if self.mode is ParamMode.FIXED and len(self.seeds) != 1:
            raise ModelError(f"fixed param {self.name!r} needs exactly one seed")
        if self.mode is ParamMode.LOGIN and self.location is not Location.COOKIE:
            raise ModelError(f"login param {self.name!r} must be a cookie")
        object.__setattr__(self, "seeds", tuple(self.seeds))


@dataclass
class ParamGroup:
    params: list[ParamSpec] = field(default_factory=list)
    weight: float = 0.0

    def fuzz_params(self) -> list[ParamSpec]:
        return [p for p in self.params if p.mode is ParamMode.FUZZ]


@dataclass
class EndpointConfig:
    target_url: str
    methods: list[str]
    param_groups: dict[Location, ParamGroup] = field(default_factory=dict)
    login_profile: Optional[str] = None
    timeout_s: float = 300.0
    coverage_path_constraint: Optional[str] = None

    def __post_init__(self):
        self.methods = [m.upper() for m in self.methods]
        bad = set(self.methods) - HTTP_METHODS
        if bad:
            raise ModelError(f"unsupported HTTP methods: {sorted(bad)}")
        if self.timeout_s <= 0:
            raise ModelError("timeout_s must be positive")
        fuzzy = [g for g in self.param_groups.values() if g.fuzz_params()]
        if len(fuzzy) > 1:
            total = sum(g.weight for g in fuzzy)
            if abs(total - 1.0) > 1e-9:
                raise ModelError(f"fuzz group weights sum to {total}, expected 1.0")

    @property
    def path(self) -> str:
        return urlsplit(self.target_url).path or "/"

    def all_params(self) -> list[ParamSpec]:
        return [p for g in self.param_groups.values() for p in g.params]


@dataclass(frozen=True)
class MarkerToken:
    token: str
    vuln_class: "VulnClass"
    param: tuple[Location, str]

    def __post_init__(self):
        if not re.match(r"^fz[0-9a-f]{8}$", self.token):
            raise ModelError(f"malformed marker token {self.token!r}")


@dataclass
class ResponseSummary:
    status: int
    headers: dict[str, str]
    body: bytes
    truncated: bool = False

    def header(self, name: str) -> Optional[str]:
        for k, v in self.headers.items():
            if k.lower() == name.lower():
                return v
        return None


@dataclass
class Candidate:
    endpoint: EndpointConfig
    method: str
    values: dict[tuple[Location, str], str]
    feedback_id: str = ""
    parent_hash: Optional[str] = None
    score: int = 0
    markers: list[MarkerToken] = field(default_factory=list)
    response: Optional[ResponseSummary] = None

    def spec_for(self, loc: Location, name: str) -> ParamSpec:
        for p in self.endpoint.param_groups.get(loc, ParamGroup()).params:
            if p.name == name:
                return p
        raise KeyError((loc, name))

    def fuzz_items(self) -> list[tuple[Location, str, str]]:
        out = []
        for (loc, name), value in self.values.items():
            if self.spec_for(loc, name).mode is ParamMode.FUZZ:
                out.append((loc, name, value))
        return out

    def items_at(self, loc: Location) -> list[tuple[str, str]]:
        return [(n, v) for (l, n), v in self.values.items() if l is loc]


def new_feedback_id(rng=None) -> str:
    """Unique per-request ID: <unix-timestamp>-<UUIDv4>.

    With an rng the UUID bits come from it, making campaign runs with a
    fixed seed reproducible (the timestamp part is masked in comparisons).
    """
    if rng is None:
        u = uuid.uuid4()
    else:
        u = uuid.UUID(int=rng.getrandbits(128), version=4)
    return f"{int(time.time())}-{u}"


class VulnClass(str, Enum):
    SQLI = "sqli"
    RCE = "rce"
    PATR = "patr"
    IDES = "ides"
    XXE = "xxe"
    XSS = "xss"
    OPRE = "opre"


class Termination(str, Enum):
    NORMAL = "normal"
    EXIT = "exit"
    ERROR = "error"
    SHUTDOWN = "shutdown"


MAX_HOOK_ARG_LEN = 4096  # bound feedback file size; args are read on the hot path


@dataclass
class HookEvent:
    function: str
    args: list[str] = field(default_factory=list)
    error: Optional[str] = None
    exception: Optional[dict] = None  # {"class": ..., "message": ...}
    returned_false: bool = False

    def __post_init__(self):
        self.args = [a[:MAX_HOOK_ARG_LEN] for a in self.args]

    @property
    def failed(self) -> bool:
        return self.error is not None or self.exception is not None


@dataclass
class FeedbackRecord:
    id: str
    coverage: dict[str, set[int]] = field(default_factory=dict)
    hook_events: list[HookEvent] = field(default_factory=list)
    php_errors: list[dict] = field(default_factory=list)
    php_exceptions: list[dict] = field(default_factory=list)
    termination: Termination = Termination.NORMAL

    def line_pairs(self) -> set[tuple[str, int]]:
        return {(f, ln) for f, lines in self.coverage.items() for ln in lines}


class Confidence(str, Enum):
    CONFIRMED_PARAM_FLOW = "confirmed_param_flow"
    HEURISTIC = "heuristic"


@dataclass
class VulnAlert:
    vuln_class: VulnClass
    candidate_hash: str
    evidence: dict
    matched_params: list[tuple[str, str, str]] = field(default_factory=list)
    confidence: Confidence = Confidence.HEURISTIC

    def __post_init__(self):
        if self.confidence is Confidence.CONFIRMED_PARAM_FLOW and not self.matched_params:
            raise ModelError("confirmed_param_flow alert requires matched params")

    def to_json_dict(self) -> dict:
        return {
            "vuln_class": self.vuln_class.value,
            "candidate_hash": self.candidate_hash,
            "evidence": self.evidence,
            "matched_params": [list(m) for m in self.matched_params],
            "confidence": self.confidence.value,
        }


def candidate_hash(c: Candidate) -> str:
    """Deterministic SHA-256 dedup digest of a candidate's semantics.

    Covers method, URL path and all non-login parameter values; excludes
    feedback_id, score and lineage so equal test cases hash equally, and
    excludes login cookies because they vary per session.
    """
    parts = [c.method.upper(), c.endpoint.path]
    for loc in HASH_LOCATION_ORDER:
        pairs = []
        for name, value in c.items_at(loc):
            if c.spec_for(loc, name).mode is ParamMode.LOGIN:
                continue
            pairs.append(f"{name}={value}")
        parts.append("&".join(sorted(pairs)))
    blob = "\n".join(parts).encode("utf-8", errors="surrogateescape")
    return hashlib.sha256(blob).hexdigest()
