"""Campaign setup tooling: HAR ingestion, fuzzer-config files, compose
generation, login profiles and WordPress ajax endpoint extraction."""
from __future__ import annotations

import json
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qsl, urlsplit

import yaml

from .model import (
    EndpointConfig,
    Location,
    ModelError,
    ParamGroup,
    ParamMode,
    ParamSpec,
)

GROUP_KEYS = {
    Location.QUERY: "query_params",
    Location.BODY: "body_params",
    Location.COOKIE: "cookies",
    Location.HEADER: "headers",
}

STATIC_EXTENSIONS = {".css", ".js", ".png", ".jpg", ".jpeg", ".gif", ".svg",
                     ".ico", ".woff", ".woff2", ".ttf", ".map"}
SESSION_COOKIE_RE = re.compile(r"PHPSESSID|.*session.*", re.IGNORECASE)

SKIP_HEADERS = {"host", "cookie", "content-length", "connection"}


class ConfigError(ValueError):
    pass


class LoginFailed(RuntimeError):
    pass


class EmptyCampaign(ValueError):
    pass


# ---------------------------------------------------------------------------
# fuzzer config files (JSON)

def parse_config(data: bytes | str | dict) -> EndpointConfig:
    if isinstance(data, (bytes, str)):
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON: {exc}") from exc
    else:
        obj = data
    if "target" not in obj:
        raise ConfigError("config missing 'target'")

    groups: dict[Location, ParamGroup] = {}
    for loc, key in GROUP_KEYS.items():
        raw = obj.get(key)
        if not raw:
            continue
        fixed_res = [re.compile(p) for p in raw.get("fixed", [])]
        fuzz_res = [re.compile(p) for p in raw.get("fuzz", [])]
        login_names = set(raw.get("login", []))
        params = []
        for entry in raw.get("data", []):
            name = entry["name"]
            seeds = entry.get("seeds")
            if seeds is None:
                seeds = [entry.get("value", "")]
            # marking precedence: login > fixed > fuzz > fixed-by-default
            if loc is Location.COOKIE and name in login_names:
                mode = ParamMode.LOGIN
            elif any(p.fullmatch(name) for p in fixed_res):
                mode = ParamMode.FIXED
            elif any(p.fullmatch(name) for p in fuzz_res):
                mode = ParamMode.FUZZ
            else:
                mode = ParamMode.FIXED
            if mode is ParamMode.FIXED and len(seeds) > 1:
                seeds = seeds[:1]
            params.append(ParamSpec(name=name, seeds=tuple(seeds), mode=mode,
                                    location=loc))
        groups[loc] = ParamGroup(params=params, weight=float(raw.get("weight", 0.0)))

    try:
        return EndpointConfig(
            target_url=obj["target"],
            methods=list(obj.get("methods", ["GET"])),
            param_groups=groups,
            login_profile=obj.get("login"),
            timeout_s=float(obj.get("timeout", 300.0)),
            coverage_path_constraint=obj.get("coverage_path_constraint"),
        )
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc


def emit_fuzzer_config(cfg: EndpointConfig) -> dict:
    """Serialize to the config-file shape; parse(emit(cfg)) == cfg."""
    out: dict = {"target": cfg.target_url, "login": cfg.login_profile,
                 "methods": list(cfg.methods)}
    if cfg.timeout_s != 300.0:
        out["timeout"] = cfg.timeout_s
    if cfg.coverage_path_constraint:
        out["coverage_path_constraint"] = cfg.coverage_path_constraint
    for loc, key in GROUP_KEYS.items():
        group = cfg.param_groups.get(loc)
        if group is None:
            continue
        data, fixed, fuzz, login = [], [], [], []
        for p in group.params:
            if p.mode is ParamMode.FIXED:
                data.append({"name": p.name, "value": p.seeds[0]})
                fixed.append(re.escape(p.name))
            else:
                data.append({"name": p.name, "seeds": list(p.seeds)})
                if p.mode is ParamMode.LOGIN:
                    login.append(p.name)
                else:
                    fuzz.append(re.escape(p.name))
        out[key] = {"data": data, "fixed": fixed, "fuzz": fuzz,
                    "login": login, "weight": group.weight}
    return out


def write_config(cfg: EndpointConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(emit_fuzzer_config(cfg), indent=2) + "\n")


# ---------------------------------------------------------------------------
# HAR ingestion

@dataclass
class CapturedRequest:
    method: str
    url: str
    query: dict[str, list[str]] = field(default_factory=dict)
    body: dict[str, list[str]] = field(default_factory=dict)
    body_json: bool = False
    cookies: dict[str, list[str]] = field(default_factory=dict)
    headers: dict[str, list[str]] = field(default_factory=dict)
    response_mime: Optional[str] = None

    @property
    def path(self) -> str:
        return urlsplit(self.url).path or "/"

    def param_names(self) -> frozenset:
        return frozenset(self.query) | frozenset(self.body)


@dataclass
class HarParseResult:
    requests: list[CapturedRequest] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _add(bucket: dict[str, list[str]], name: str, value: str) -> None:
    bucket.setdefault(name, [])
    if value not in bucket[name]:
        bucket[name].append(value)


def parse_har(data: bytes | str) -> HarParseResult:
    try:
        har = json.loads(data)
        entries = har["log"]["entries"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"not a HAR 1.2 document: {exc}") from exc

    result = HarParseResult()
    for entry in entries:
        req = entry.get("request", {})
        cap = CapturedRequest(method=req.get("method", "GET").upper(),
                              url=req.get("url", ""))
        for q in req.get("queryString", []):
            _add(cap.query, q["name"], q.get("value", ""))
        for ck in req.get("cookies", []):
            _add(cap.cookies, ck["name"], ck.get("value", ""))
        for h in req.get("headers", []):
            if h["name"].lower() not in SKIP_HEADERS and not h["name"].startswith(":"):
                _add(cap.headers, h["name"], h.get("value", ""))

        post = req.get("postData")
        if post:
            mime = (post.get("mimeType") or "").split(";")[0].strip().lower()
            if mime == "multipart/form-data":
                result.warnings.append(f"skipped multipart entry {cap.url}")
                continue
            if mime == "application/json":
                try:
                    body = json.loads(post.get("text") or "{}")
                except json.JSONDecodeError:
                    result.warnings.append(f"skipped unparseable JSON body {cap.url}")
                    continue
                if isinstance(body, dict):
                    for k, v in body.items():
                        _add(cap.body, str(k), v if isinstance(v, str) else json.dumps(v))
                    cap.body_json = True
            elif post.get("params"):
                for p in post["params"]:
                    _add(cap.body, p["name"], p.get("value", ""))
            elif post.get("text"):
                for k, v in parse_qsl(post["text"], keep_blank_values=True):
                    _add(cap.body, k, v)

        mime = (entry.get("response", {}).get("content", {}) or {}).get("mimeType")
        cap.response_mime = mime
        result.requests.append(cap)
    return result


def filter_endpoints(requests: list[CapturedRequest]) -> list[CapturedRequest]:
    """Drop static resources and deduplicate endpoints, merging seeds."""
    by_key: dict[tuple, CapturedRequest] = {}
    for req in requests:
        ext = Path(req.path).suffix.lower()
        if ext in STATIC_EXTENSIONS:
            continue
        mime = (req.response_mime or "").lower()
        if mime.startswith(("image/", "font/")):
            continue
        key = (req.method, req.path, tuple(sorted(req.param_names())))
        if key not in by_key:
            by_key[key] = req
        else:
            kept = by_key[key]
            for bucket, other in ((kept.query, req.query), (kept.body, req.body),
                                  (kept.cookies, req.cookies), (kept.headers, req.headers)):
                for name, values in other.items():
                    for v in values:
                        _add(bucket, name, v)
    return list(by_key.values())


@dataclass
class Markings:
    fixed: list[str] = field(default_factory=list)
    fuzz: list[str] = field(default_factory=list)
    session_cookie_re: re.Pattern = SESSION_COOKIE_RE


def _mark(name: str, default: ParamMode, markings: Markings) -> ParamMode:
    if any(re.fullmatch(p, name) for p in markings.fixed):
        return ParamMode.FIXED
    if any(re.fullmatch(p, name) for p in markings.fuzz):
        return ParamMode.FUZZ
    return default


def config_from_request(req: CapturedRequest,
                        markings: Optional[Markings] = None) -> EndpointConfig:
    """Default marking: observed params fuzz, session-looking cookies login,
    other cookies fixed. Override regexes win."""
    markings = markings or Markings()
    groups: dict[Location, ParamGroup] = {}

    def build(loc: Location, bucket: dict[str, list[str]], default: ParamMode):
        params = []
        for name, seeds in bucket.items():
            if loc is Location.COOKIE and markings.session_cookie_re.fullmatch(name):
                mode = ParamMode.LOGIN
            else:
                mode = _mark(name, default, markings)
            use = seeds[:1] if mode is ParamMode.FIXED else seeds
            params.append(ParamSpec(name=name, seeds=tuple(use), mode=mode, location=loc))
        groups[loc] = ParamGroup(params=params)

    build(Location.QUERY, req.query, ParamMode.FUZZ)
    build(Location.BODY, req.body, ParamMode.FUZZ)
    build(Location.COOKIE, req.cookies, ParamMode.FIXED)
    build(Location.HEADER, req.headers, ParamMode.FIXED)

    fuzzy = [g for g in groups.values() if g.fuzz_params()]
    for g in fuzzy:
        g.weight = 1.0 / len(fuzzy)

    base = req.url.split("?", 1)[0]
    return EndpointConfig(target_url=base, methods=[req.method], param_groups=groups)


# ---------------------------------------------------------------------------
# docker-compose generation

def emit_compose(config_paths: list[str | Path], instances: int = 1,
                 target_source: str = "./target",
                 shared_dir: str = "/shared") -> dict:
    if not config_paths:
        raise EmptyCampaign("no fuzzer configs given")
    compose: dict = {
        "version": "3",
        "services": {
            "web": {
                "image": "webphuzz/php-shim:latest",
                "volumes": [f"{target_source}:/var/www/html",
                            f"shared:{shared_dir}"],
                "environment": {"FUZZ_SHARED_DIR": shared_dir},
                "depends_on": ["db"],
            },
            "db": {
                "image": "mysql:8",
                "environment": {"MYSQL_ALLOW_EMPTY_PASSWORD": "yes",
                                "MYSQL_DATABASE": "target"},
            },
        },
        "volumes": {"shared": {"driver_opts": {"type": "tmpfs", "device": "tmpfs"}}},
    }
    for i, path in enumerate(config_paths):
        name = "fuzzer" if len(config_paths) == 1 else f"fuzzer-{i}"
        compose["services"][name] = {
            "image": "webphuzz/fuzzer:latest",
            "command": ["webphuzz", "fuzz", "--config", f"/configs/{Path(path).name}",
                        "--shared-dir", shared_dir, "--instances", str(instances)],
            "volumes": [f"{Path(path).parent}:/configs:ro", f"shared:{shared_dir}"],
            "environment": {"WEBPHUZZ_SHARED_DIR": shared_dir},
            "deploy": {"replicas": 1},
            "depends_on": ["web"],
        }
    return compose


def write_compose(compose: dict, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(compose, sort_keys=False))


# ---------------------------------------------------------------------------
# login profiles

def run_login(profile: str, env: Optional[dict] = None) -> list[tuple[str, str]]:
    """Run the external login program; it prints name=value cookie lines."""
    try:
        proc = subprocess.run([profile], env=env, capture_output=True, text=True,
                              timeout=60)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise LoginFailed(f"login script {profile!r} failed: {exc}") from exc
    if proc.returncode != 0:
        raise LoginFailed(f"login script exited {proc.returncode}: {proc.stderr.strip()}")
    cookies = []
    for line in proc.stdout.splitlines():
        name, sep, value = line.strip().partition("=")
        if sep and name:
            cookies.append((name, value))
    if not cookies:
        raise LoginFailed(f"login script {profile!r} produced no cookies")
    return cookies


# ---------------------------------------------------------------------------
# WordPress ajax endpoint extraction

_WP_ACTION_RE = re.compile(
    r"""add_action\(\s*['"]wp_ajax_(nopriv_)?([A-Za-z0-9_]+)['"]\s*,\s*['"]([A-Za-z0-9_]+)['"]""")
_WP_SUPERGLOBAL_RE = re.compile(
    r"""\$_(REQUEST|GET|POST|COOKIE)\s*\[\s*['"]([A-Za-z0-9_\-]+)['"]\s*\]""")

_SUPERGLOBAL_LOCATION = {
    "GET": Location.QUERY,
    "POST": Location.BODY,
    "REQUEST": Location.BODY,
    "COOKIE": Location.COOKIE,
}


@dataclass
class WpEndpoint:
    api_name: str
    privileged: bool
    handler: str
    params: list[tuple[Location, str]] = field(default_factory=list)
    handler_found: bool = True


def _function_body(source: str, name: str) -> Optional[str]:
    m = re.search(r"function\s+" + re.escape(name) + r"\s*\([^)]*\)\s*\{", source)
    if not m:
        return None
    depth = 1
    i = m.end()
    while i < len(source) and depth:
        if source[i] == "{":
            depth += 1
        elif source[i] == "}":
            depth -= 1
        i += 1
    return source[m.end():i - 1]


def extract_wp_endpoints(plugin_dir: str | Path) -> tuple[list[WpEndpoint], list[str]]:
    """Textual scan for wp_ajax_* registrations and the superglobal reads of
    their handlers. Regex-based on purpose; a few percent of handlers
    (closures, dynamic names) are reported as warnings."""
    sources = {}
    for path in sorted(Path(plugin_dir).rglob("*.php")):
        try:
            sources[path] = path.read_text(errors="replace")
        except OSError:
            continue
    all_source = "\n".join(sources.values())

    found: dict[str, WpEndpoint] = {}
    warnings = []
    for nopriv, api, handler in _WP_ACTION_RE.findall(all_source):
        privileged = not nopriv
        if api in found:
            found[api].privileged = found[api].privileged and privileged
            continue
        body = _function_body(all_source, handler)
        ep = WpEndpoint(api_name=api, privileged=privileged, handler=handler)
        if body is None:
            ep.handler_found = False
            warnings.append(f"handler {handler!r} for wp_ajax_{api} not found")
        else:
            seen = set()
            for sg, name in _WP_SUPERGLOBAL_RE.findall(body):
                key = (_SUPERGLOBAL_LOCATION[sg], name)
                if key not in seen and name != "action":
                    seen.add(key)
                    ep.params.append(key)
        found[api] = ep
    return list(found.values()), warnings


def wp_endpoint_config(ep: WpEndpoint, base_url: str = "http://web",
                       seed: str = "fuzz") -> EndpointConfig:
    """One config per ajax API against admin-ajax.php, action fixed."""
    has_body = any(loc is Location.BODY for loc, _ in ep.params)
    method = "POST" if has_body else "GET"
    action_loc = Location.BODY if method == "POST" else Location.QUERY
    groups: dict[Location, ParamGroup] = {
        loc: ParamGroup() for loc in {action_loc} | {l for l, _ in ep.params}
    }
    groups[action_loc].params.append(
        ParamSpec(name="action", seeds=(ep.api_name,), mode=ParamMode.FIXED,
                  location=action_loc))
    for loc, name in ep.params:
        groups[loc].params.append(
            ParamSpec(name=name, seeds=(seed,), mode=ParamMode.FUZZ, location=loc))
    fuzzy = [g for g in groups.values() if g.fuzz_params()]
    for g in fuzzy:
        g.weight = 1.0 / len(fuzzy)
    return EndpointConfig(
        target_url=f"{base_url.rstrip('/')}/wp-admin/admin-ajax.php",
        methods=[method], param_groups=groups)
