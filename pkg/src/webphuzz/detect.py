"""Per-class vulnerability detection rules over candidate feedback and
responses, plus the param-based / default alerting policies."""
from __future__ import annotations

from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Optional

from .model import (
    Candidate,
    Confidence,
    FeedbackRecord,
    HookEvent,
    VulnAlert,
    VulnClass,
    candidate_hash,
)

SQLI_HOOKS = {"mysqli_query", "mysqli::query", "PDO::query", "PDO::exec"}
RCE_HOOKS = {"shell_exec", "system", "passthru", "exec"}
IDES_HOOKS = {"unserialize"}
XXE_HOOKS = {"DOMDocument::load", "DOMDocument::loadXML"}
PATR_HOOKS = {
    "chgrp", "chmod", "chown", "clearstatcache", "copy", "disk_free_space",
    "disk_total_space", "file_exists", "file_get_contents", "file_put_contents",
    "file", "fileatime", "filectime", "filegroup", "fileinode", "filemtime",
    "fileowner", "fileperms", "filesize", "filetype", "fnmatch", "fopen",
    "is_dir", "is_executable", "is_file", "is_link", "is_readable",
    "is_uploaded_file", "is_writable", "lchgrp", "lchown", "link", "linkinfo",
    "lstat", "mkdir", "move_uploaded_file", "parse_ini_file", "parse_ini_string",
    "readfile", "readlink", "realpath", "rename", "rmdir", "stat", "symlink",
    "tempnam", "touch", "unlink",
}

DEFAULT_SHELL_ERROR_PATTERNS = (
    "syntax error",
    "not found",
    "no such file or directory",
    "permission denied",
    "unexpected token",
)

PATR_TOKENS = ("../", "/etc/")
XXE_PAYLOAD_TOKENS = ("<!ENTITY", "<!DOCTYPE")
XXE_NOENT_PSEUDO_ARG = "flags=NOENT"


class PolicyMode:
    PARAM_BASED = "param_based"
    DEFAULT = "default"


@dataclass
class VulnCheckPolicy:
    mode: str = PolicyMode.PARAM_BASED
    min_fuzz_match_len: int = 4
    shell_error_patterns: tuple[str, ...] = DEFAULT_SHELL_ERROR_PATTERNS
    xss_respect_content_type: bool = False

    def __post_init__(self):
        if self.min_fuzz_match_len < 1:
            raise ValueError("min_fuzz_match_len must be >= 1")
        if self.mode not in (PolicyMode.PARAM_BASED, PolicyMode.DEFAULT):
            raise ValueError(f"unknown policy mode {self.mode!r}")

    @property
    def param_based(self) -> bool:
        return self.mode == PolicyMode.PARAM_BASED


def _fuzz_values(c: Candidate, policy: VulnCheckPolicy) -> list[tuple[str, str, str]]:
    return [(loc.value, name, value) for loc, name, value in c.fuzz_items()
            if len(value) >= policy.min_fuzz_match_len]


def _matched_in_args(c: Candidate, hook: HookEvent, policy: VulnCheckPolicy):
    """Fuzz values that flowed into the hooked function's arguments."""
    return [(loc, name, value) for loc, name, value in _fuzz_values(c, policy)
            if any(value in arg for arg in hook.args)]


def _hook_evidence(hook: HookEvent) -> dict:
    return {"kind": "hook", "function": hook.function, "args": hook.args,
            "error": hook.error, "exception": hook.exception,
            "returned_false": hook.returned_false}


def _alert(vuln_class: VulnClass, c: Candidate, evidence: dict,
           matched: list[tuple[str, str, str]]) -> VulnAlert:
    confidence = Confidence.CONFIRMED_PARAM_FLOW if matched else Confidence.HEURISTIC
    return VulnAlert(vuln_class=vuln_class, candidate_hash=candidate_hash(c),
                     evidence=evidence, matched_params=matched, confidence=confidence)


def _failure_alerts(vuln_class: VulnClass, hook_set: set[str], fb: FeedbackRecord,
                    c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    """Shared rule for classes where a hook error/exception is the signal.

    A bare false return is never enough: plenty of legitimate code probes
    with functions that return false on ordinary failure.
    """
    alerts = []
    for hook in fb.hook_events:
        if hook.function not in hook_set or not hook.failed:
            continue
        matched = _matched_in_args(c, hook, policy)
        if policy.param_based and not matched:
            continue
        alerts.append(_alert(vuln_class, c, _hook_evidence(hook), matched))
    return alerts


def check_sqli(fb: FeedbackRecord, c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    return _failure_alerts(VulnClass.SQLI, SQLI_HOOKS, fb, c, policy)


def check_rce(fb: FeedbackRecord, c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    alerts = []
    for hook in fb.hook_events:
        if hook.function not in RCE_HOOKS:
            continue
        text = (hook.error or "").lower()
        if hook.exception:
            text += " " + str(hook.exception.get("message", "")).lower()
        if not any(pat in text for pat in policy.shell_error_patterns):
            continue
        matched = _matched_in_args(c, hook, policy)
        if policy.param_based and not matched:
            continue
        alerts.append(_alert(VulnClass.RCE, c, _hook_evidence(hook), matched))
    return alerts


def check_patr(fb: FeedbackRecord, c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    alerts = []
    for hook in fb.hook_events:
        if hook.function not in PATR_HOOKS:
            continue
        matched = _matched_in_args(c, hook, policy)
        traversal = [m for m in matched if any(t in m[2] for t in PATR_TOKENS)]
        if traversal:
            alerts.append(_alert(VulnClass.PATR, c, _hook_evidence(hook), traversal))
        elif hook.failed:
            if policy.param_based and not matched:
                continue
            alert = _alert(VulnClass.PATR, c, _hook_evidence(hook), matched)
            alert.confidence = Confidence.HEURISTIC
            alerts.append(alert)
        elif matched and not policy.param_based:
            # plain fuzz flow into a path function: the known false-positive
            # class, reported heuristically in default mode only
            alert = _alert(VulnClass.PATR, c, _hook_evidence(hook), matched)
            alert.confidence = Confidence.HEURISTIC
            alerts.append(alert)
    return alerts


def check_ides(fb: FeedbackRecord, c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    alerts = []
    for hook in fb.hook_events:
        if hook.function not in IDES_HOOKS:
            continue
        matched = _matched_in_args(c, hook, policy)
        triggered = hook.failed or (hook.returned_false and matched)
        if not triggered:
            continue
        if policy.param_based and not matched:
            continue
        alerts.append(_alert(VulnClass.IDES, c, _hook_evidence(hook), matched))
    return alerts


def _entity_error(hook: HookEvent) -> bool:
    text = (hook.error or "")
    if hook.exception:
        text += " " + str(hook.exception.get("message", ""))
    return "entity" in text.lower()


def check_xxe(fb: FeedbackRecord, c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    alerts = []
    for hook in fb.hook_events:
        if hook.function not in XXE_HOOKS:
            continue
        if XXE_NOENT_PSEUDO_ARG not in hook.args:
            continue
        matched = _matched_in_args(c, hook, policy)
        payload_flow = [m for m in matched
                        if any(t in m[2] for t in XXE_PAYLOAD_TOKENS)]
        if not (_entity_error(hook) or payload_flow):
            continue
        if policy.param_based and not matched:
            continue
        alerts.append(_alert(VulnClass.XXE, c, _hook_evidence(hook),
                             payload_flow or matched))
    return alerts


class _MarkerScan(HTMLParser):
    """Find marker tokens that ended up in an executable HTML context:
    script element bodies, on* event-handler attributes, or injected
    tag/attribute names. Entity-escaped occurrences never match."""

    def __init__(self, tokens: set[str]):
        super().__init__(convert_charrefs=True)
        self.tokens = tokens
        self.hits: set[str] = set()
        self._script_depth = 0

    def _scan(self, text: Optional[str]) -> None:
        if not text:
            return
        for tok in self.tokens:
            if tok in text:
                self.hits.add(tok)

    def handle_starttag(self, tag, attrs):
        if tag == "script":
            self._script_depth += 1
        self._scan(tag)
        for name, value in attrs:
            self._scan(name)
            if name.startswith("on"):
                self._scan(value)

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag == "script":
            self._script_depth -= 1

    def handle_endtag(self, tag):
        if tag == "script" and self._script_depth > 0:
            self._script_depth -= 1

    def handle_data(self, data):
        if self._script_depth > 0:
            self._scan(data)


def check_xss(c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    if c.response is None or not c.markers:
        return []
    content_type = (c.response.header("Content-Type") or "").split(";")[0].strip()
    if policy.xss_respect_content_type and content_type == "application/json":
        return []
    xss_markers = [m for m in c.markers if m.vuln_class is VulnClass.XSS]
    if not xss_markers:
        return []
    body = c.response.body.decode("utf-8", errors="replace")
    scanner = _MarkerScan({m.token for m in xss_markers})
    scanner.feed(body)
    scanner.close()
    alerts = []
    for m in xss_markers:
        if m.token in scanner.hits:
            loc, name = m.param
            value = c.values.get((loc, name), "")
            alerts.append(_alert(VulnClass.XSS, c,
                                 {"kind": "response", "marker": m.token,
                                  "status": c.response.status},
                                 [(loc.value, name, value)]))
    return alerts


def check_opre(c: Candidate, policy: VulnCheckPolicy) -> list[VulnAlert]:
    if c.response is None or not (300 <= c.response.status <= 399):
        return []
    location = c.response.header("Location")
    if not location:
        return []
    alerts = []
    for loc, name, value in _fuzz_values(c, policy):
        absolute = value.startswith(("http://", "https://", "ftp://"))
        if location.startswith(value) or (absolute and value in location):
            alerts.append(_alert(VulnClass.OPRE, c,
                                 {"kind": "response", "status": c.response.status,
                                  "location": location},
                                 [(loc, name, value)]))
    return alerts


def run_checks(c: Candidate, fb: FeedbackRecord,
               policy: VulnCheckPolicy) -> list[VulnAlert]:
    alerts = []
    alerts += check_sqli(fb, c, policy)
    alerts += check_rce(fb, c, policy)
    alerts += check_patr(fb, c, policy)
    alerts += check_ides(fb, c, policy)
    alerts += check_xxe(fb, c, policy)
    alerts += check_xss(c, policy)
    alerts += check_opre(c, policy)
    return alerts
