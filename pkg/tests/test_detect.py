import json
import random

import pytest

from conftest import make_candidate, make_config
from webphuzz.detect import (
    IDES_HOOKS,
    PATR_HOOKS,
    PolicyMode,
    RCE_HOOKS,
    SQLI_HOOKS,
    VulnCheckPolicy,
    XXE_HOOKS,
    check_ides,
    check_opre,
    check_patr,
    check_rce,
    check_sqli,
    check_xss,
    check_xxe,
    run_checks,
)
from webphuzz.model import (
    Confidence,
    FeedbackRecord,
    HookEvent,
    Location,
    MarkerToken,
    ResponseSummary,
    VulnClass,
)

PARAM_BASED = VulnCheckPolicy(mode=PolicyMode.PARAM_BASED)
DEFAULT = VulnCheckPolicy(mode=PolicyMode.DEFAULT)


def candidate_with(d_value, response=None, markers=()):
    c = make_candidate(values={(Location.QUERY, "m"): "ms",
                               (Location.QUERY, "d"): d_value},
                       markers=markers)
    c.response = response
    return c


def fb_with(*hooks):
    return FeedbackRecord(id="x", hook_events=list(hooks))


def test_hook_inventories():
    assert SQLI_HOOKS == {"mysqli_query", "mysqli::query", "PDO::query", "PDO::exec"}
    assert RCE_HOOKS == {"shell_exec", "system", "passthru", "exec"}
    assert IDES_HOOKS == {"unserialize"}
    assert XXE_HOOKS == {"DOMDocument::load", "DOMDocument::loadXML"}
    assert len(PATR_HOOKS) == 48
    assert {"chgrp", "unlink", "file_get_contents", "fopen", "realpath"} <= PATR_HOOKS


class TestRunChecksPolicy:
    def test_sqli_with_param_flow_confirmed(self):
        c = candidate_with("fuzz'")
        fb = fb_with(HookEvent(function="mysqli_query",
                               args=["SELECT * FROM t WHERE id = fuzz'"],
                               error="You have an error in your SQL syntax"))
        alerts = run_checks(c, fb, PARAM_BASED)
        assert [a.vuln_class for a in alerts] == [VulnClass.SQLI]
        assert alerts[0].confidence is Confidence.CONFIRMED_PARAM_FLOW
        assert alerts[0].matched_params == [("query", "d", "fuzz'")]

    def test_error_without_param_flow_policy_contrast(self):
        c = candidate_with("harmless")
        fb = fb_with(HookEvent(function="mysqli_query",
                               args=["SELECT 1 FROM hardcoded"],
                               error="You have an error in your SQL syntax"))
        assert run_checks(c, fb, PARAM_BASED) == []
        default_alerts = run_checks(c, fb, DEFAULT)
        assert [a.vuln_class for a in default_alerts] == [VulnClass.SQLI]
        assert default_alerts[0].confidence is Confidence.HEURISTIC

    def test_empty_feedback_clean_response_no_alerts(self):
        c = candidate_with("fuzz",
                           response=ResponseSummary(status=200, headers={}, body=b"ok"))
        assert run_checks(c, FeedbackRecord(id="x"), PARAM_BASED) == []


class TestSqli:
    def test_syntax_error_alerts(self):
        c = candidate_with("fuzz'")
        fb = fb_with(HookEvent(function="mysqli_query", args=["... id = fuzz'"],
                               error="You have an error in your SQL syntax"))
        assert len(check_sqli(fb, c, PARAM_BASED)) == 1

    def test_returned_false_alone_never_alerts(self):
        c = candidate_with("fuzz")
        fb = fb_with(HookEvent(function="mysqli_query", args=["... id = fuzz"],
                               returned_false=True))
        assert check_sqli(fb, c, PARAM_BASED) == []
        assert check_sqli(fb, c, DEFAULT) == []

    def test_pdo_exception_alerts(self):
        c = candidate_with("fuzz'")
        fb = fb_with(HookEvent(function="PDO::exec", args=["UPDATE ... fuzz'"],
                               exception={"class": "PDOException",
                                          "message": "SQLSTATE[42000]"}))
        assert len(check_sqli(fb, c, PARAM_BASED)) == 1


class TestRce:
    def test_unterminated_quote_stderr_alerts(self):
        c = candidate_with("fu'zz")
        fb = fb_with(HookEvent(function="system", args=["echo fu'zz"],
                               error="sh: 1: Syntax error: Unterminated quoted string"))
        assert len(check_rce(fb, c, PARAM_BASED)) == 1

    def test_clean_exit_no_alert(self):
        c = candidate_with("hello")
        fb = fb_with(HookEvent(function="system", args=["echo hello"]))
        assert check_rce(fb, c, DEFAULT) == []

    def test_not_found_pattern_alerts(self):
        c = candidate_with("fuzzcmd")
        fb = fb_with(HookEvent(function="system", args=["echo ;fuzzcmd"],
                               error="sh: 1: fuzzcmd: not found"))
        assert len(check_rce(fb, c, PARAM_BASED)) == 1


class TestPatr:
    def test_traversal_flow_confirmed(self):
        c = candidate_with("../../etc/passwd")
        fb = fb_with(HookEvent(function="file_get_contents",
                               args=["../../etc/passwd"]))
        alerts = check_patr(fb, c, PARAM_BASED)
        assert len(alerts) == 1
        assert alerts[0].confidence is Confidence.CONFIRMED_PARAM_FLOW

    def test_plain_flow_heuristic_default_only(self):
        c = candidate_with("fuzz")
        fb = fb_with(HookEvent(function="file_exists", args=["uploads/fuzz"]))
        assert check_patr(fb, c, PARAM_BASED) == []
        alerts = check_patr(fb, c, DEFAULT)
        assert len(alerts) == 1 and alerts[0].confidence is Confidence.HEURISTIC

    def test_error_without_flow_not_in_param_based(self):
        c = candidate_with("fuzz")
        fb = fb_with(HookEvent(function="fopen", args=["/hardcoded/path"],
                               error="failed to open stream"))
        assert check_patr(fb, c, PARAM_BASED) == []
        assert len(check_patr(fb, c, DEFAULT)) == 1


class TestIdes:
    def test_malformed_serialized_input_alerts(self):
        c = candidate_with('O:4:"fuzz')
        fb = fb_with(HookEvent(function="unserialize", args=['O:4:"fuzz'],
                               error="unserialize(): Error at offset 0",
                               returned_false=True))
        assert len(check_ides(fb, c, PARAM_BASED)) == 1

    def test_valid_serialized_no_alert(self):
        c = candidate_with("b:1;")
        fb = fb_with(HookEvent(function="unserialize", args=["b:1;"]))
        assert check_ides(fb, c, PARAM_BASED) == []

    def test_constant_input_no_alert_in_param_based(self):
        c = candidate_with("fuzz")
        fb = fb_with(HookEvent(function="unserialize", args=["a:1:{i:0;s:3:...}"],
                               error="unserialize(): Error at offset 0"))
        assert check_ides(fb, c, PARAM_BASED) == []


XXE_PAYLOAD = '<!DOCTYPE a [<!ENTITY e SYSTEM "file:///etc/passwd">]><a>&e;</a>'


class TestXxe:
    def test_doctype_system_with_noent_alerts(self):
        c = candidate_with(XXE_PAYLOAD)
        fb = fb_with(HookEvent(function="DOMDocument::loadXML",
                               args=[XXE_PAYLOAD, "flags=NOENT"],
                               error="I/O warning : failed to load external entity"))
        assert len(check_xxe(fb, c, PARAM_BASED)) == 1

    def test_plain_xml_with_noent_no_alert(self):
        c = candidate_with("<a/>")
        fb = fb_with(HookEvent(function="DOMDocument::loadXML",
                               args=["<a/>", "flags=NOENT"]))
        assert check_xxe(fb, c, PARAM_BASED) == []

    def test_entity_error_without_noent_no_alert(self):
        c = candidate_with(XXE_PAYLOAD)
        fb = fb_with(HookEvent(function="DOMDocument::loadXML", args=[XXE_PAYLOAD],
                               error="failed to load external entity"))
        assert check_xxe(fb, c, PARAM_BASED) == []


def xss_candidate(body, content_type="text/html", token="fzdeadbeef"):
    value = f"<script>{token}()</script>"
    marker = MarkerToken(token=token, vuln_class=VulnClass.XSS,
                         param=(Location.QUERY, "d"))
    return candidate_with(value,
                          response=ResponseSummary(
                              status=200, headers={"Content-Type": content_type},
                              body=body),
                          markers=[marker])


class TestXss:
    def test_verbatim_script_alerts(self):
        c = xss_candidate(b"<p><script>fzdeadbeef()</script></p>")
        assert len(check_xss(c, PARAM_BASED)) == 1

    def test_entity_escaped_no_alert(self):
        c = xss_candidate(b"&lt;script&gt;fzdeadbeef()&lt;/script&gt;")
        assert check_xss(c, PARAM_BASED) == []

    def test_event_handler_attribute_alerts(self):
        c = xss_candidate(b'<img src=x onerror="fzdeadbeef()">')
        assert len(check_xss(c, PARAM_BASED)) == 1

    def test_token_in_plain_text_no_alert(self):
        c = xss_candidate(b"<p>fzdeadbeef</p>")
        assert check_xss(c, PARAM_BASED) == []

    def test_json_response_alerts_by_default(self):
        c = xss_candidate(b'{"echo": "<script>fzdeadbeef()</script>"}',
                          content_type="application/json")
        assert len(check_xss(c, PARAM_BASED)) == 1

    def test_json_response_suppressed_by_flag(self):
        policy = VulnCheckPolicy(xss_respect_content_type=True)
        c = xss_candidate(b'{"echo": "<script>fzdeadbeef()</script>"}',
                          content_type="application/json")
        assert check_xss(c, policy) == []

    def test_random_bodies_never_false_match(self):
        rng = random.Random(3)
        alphabet = "abcdefz0123456789<>/=\"' "
        for _ in range(500):
            body = "".join(rng.choice(alphabet) for _ in range(200))
            if "fzdeadbeef" in body:
                continue
            c = xss_candidate(body.encode())
            assert check_xss(c, PARAM_BASED) == []


class TestOpre:
    def _redirect(self, d_value, location, status=302):
        return candidate_with(d_value,
                              response=ResponseSummary(
                                  status=status,
                                  headers={"Location": location}, body=b""))

    def test_prefix_control_alerts(self):
        c = self._redirect("http://fz.example/", "http://fz.example/")
        assert len(check_opre(c, PARAM_BASED)) == 1

    def test_value_only_in_query_no_alert(self):
        c = self._redirect("fuzz", "/home?from=fuzz")
        assert check_opre(c, PARAM_BASED) == []

    def test_status_gate(self):
        c = self._redirect("http://fz.example/", "http://fz.example/", status=200)
        assert check_opre(c, PARAM_BASED) == []

    def test_absolute_url_substring_alerts(self):
        c = self._redirect("http://evil.example/x",
                           "/jump?to=http://evil.example/x")
        assert len(check_opre(c, PARAM_BASED)) == 1

    def test_short_values_ignored(self):
        c = self._redirect("ab", "ab/page")
        assert check_opre(c, PARAM_BASED) == []


def _random_record(rng):
    functions = (list(SQLI_HOOKS) + list(RCE_HOOKS) + list(IDES_HOOKS)
                 + list(XXE_HOOKS) + sorted(PATR_HOOKS)[:6] + ["harmless_fn"])
    fuzz_val = rng.choice(["fuzz", "fuzz'", "../../etc/passwd", "ab",
                           "http://x.example/", XXE_PAYLOAD, "b:1;"])
    hooks = []
    for _ in range(rng.randint(0, 3)):
        args = []
        for _ in range(rng.randint(0, 2)):
            args.append(rng.choice([f"prefix {fuzz_val} suffix", "static",
                                    fuzz_val, "flags=NOENT"]))
        hooks.append(HookEvent(
            function=rng.choice(functions),
            args=args,
            error=rng.choice([None, "syntax error", "not found",
                              "failed to load external entity",
                              "unserialize(): Error at offset 0"]),
            exception=rng.choice([None, {"class": "E", "message": "entity oops"}]),
            returned_false=rng.random() < 0.3,
        ))
    status = rng.choice([200, 200, 302, 307, 404])
    headers = {"Content-Type": rng.choice(["text/html", "application/json"])}
    if rng.random() < 0.5:
        headers["Location"] = rng.choice([fuzz_val, f"/r?x={fuzz_val}", "/home"])
    body = rng.choice([f"<p>{fuzz_val}</p>", "<p>static</p>",
                       f"<script>{fuzz_val}</script>"]).encode()
    markers = []
    if rng.random() < 0.3:
        markers.append(MarkerToken(token="fzdeadbeef", vuln_class=VulnClass.XSS,
                                   param=(Location.QUERY, "d")))
    c = candidate_with(fuzz_val,
                       response=ResponseSummary(status=status, headers=headers,
                                                body=body),
                       markers=markers)
    return c, fb_with(*hooks)


def _alert_keys(alerts):
    return {(a.vuln_class, json.dumps(a.evidence, sort_keys=True)) for a in alerts}


def test_param_based_is_subset_of_default_over_random_records():
    rng = random.Random(1234)
    for _ in range(10_000):
        c, fb = _random_record(rng)
        pb = _alert_keys(run_checks(c, fb, PARAM_BASED))
        df = _alert_keys(run_checks(c, fb, DEFAULT))
        assert pb <= df


def test_no_alerts_without_fuzz_params_in_param_based():
    from webphuzz.model import ParamGroup, ParamMode, ParamSpec
    groups = {Location.QUERY: ParamGroup(params=[
        ParamSpec(name="d", seeds=("fuzz'",), mode=ParamMode.FIXED)])}
    c = make_candidate(make_config(groups=groups),
                       values={(Location.QUERY, "d"): "fuzz'"})
    c.response = ResponseSummary(status=302, headers={"Location": "fuzz'"}, body=b"")
    fb = fb_with(HookEvent(function="mysqli_query", args=["... fuzz'"],
                           error="SQL syntax error"))
    assert run_checks(c, fb, PARAM_BASED) == []
