"""Operator-facing command line: hargen, compose, fuzz, wpext."""
from __future__ import annotations

import csv
import json
import re
import sys
from pathlib import Path

import click

from . import config_tools
from .campaign import Campaign
from .config_tools import (
    ConfigError,
    EmptyCampaign,
    LoginFailed,
    Markings,
    config_from_request,
    emit_compose,
    extract_wp_endpoints,
    filter_endpoints,
    parse_config,
    parse_har,
    run_login,
    wp_endpoint_config,
    write_compose,
    write_config,
)
from .detect import PolicyMode, VulnCheckPolicy
from .model import VulnClass
from .request_engine import (
    ConnectError,
    PreparedRequest,
    RequestTimeout,
    execute,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "endpoint"


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise click.ClickException(
            f"{path} exists; pass --force to overwrite")


@click.group()
def main():
    """Coverage-guided greybox fuzzer for HTTP/PHP web applications."""


@main.command()
@click.argument("har_path", type=click.Path(exists=True, path_type=Path))
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("configs"))
@click.option("--fixed-regex", multiple=True, help="Mark matching params fixed.")
@click.option("--fuzz-regex", multiple=True, help="Mark matching params fuzz.")
@click.option("--force", is_flag=True)
def hargen(har_path: Path, out_dir: Path, fixed_regex, fuzz_regex, force):
    """Turn a browser HAR capture into per-endpoint fuzzer configs."""
    try:
        result = parse_har(har_path.read_bytes())
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    for w in result.warnings:
        click.echo(f"warning: {w}", err=True)

    kept = filter_endpoints(result.requests)
    dropped = len(result.requests) - len(kept)
    out_dir.mkdir(parents=True, exist_ok=True)
    markings = Markings(fixed=list(fixed_regex), fuzz=list(fuzz_regex))
    written = 0
    for req in kept:
        cfg = config_from_request(req, markings)
        if not any(g.fuzz_params() for g in cfg.param_groups.values()):
            click.echo(f"warning: no fuzz params for {req.method} {req.path}", err=True)
        path = out_dir / f"{_safe_name(req.method + '_' + req.path)}.json"
        _refuse_overwrite(path, force)
        write_config(cfg, path)
        written += 1
    click.echo(f"endpoints kept: {written}  dropped: {dropped}")
    if written == 0:
        click.echo("warning: zero endpoints survived filtering", err=True)
    sys.exit(EXIT_OK)


@main.command()
@click.argument("config_paths", nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path),
              default=Path("docker-compose.yml"))
@click.option("--instances", "-n", default=1, show_default=True)
@click.option("--target-source", default="./target")
@click.option("--force", is_flag=True)
def compose(config_paths, out_path: Path, instances, target_source, force):
    """Generate a docker-compose file for a fuzzing campaign."""
    try:
        doc = emit_compose(list(config_paths), instances=instances,
                           target_source=target_source)
    except EmptyCampaign as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    _refuse_overwrite(out_path, force)
    write_compose(doc, out_path)
    click.echo(f"wrote {out_path}")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--shared-dir", envvar="WEBPHUZZ_SHARED_DIR",
              type=click.Path(path_type=Path), required=True)
@click.option("--instances", "-n", default=1, show_default=True)
@click.option("--timeout-s", default=300.0, show_default=True)
@click.option("--duration-s", default=3600.0, show_default=True)
@click.option("--policy", type=click.Choice([PolicyMode.PARAM_BASED, PolicyMode.DEFAULT]),
              default=PolicyMode.PARAM_BASED, show_default=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path),
              default=Path("report.jsonl"))
@click.option("--seed", default=0, show_default=True)
@click.option("--max-candidates", type=int, default=None)
@click.option("--stop-when-classes", default=None,
              help="Comma-separated vuln classes; stop once all are alerted.")
@click.option("--force", is_flag=True)
def fuzz(config_path: Path, shared_dir: Path, instances, timeout_s, duration_s,
         policy, report_path: Path, seed, max_candidates, stop_when_classes, force):
    """Run the fuzzing loop against a configured endpoint."""
    try:
        cfg = parse_config(config_path.read_bytes())
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    cfg.timeout_s = timeout_s
    _refuse_overwrite(report_path, force)
    shared_dir.mkdir(parents=True, exist_ok=True)

    # startup reachability probe; any HTTP status counts as alive
    try:
        execute(PreparedRequest(method="GET", url=cfg.target_url),
                timeout_s=min(timeout_s, 10.0))
    except (ConnectError, RequestTimeout) as exc:
        click.echo(f"fatal: target {cfg.target_url} unreachable: {exc}", err=True)
        sys.exit(EXIT_ERROR)

    login_cookies = []
    if cfg.login_profile:
        try:
            login_cookies = run_login(cfg.login_profile)
        except LoginFailed as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ERROR)

    classes = None
    if stop_when_classes:
        try:
            classes = {VulnClass(v.strip()) for v in stop_when_classes.split(",")}
        except ValueError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ERROR)

    campaign = Campaign(
        config=cfg,
        shared_dir=shared_dir,
        policy=VulnCheckPolicy(mode=policy),
        seed=seed,
        instances=instances,
        duration_s=duration_s,
        max_candidates=max_candidates,
        stop_when_classes=classes,
        login_cookies=login_cookies,
        report_path=report_path,
        sync_dir=shared_dir / "sync",
    )
    try:
        stats = campaign.run()
    except Exception as exc:  # startup failures, invalid config at runtime
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(json.dumps(stats.to_json_dict()))
    sys.exit(EXIT_FINDINGS if stats.alerts else EXIT_OK)


@main.command()
@click.argument("plugin_dir", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("wp-configs"))
@click.option("--base-url", default="http://web")
@click.option("--force", is_flag=True)
def wpext(plugin_dir: Path, out_dir: Path, base_url, force):
    """Extract wp_ajax_* endpoints from WordPress plugin source."""
    if not plugin_dir.is_dir():
        click.echo(f"error: {plugin_dir} is not a readable directory", err=True)
        sys.exit(EXIT_ERROR)
    endpoints, warnings = extract_wp_endpoints(plugin_dir)
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "endpoints.csv"
    _refuse_overwrite(csv_path, force)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["api_name", "privileged", "handler", "params"])
        for ep in endpoints:
            writer.writerow([ep.api_name, ep.privileged, ep.handler,
                             " ".join(f"{loc.value}:{n}" for loc, n in ep.params)])

    for ep in endpoints:
        cfg = wp_endpoint_config(ep, base_url=base_url)
        path = out_dir / f"wp_ajax_{_safe_name(ep.api_name)}.json"
        _refuse_overwrite(path, force)
        write_config(cfg, path)
    click.echo(f"extracted {len(endpoints)} endpoints ({len(warnings)} warnings)")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
