import pytest

from webphuzz import mock_target
from webphuzz.model import (
    Candidate,
    EndpointConfig,
    Location,
    ParamGroup,
    ParamMode,
    ParamSpec,
)


def make_config(target_url="http://t/vuln", methods=("GET",), groups=None):
    if groups is None:
        groups = {Location.QUERY: ParamGroup(params=[
            ParamSpec(name="m", seeds=("fuzz",)),
            ParamSpec(name="d", seeds=("fuzz",)),
        ], weight=1.0)}
    return EndpointConfig(target_url=target_url, methods=list(methods),
                          param_groups=groups)


def make_candidate(cfg=None, method="GET", values=None, feedback_id="0-id",
                   markers=(), response=None):
    cfg = cfg or make_config()
    if values is None:
        values = {}
        for loc, group in cfg.param_groups.items():
            for p in group.params:
                values[(loc, p.name)] = p.seeds[0] if p.seeds else ""
    c = Candidate(endpoint=cfg, method=method, values=values,
                  feedback_id=feedback_id, markers=list(markers))
    c.response = response
    return c


def direct_transport(_worker_index):
    """Campaign transport that calls the mock target in-process."""
    def send(c):
        m = c.values.get((Location.QUERY, "m"), "")
        d = c.values.get((Location.QUERY, "d"), "")
        return mock_target.evaluate(m, d, c.feedback_id)
    return send


@pytest.fixture
def mock_config():
    return make_config()


@pytest.fixture
def shared_dir(tmp_path):
    d = tmp_path / "shared"
    d.mkdir()
    return d


# re-export for plain-function use in tests
__all__ = ["make_config", "make_candidate", "direct_transport"]
