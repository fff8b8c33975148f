"""The fuzzing loop: expand seeds, select by score, mutate with energy,
execute, collect feedback, score, detect, synchronize."""
from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import requests

from .detect import VulnCheckPolicy, run_checks
from .feedback import collect
from .model import (
    Candidate,
    EndpointConfig,
    FeedbackRecord,
    Location,
    ParamGroup,
    ParamMode,
    ParamSpec,
    ResponseSummary,
    VulnAlert,
    candidate_hash,
)
from .mutation import expand_seeds, mutate_candidate
from .request_engine import (
    ConnectError,
    InvalidHeaderValue,
    RequestTimeout,
    execute,
    prepare_request,
)
from .scheduler import (
    CandidatePool,
    EmptyPool,
    GlobalCoverageStore,
    ScoreReport,
    assign_energy,
    score_candidate,
)

logger = logging.getLogger(__name__)

# transport: candidate -> (response or None, feedback or None)
Transport = Callable[[Candidate], tuple[Optional[ResponseSummary], Optional[FeedbackRecord]]]


@dataclass
class CampaignStats:
    requests_sent: int = 0
    candidates_discarded: int = 0
    feedback_missing: int = 0
    alerts: int = 0
    coverage_size: int = 0
    duration_s: float = 0.0
    exec_per_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {"stats": True, "requests_sent": self.requests_sent,
                "candidates_discarded": self.candidates_discarded,
                "feedback_missing": self.feedback_missing,
                "alerts": self.alerts, "coverage_size": self.coverage_size,
                "duration_s": round(self.duration_s, 3),
                "exec_per_s": round(self.exec_per_s, 2)}


def http_transport(shared_dir: str | Path, timeout_s: float,
                   wait_ms: int = 2000) -> Transport:
    session = requests.Session()

    def send(c: Candidate):
        try:
            prepared = prepare_request(c)
        except InvalidHeaderValue:
            return None, None
        try:
            response = execute(prepared, timeout_s, session=session)
        except (RequestTimeout, ConnectError):
            return None, None
        fb = collect(c.feedback_id, shared_dir, wait_ms=wait_ms)
        return response, fb

    return send


@dataclass
class Campaign:
    config: EndpointConfig
    shared_dir: Optional[Path] = None
    policy: VulnCheckPolicy = field(default_factory=VulnCheckPolicy)
    seed: int = 0
    instances: int = 1
    duration_s: float = 3600.0
    max_candidates: Optional[int] = None
    stop_when_classes: Optional[set] = None
    login_cookies: list[tuple[str, str]] = field(default_factory=list)
    transport_factory: Optional[Callable[[int], Transport]] = None
    report_path: Optional[Path] = None
    sync_dir: Optional[Path] = None
    # ablation switch for experiments: ignore scores entirely (uniform random
    # selection, no corpus admission gate)
    random_selection: bool = False

    def __post_init__(self):
        self.stats = CampaignStats()
        self.alerts: list[VulnAlert] = []
        self.candidate_log: list[str] = []  # hashes in evaluation order
        self.final_coverage: set = set()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._found_classes: set = set()
        self._report_fh = None

    # ------------------------------------------------------------------

    def _make_transport(self, worker: int) -> Transport:
        if self.transport_factory:
            return self.transport_factory(worker)
        if not self.shared_dir:
            raise ValueError("shared_dir required for the HTTP transport")
        return http_transport(self.shared_dir, self.config.timeout_s)

    def _apply_login(self, candidates: list[Candidate]) -> None:
        if not self.login_cookies:
            return
        specs = {}
        for name, value in self.login_cookies:
            specs[name] = ParamSpec(name=name, seeds=(value,), mode=ParamMode.LOGIN,
                                    location=Location.COOKIE)
        group = self.config.param_groups.setdefault(Location.COOKIE, ParamGroup())
        existing = {p.name for p in group.params}
        for name, spec in specs.items():
            if name not in existing:
                group.params.append(spec)
        for c in candidates:
            for name, value in self.login_cookies:
                c.values[(Location.COOKIE, name)] = value

    def _should_stop(self) -> bool:
        if self._stop.is_set():
            return True
        if self.max_candidates is not None and self.stats.requests_sent >= self.max_candidates:
            self._stop.set()
        if self.stop_when_classes and self.stop_when_classes <= self._found_classes:
            self._stop.set()
        return self._stop.is_set()

    def _record_alerts(self, alerts: list[VulnAlert]) -> None:
        if not alerts:
            return
        with self._lock:
            self.alerts.extend(alerts)
            self.stats.alerts += len(alerts)
            for a in alerts:
                self._found_classes.add(a.vuln_class)
                if self._report_fh:
                    self._report_fh.write(json.dumps(a.to_json_dict()) + "\n")
                    self._report_fh.flush()

    def _evaluate(self, c: Candidate, transport: Transport,
                  store: GlobalCoverageStore) -> ScoreReport:
        response, fb = transport(c)
        with self._lock:
            self.stats.requests_sent += 1
            self.candidate_log.append(candidate_hash(c))
        if response is None:
            with self._lock:
                self.stats.candidates_discarded += 1
            return ScoreReport(0, 0)
        c.response = response
        if fb is None:
            with self._lock:
                self.stats.feedback_missing += 1
            report = ScoreReport(0, 0)
            fb = FeedbackRecord(id=c.feedback_id)
        else:
            report = score_candidate(fb, store)
        self._record_alerts(run_checks(c, fb, self.policy))
        return report

    def _worker(self, index: int, seeds: list[Candidate]) -> None:
        transport = self._make_transport(index)
        rng = random.Random(self.seed * 1000003 + index)
        store = GlobalCoverageStore(self.sync_dir, instance_id=f"w{index}")
        store.sync()
        pool = CandidatePool()
        try:
            self._worker_loop(seeds, transport, rng, store, pool)
        finally:
            with self._lock:
                self.final_coverage |= store.covered
                self.stats.coverage_size = max(self.stats.coverage_size,
                                               len(self.final_coverage))

    def _worker_loop(self, seeds, transport, rng, store, pool) -> None:
        for c in seeds:
            if self._should_stop():
                return
            h = candidate_hash(c)
            if h in store.seen_hashes:
                continue
            store.add_hash(h)
            report = self._evaluate(c, transport, store)
            pool.add(c, report.score)
        store.sync()

        while not self._should_stop():
            if self.random_selection:
                if not pool.entries:
                    return
                parent = rng.choice(pool.entries).candidate
            else:
                try:
                    parent = pool.select_next()
                except EmptyPool:
                    return
            budget = assign_energy(ScoreReport(0, parent.score),
                                   rng_seed=rng.getrandbits(63))
            children = mutate_candidate(parent, budget, store)
            reports = []
            for child in children:
                if self._should_stop():
                    break
                report = self._evaluate(child, transport, store)
                reports.append(report)
                # corpus admission: only coverage-finding children are worth
                # mutating further, everything else would drown the pool.
                # The ablated variant skips the gate along with scored
                # selection, keeping everything.
                if self.random_selection or report.score > 0:
                    pool.add(child, report.score)
            if not self.random_selection:
                pool.mark_exhausted(parent, reports)
            try:
                store.sync()
            except OSError as exc:
                logger.warning("sync failed, continuing with stale store: %s", exc)

    # ------------------------------------------------------------------

    def run(self) -> CampaignStats:
        start = time.monotonic()
        if self.report_path:
            self.report_path.parent.mkdir(parents=True, exist_ok=True)
            self._report_fh = open(self.report_path, "w")

        seeds = expand_seeds(self.config)
        self._apply_login(seeds)

        timer = threading.Timer(self.duration_s, self._stop.set)
        timer.daemon = True
        timer.start()
        try:
            if self.instances == 1:
                self._worker(0, seeds)
            else:
                threads = []
                for i in range(self.instances):
                    t = threading.Thread(target=self._worker,
                                         args=(i, seeds[i::self.instances]),
                                         daemon=True)
                    threads.append(t)
                    t.start()
                for t in threads:
                    t.join()
        finally:
            timer.cancel()
            self.stats.duration_s = time.monotonic() - start
            if self.stats.duration_s > 0:
                self.stats.exec_per_s = self.stats.requests_sent / self.stats.duration_s
            if self._report_fh:
                self._report_fh.write(json.dumps(self.stats.to_json_dict()) + "\n")
                self._report_fh.close()
                self._report_fh = None
        return self.stats
