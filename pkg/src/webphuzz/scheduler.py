"""Scoring, energy assignment, candidate selection and the shared-volume
synchronization of coverage and dedup hashes between fuzzer instances."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .model import Candidate, FeedbackRecord
from .mutation import MutationBudget

ENERGY_MIN = 5
ENERGY_MAX = 50

_HASH_RE = re.compile(r"^[0-9a-f]{64}$")


class EmptyPool(LookupError):
    pass


@dataclass
class ScoreReport:
    new_files: int
    new_lines: int

    @property
    def score(self) -> int:
        return 10 * self.new_files + self.new_lines


class GlobalCoverageStore:
    """Cumulative (file, line) coverage plus candidate dedup hashes.

    In-memory sets are append-only. Cross-instance sharing goes through
    per-instance append-only log files under persist_dir; merge happens
    on read, so no cross-process locking is needed.
    """

    def __init__(self, persist_dir: Optional[str | Path] = None, instance_id: str = "i0"):
        self.covered: set[tuple[str, int]] = set()
        self.known_files: set[str] = set()
        self.seen_hashes: set[str] = set()
        self.persist_dir = Path(persist_dir) if persist_dir else None
        self.instance_id = instance_id
        self._pending_hashes: list[str] = []
        self._pending_cov: list[tuple[str, int]] = []
        if self.persist_dir:
            (self.persist_dir / "hashes").mkdir(parents=True, exist_ok=True)
            (self.persist_dir / "coverage").mkdir(parents=True, exist_ok=True)

    def add_hash(self, h: str) -> None:
        if h not in self.seen_hashes:
            self.seen_hashes.add(h)
            self._pending_hashes.append(h)

    def merge_coverage(self, pairs: set[tuple[str, int]]) -> None:
        for pair in pairs:
            if pair not in self.covered:
                self.covered.add(pair)
                self._pending_cov.append(pair)
        self.known_files.update(f for f, _ in pairs)

    def sync(self) -> None:
        """Flush pending records to this instance's logs, then merge in all
        other instances' logs. Partial trailing lines are skipped, so a
        crashed writer never poisons readers."""
        if not self.persist_dir:
            return
        self._append_log(self.persist_dir / "hashes" / f"{self.instance_id}.log",
                         self._pending_hashes)
        self._pending_hashes = []
        self._append_log(self.persist_dir / "coverage" / f"{self.instance_id}.log",
                         [f"{f}\t{ln}" for f, ln in self._pending_cov])
        self._pending_cov = []

        for path in sorted((self.persist_dir / "hashes").glob("*.log")):
            for line in self._read_log(path):
                if _HASH_RE.match(line):
                    self.seen_hashes.add(line)
        for path in sorted((self.persist_dir / "coverage").glob("*.log")):
            for line in self._read_log(path):
                fname, sep, lineno = line.rpartition("\t")
                if sep and lineno.isdigit():
                    self.covered.add((fname, int(lineno)))
                    self.known_files.add(fname)

    @staticmethod
    def _append_log(path: Path, records: list[str]) -> None:
        if not records:
            return
        fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        try:
            for rec in records:
                os.write(fd, (rec + "\n").encode("utf-8", errors="surrogateescape"))
        finally:
            os.close(fd)

    @staticmethod
    def _read_log(path: Path) -> list[str]:
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            return []
        lines = data.decode("utf-8", errors="surrogateescape").split("\n")
        # the element after the last newline is either "" or a partial write
        return lines[:-1]


def score_candidate(fb: FeedbackRecord, store: GlobalCoverageStore) -> ScoreReport:
    """Rate feedback by new coverage against the pre-merge store, then merge.

    A newly covered file counts 10, every new line counts 1.
    """
    pairs = fb.line_pairs()
    new_files = len({f for f, _ in pairs} - store.known_files)
    new_lines = len(pairs - store.covered)
    store.merge_coverage(pairs)
    return ScoreReport(new_files=new_files, new_lines=new_lines)


def assign_energy(report: ScoreReport, rng_seed: int = 0) -> MutationBudget:
    energy = max(ENERGY_MIN, min(ENERGY_MAX, ENERGY_MIN + report.score))
    return MutationBudget(energy=energy, rng_seed=rng_seed)


@dataclass
class _PoolEntry:
    candidate: Candidate
    score: int
    seq: int
    exhausted: bool = False
    last_touched: int = 0


@dataclass
class CandidatePool:
    """Max-score candidate pool; FIFO tie-break, exhausted entries demoted
    below everything else but kept for eventual revisiting."""
    entries: list[_PoolEntry] = field(default_factory=list)
    _seq: int = 0

    def add(self, candidate: Candidate, score: int) -> None:
        candidate.score = score
        self.entries.append(_PoolEntry(candidate, score, self._seq))
        self._seq += 1

    def __len__(self) -> int:
        return len(self.entries)

    def _entry_for(self, candidate: Candidate) -> _PoolEntry:
        for e in self.entries:
            if e.candidate is candidate:
                return e
        raise EmptyPool("candidate not in pool")

    def select_next(self) -> Candidate:
        if not self.entries:
            raise EmptyPool("pool is empty")
        live = [e for e in self.entries if not e.exhausted]
        if live:
            best = min(live, key=lambda e: (-e.score, e.seq))
        else:
            # everything exhausted: revisit round-robin so no candidate
            # monopolizes the plateau
            best = min(self.entries, key=lambda e: (e.last_touched, e.seq))
        return best.candidate

    def mark_exhausted(self, candidate: Candidate, children_scores: list[ScoreReport]) -> bool:
        entry = self._entry_for(candidate)
        fruitless = all(s.score == 0 for s in children_scores)
        entry.exhausted = fruitless
        self._seq += 1
        entry.last_touched = self._seq
        return fruitless
