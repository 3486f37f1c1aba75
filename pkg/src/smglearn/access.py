"""Instrumented data access.

Training code never touches a :class:`~smglearn.sitegen.SiteDataset`
directly; it draws minibatches from :class:`SubjectPool` objects, and every
draw is recorded in an :class:`AccessLog` under the current phase
(``train``, ``select``, ``eval``, ``diagnostic``) and round.  The harness
uses the log to prove the storage contract: during training on round ``t``
the only previous-site subjects ever read are the buffered exemplars.
"""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from smglearn.errors import ConfigError
from smglearn.model import Batch, Subject


class AccessLog:
    def __init__(self):
        self.phase = "idle"
        self.round = 0
        # (phase, round) -> {(site_id, subject_id): nbytes}
        self._reads: dict = defaultdict(dict)
        self._counts: dict = defaultdict(lambda: defaultdict(int))

    @contextmanager
    def context(self, phase: str, round_: int):
        prev = (self.phase, self.round)
        self.phase, self.round = phase, round_
        try:
            yield self
        finally:
            self.phase, self.round = prev

    def record(self, subjects: Iterable[Subject]) -> None:
        key = (self.phase, self.round)
        reads, counts = self._reads[key], self._counts[key]
        for s in subjects:
            reads[s.key] = s.nbytes
            counts[s.key] += 1

    def subjects_read(self, phase: str, round_: int) -> dict:
        """Distinct ``(site_id, subject_id) -> nbytes`` read in one phase/round."""
        return dict(self._reads.get((phase, round_), {}))

    def read_counts(self, phase: str, round_: int) -> dict:
        return dict(self._counts.get((phase, round_), {}))

    def previous_site_reads(self, phase: str, round_: int, current_site: int) -> dict:
        return {k: v for k, v in self.subjects_read(phase, round_).items()
                if k[0] != current_site}


class SubjectPool:
    """Read-only pool of subjects that records every minibatch it serves."""

    def __init__(self, subjects: Sequence[Subject], log: AccessLog | None = None):
        if len(subjects) == 0:
            raise ConfigError("subject pool must be non-empty")
        self.subjects = tuple(subjects)
        self.log = log
        self._all = Batch.from_subjects(self.subjects, self.subjects[0].image.shape)

    def __len__(self) -> int:
        return len(self.subjects)

    def draw(self, rng: np.random.Generator, k: int) -> Batch:
        """``k`` subjects; sampled without replacement unless the pool is smaller."""
        replace = len(self.subjects) < k
        idx = np.sort(rng.choice(len(self.subjects), size=k, replace=replace))
        if self.log is not None:
            self.log.record(self.subjects[i] for i in idx)
        return self._all.take(idx)

    def everything(self) -> Batch:
        if self.log is not None:
            self.log.record(self.subjects)
        return self._all
