"""Segmentation scores and continual-learning aggregates.

Conventions
-----------
* ``dice`` of two empty masks is 1.
* ``asd`` is NaN when either mask is empty; aggregates skip NaNs and the
  matrix records how many subjects were skipped.
* BT is ``mean_{i<t} (M[t,i] - M[i,i])`` for both DSC and ASD, so DSC
  forgetting is negative and ASD forgetting positive.  FT is
  ``FM - reference``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from smglearn import kernels, model
from smglearn.errors import IntegrityError, ProtocolError, ShapeError

METRICS = ("dsc", "asd")
THRESHOLD = 0.5


def _pair(pred, gt):
    a = np.asarray(pred).astype(bool)
    b = np.asarray(gt).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(pred, gt) -> float:
    a, b = _pair(pred, gt)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def boundary(mask) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour (outside counts as background)."""
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def asd(pred, gt) -> float:
    a, b = _pair(pred, gt)
    if not a.any() or not b.any():
        return math.nan
    pa = np.argwhere(boundary(a)).astype(np.float64)
    pb = np.argwhere(boundary(b)).astype(np.float64)
    return 0.5 * (kernels.mean_min_distance(pa, pb) + kernels.mean_min_distance(pb, pa))


@dataclass(frozen=True)
class Entry:
    dsc: float
    asd: float
    undefined: int = 0


def evaluate_subjects(params, subjects: Sequence[model.Subject],
                      net: model.NetSpec = model.DEFAULT_NET) -> Entry:
    """Mean DSC and mean defined ASD of thresholded predictions."""
    probs = model.forward(params, subjects, net)
    dscs, asds, undefined = [], [], 0
    for p, s in zip(probs, subjects):
        pred = p > THRESHOLD
        dscs.append(dice(pred, s.mask))
        d = asd(pred, s.mask)
        if math.isnan(d):
            undefined += 1
        else:
            asds.append(d)
    return Entry(float(np.mean(dscs)), float(np.mean(asds)) if asds else math.nan, undefined)


CSV_FIELDS = ("round", "site_id", "split", "dsc", "asd", "undefined_flag")


class AccuracyMatrix:
    """Scores keyed by ``(round, site_id, split)``; rounds count from 1."""

    def __init__(self, entries: Mapping | None = None):
        self.entries: dict = dict(entries or {})

    def set(self, round_: int, site_id: int, split: str, entry: Entry) -> None:
        self.entries[(int(round_), int(site_id), split)] = entry

    def get(self, round_: int, site_id: int, split: str = "test") -> Entry:
        try:
            return self.entries[(round_, site_id, split)]
        except KeyError:
            raise IntegrityError(
                f"accuracy matrix has no entry for round {round_}, site {site_id}, {split}"
            ) from None

    def value(self, round_: int, site_id: int, metric: str, split: str = "test") -> float:
        return getattr(self.get(round_, site_id, split), metric)

    @property
    def rounds(self) -> list[int]:
        return sorted({k[0] for k in self.entries})

    def __eq__(self, other) -> bool:
        if not isinstance(other, AccuracyMatrix):
            return NotImplemented
        return _canon(self.entries) == _canon(other.entries)

    def rows(self) -> list[dict]:
        out = []
        for (r, s, split) in sorted(self.entries):
            e = self.entries[(r, s, split)]
            out.append({"round": r, "site_id": s, "split": split, "dsc": repr(e.dsc),
                        "asd": repr(e.asd), "undefined_flag": e.undefined})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path) -> "AccuracyMatrix":
        m = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                m.set(int(row["round"]), int(row["site_id"]), row["split"],
                      Entry(float(row["dsc"]), float(row["asd"]), int(row["undefined_flag"])))
        return m


def _canon(entries):
    # NaN != NaN, so compare through repr
    return {k: (repr(e.dsc), repr(e.asd), e.undefined) for k, e in entries.items()}


def _mean(values: Iterable[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def backward_measure(M: AccuracyMatrix, stream: Sequence[int], t: int) -> dict:
    if not 1 <= t <= len(stream):
        raise IntegrityError(f"round {t} outside stream of length {len(stream)}")
    return {m: _mean(M.value(t, s, m) for s in stream[:t]) for m in METRICS}


def backward_transfer(M: AccuracyMatrix, stream: Sequence[int], t: int) -> dict | None:
    """``None`` for ``t = 1``: nothing has been forgotten yet."""
    if t < 2:
        return None
    if t > len(stream):
        raise IntegrityError(f"round {t} outside stream of length {len(stream)}")
    out = {}
    for m in METRICS:
        diffs = [M.value(t, s, m) - M.value(i + 1, s, m) for i, s in enumerate(stream[:t - 1])]
        out[m] = _mean(diffs)
    return out


def forward_measure(M: AccuracyMatrix, stream: Sequence[int], held_out: int,
                    t: int | None = None) -> dict:
    if held_out in stream:
        raise ProtocolError(f"site {held_out} is in the training stream and cannot be unseen")
    t = len(stream) if t is None else t
    e = M.get(t, held_out)
    return {"dsc": e.dsc, "asd": e.asd}


def forward_transfer(fm: Mapping[str, float], reference: Mapping[str, float]) -> dict:
    if reference is None:
        raise IntegrityError("forward transfer needs a reference run")
    return {m: fm[m] - reference[m] for m in METRICS}
