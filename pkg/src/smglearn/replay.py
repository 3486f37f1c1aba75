"""Replay buffer and exemplar selection.

After each round the incoming site contributes ``n_e`` training subjects,
ranked by a hybrid score

    H(s) = R(s) + lam * V(s)

where ``R`` is the cosine similarity of the subject's bottleneck feature to
its site prototype (mean feature over the site's training subjects) and ``V``
averages, over the buffered sites, the minimum of ``-cos`` to that site's
exemplars.  With an empty buffer ``V`` is defined as 0.

Exemplar features are cached when the exemplar is stored; later rounds use
the cached values unless ``recompute_features`` is requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from smglearn import model
from smglearn.errors import ConfigError, DegenerateFeatureError, IntegrityError
from smglearn.model import Subject
from smglearn.sitegen import SiteDataset


def _norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def representativeness(feature, prototype) -> float:
    a = np.asarray(feature, dtype=np.float64)
    b = np.asarray(prototype, dtype=np.float64)
    na, nb = _norm(a), _norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("cosine similarity of a zero-norm feature")
    return float(np.dot(a, b) / (na * nb))


def site_prototype(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ConfigError("prototype needs a non-empty (n, k) feature array")
    return f.mean(axis=0)


@dataclass(frozen=True)
class SiteExemplars:
    site_id: int
    subjects: tuple
    features: np.ndarray
    scores: dict = field(default_factory=dict)  # subject_id -> (R, V, H)

    @property
    def subject_ids(self) -> list[int]:
        return [s.subject_id for s in self.subjects]


@dataclass(frozen=True)
class ReplayBuffer:
    per_site: tuple = ()

    def __len__(self) -> int:
        return len(self.per_site)

    @property
    def site_ids(self) -> list[int]:
        return [e.site_id for e in self.per_site]

    @property
    def total(self) -> int:
        return sum(len(e.subjects) for e in self.per_site)

    def subjects(self) -> list[Subject]:
        return [s for e in self.per_site for s in e.subjects]

    def payload_bytes(self) -> int:
        return sum(s.nbytes for s in self.subjects())

    def manifest(self) -> list[dict]:
        out = []
        for e in self.per_site:
            out.append({
                "site_id": e.site_id,
                "subject_ids": e.subject_ids,
                "features": [[float(v) for v in row] for row in e.features],
                "scores": [
                    dict(zip(("R", "V", "H"), e.scores[sid])) | {"subject_id": sid}
                    for sid in e.subject_ids if sid in e.scores
                ],
            })
        return out

    @classmethod
    def from_manifest(cls, entries: Sequence[Mapping],
                      datasets: Mapping[int, SiteDataset]) -> "ReplayBuffer":
        per_site = []
        for ent in entries:
            ds = datasets[ent["site_id"]]
            by_id = {s.subject_id: s for s in ds.train}
            try:
                subs = tuple(by_id[i] for i in ent["subject_ids"])
            except KeyError as exc:
                raise IntegrityError(f"manifest exemplar {exc} not in site train split") from exc
            scores = {sc["subject_id"]: (sc["R"], sc["V"], sc["H"]) for sc in ent["scores"]}
            per_site.append(SiteExemplars(ent["site_id"], subs,
                                          np.array(ent["features"], dtype=np.float64), scores))
        return cls(tuple(per_site))


def _unit_rows(f: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise DegenerateFeatureError("zero-norm feature in cosine computation")
    return f / n


def diversity(feature, buffer: ReplayBuffer, features_by_site=None) -> float:
    if len(buffer) == 0:
        raise ConfigError("diversity is undefined for an empty buffer; use V = 0")
    f = _unit_rows(np.asarray(feature, dtype=np.float64)[None, :])[0]
    per_site = features_by_site or [e.features for e in buffer.per_site]
    total = 0.0
    for feats in per_site:
        total += float(np.min(-(_unit_rows(feats) @ f)))
    return total / len(per_site)


def score_candidates(features: np.ndarray, buffer_features: Sequence[np.ndarray],
                     lam: float):
    """Vectorised ``(R, V, H)`` for every row of ``features``."""
    f = np.asarray(features, dtype=np.float64)
    proto = site_prototype(f)
    if _norm(proto) == 0.0:
        raise DegenerateFeatureError("site prototype has zero norm")
    fu = _unit_rows(f)
    r = fu @ (proto / _norm(proto))
    if len(buffer_features) == 0:
        v = np.zeros(f.shape[0])
    else:
        v = np.zeros(f.shape[0])
        for feats in buffer_features:
            v += np.min(-(fu @ _unit_rows(np.asarray(feats)).T), axis=1)
        v /= len(buffer_features)
    return r, v, r + lam * v


def top_n(h: np.ndarray, ids: Sequence[int], n_e: int) -> list[int]:
    """Indices of the ``n_e`` largest scores; ties by ascending subject id."""
    order = sorted(range(len(ids)), key=lambda i: (-h[i], ids[i]))
    return order[:n_e]


@dataclass(frozen=True)
class ExemplarSet:
    site_id: int
    subjects: tuple
    features: np.ndarray
    r: np.ndarray   # scores of the chosen exemplars, aligned with ``subjects``
    v: np.ndarray
    h: np.ndarray

    def as_site_entry(self) -> SiteExemplars:
        scores = {s.subject_id: (float(r), float(v), float(h))
                  for s, r, v, h in zip(self.subjects, self.r, self.v, self.h)}
        return SiteExemplars(self.site_id, self.subjects, self.features, scores)


def select_exemplars(site_data: SiteDataset, params, buffer: ReplayBuffer,
                     lam: float = 1.0, n_e: int = 2, *,
                     recompute_features: bool = False,
                     net: model.NetSpec = model.DEFAULT_NET) -> ExemplarSet:
    candidates = sorted(site_data.train, key=lambda s: s.subject_id)
    if len(candidates) < n_e:
        raise ConfigError(
            f"site {site_data.site_id}: {len(candidates)} candidates < n_e={n_e}"
        )
    if n_e < 1:
        raise ConfigError("n_e must be >= 1")
    feats = model.bottleneck_features(params, candidates, net)
    if recompute_features:
        buf_feats = [model.bottleneck_features(params, list(e.subjects), net)
                     for e in buffer.per_site]
    else:
        buf_feats = [e.features for e in buffer.per_site]
    r, v, h = score_candidates(feats, buf_feats, lam)
    ids = [s.subject_id for s in candidates]
    chosen = top_n(h, ids, n_e)
    return ExemplarSet(site_data.site_id, tuple(candidates[i] for i in chosen),
                       feats[chosen].copy(), r[chosen], v[chosen], h[chosen])


def update_buffer(buffer: ReplayBuffer, exemplars: ExemplarSet) -> ReplayBuffer:
    if exemplars.site_id in buffer.site_ids:
        raise ConfigError(f"site {exemplars.site_id} is already in the replay buffer")
    return ReplayBuffer(buffer.per_site + (exemplars.as_site_entry(),))
