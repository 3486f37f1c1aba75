import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_selection
from smglearn import model
from smglearn.errors import ConfigError, DegenerateFeatureError, IntegrityError
from smglearn.replay import (ReplayBuffer, SiteExemplars, diversity, representativeness,
                             score_candidates, select_exemplars, site_prototype, top_n,
                             update_buffer)
from smglearn.sitegen import SiteSpec, generate_site


def buffer_of(*feature_sets):
    per_site = []
    for k, feats in enumerate(feature_sets):
        feats = np.asarray(feats, dtype=np.float64)
        per_site.append(SiteExemplars(k + 1, (), feats))
    return ReplayBuffer(tuple(per_site))


def test_representativeness_examples():
    assert representativeness([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0)
    assert representativeness([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert representativeness([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(DegenerateFeatureError):
        representativeness([0.0, 0.0], [1.0, 0.0])


def test_prototype_examples():
    np.testing.assert_array_equal(site_prototype([[2.0, 3.0]]), [2.0, 3.0])
    np.testing.assert_array_equal(site_prototype([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    centred = np.array([[1.0, -2.0], [-1.0, 2.0]])
    np.testing.assert_array_equal(site_prototype(centred), [0.0, 0.0])
    with pytest.raises(DegenerateFeatureError):
        score_candidates(centred, [], 1.0)
    with pytest.raises(ConfigError):
        site_prototype(np.zeros((0, 3)))


def test_diversity_examples():
    q = np.array([1.0, 0.0])
    assert diversity(q, buffer_of([[2.0, 0.0]])) == pytest.approx(-1.0)
    near = [0.9, math.sqrt(1 - 0.81)]
    far = [0.2, math.sqrt(1 - 0.04)]
    assert diversity(q, buffer_of([far, near])) == pytest.approx(-0.9)
    other = [0.1, math.sqrt(1 - 0.01)]
    assert diversity(q, buffer_of([near], [other])) == pytest.approx(-0.5)
    with pytest.raises(ConfigError):
        diversity(q, ReplayBuffer())


def test_three_subject_fixture():
    feats = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    r, v, h = score_candidates(feats, [], 1.0)
    np.testing.assert_array_equal(v, 0.0)
    np.testing.assert_array_equal(h, r)
    assert set(top_n(h, [0, 1, 2], 2)) == {0, 1}


def test_ties_break_by_subject_id():
    h = np.array([0.5, 0.9, 0.5, 0.9])
    assert top_n(h, [7, 3, 2, 5], 3) == [1, 3, 2]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 4), elements=st.floats(0.1, 3.0)),
       arrays(np.float64, (3, 4), elements=st.floats(0.1, 3.0)),
       st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_score_decomposition(feats, buf, lam):
    r, v, h = score_candidates(feats, [buf[:2], buf[2:]], lam)
    np.testing.assert_allclose(h - r, lam * v, rtol=0, atol=1e-15)
    assert np.all(r <= 1 + 1e-12) and np.all(v <= 0 + 1e-12)


def _random_fixture(rng):
    n = int(rng.integers(9, 51))  # 60% train split gives 5..30 candidates
    spec = SiteSpec(site_id=9, intensity_bias=float(rng.uniform(0, 2)),
                    noise_sigma=float(rng.uniform(0, 0.3)), n_subjects=n,
                    seed=int(rng.integers(1 << 30)))
    site = generate_site(spec)
    params = model.init_params(int(rng.integers(1 << 30)))
    per_site = []
    for k in range(int(rng.integers(0, 6))):
        other = generate_site(SiteSpec(site_id=k + 1, n_subjects=7, seed=int(rng.integers(99))))
        subs = other.train[:int(rng.integers(1, 4))]
        per_site.append(SiteExemplars(k + 1, tuple(subs),
                                      model.bottleneck_features(params, list(subs))))
    return site, params, ReplayBuffer(tuple(per_site))


def test_selection_matches_brute_force():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        site, params, buf = _random_fixture(rng)
        lam = [0.0, 0.5, 1.0][trial % 3]
        n_e = int(rng.integers(1, 4))
        ex = select_exemplars(site, params, buf, lam, n_e)
        cands = sorted(site.train, key=lambda s: s.subject_id)
        feats = model.bottleneck_features(params, cands)
        expect = brute_force_selection([s.subject_id for s in cands], feats.tolist(),
                                       [e.features.tolist() for e in buf.per_site], lam, n_e)
        assert {s.subject_id for s in ex.subjects} == expect, trial


def test_select_uses_train_split_and_caches_features(site1, params):
    ex = select_exemplars(site1, params, ReplayBuffer(), n_e=3)
    train_ids = {s.subject_id for s in site1.train}
    assert {s.subject_id for s in ex.subjects} <= train_ids
    np.testing.assert_array_equal(ex.features, model.bottleneck_features(params, list(ex.subjects)))
    np.testing.assert_array_equal(ex.v, 0.0)
    with pytest.raises(ConfigError):
        select_exemplars(site1, params, ReplayBuffer(), n_e=len(site1.train) + 1)


def test_recompute_features_switch(site1, site6):
    p_old, p_new = model.init_params(1), model.init_params(2)
    buf = update_buffer(ReplayBuffer(), select_exemplars(site1, p_old, ReplayBuffer()))
    cached = select_exemplars(site6, p_new, buf)
    fresh = select_exemplars(site6, p_new, buf, recompute_features=True)
    assert not np.array_equal(cached.v, fresh.v)


def test_buffer_growth_and_duplicates(stream_specs, params):
    buf = ReplayBuffer()
    for t, spec in enumerate(stream_specs[:4], start=1):
        buf = update_buffer(buf, select_exemplars(generate_site(spec), params, buf, n_e=2))
        assert len(buf) == t and buf.total == 2 * t
    assert buf.total == 8
    assert buf.payload_bytes() == 8 * (256 * 4 + 256)
    with pytest.raises(ConfigError):
        update_buffer(buf, select_exemplars(generate_site(stream_specs[0]), params, buf))


def test_manifest_roundtrip(stream_specs, params):
    sites = {s.site_id: generate_site(s) for s in stream_specs[:2]}
    buf = ReplayBuffer()
    for sid in (1, 2):
        buf = update_buffer(buf, select_exemplars(sites[sid], params, buf))
    back = ReplayBuffer.from_manifest(buf.manifest(), sites)
    assert back.manifest() == buf.manifest()
    for a, b in zip(back.per_site, buf.per_site):
        assert a.subject_ids == b.subject_ids
        for sid, (r, v, h) in a.scores.items():
            assert h - r == pytest.approx(v)
    bad = buf.manifest()
    bad[0]["subject_ids"] = [999]
    with pytest.raises(IntegrityError):
        ReplayBuffer.from_manifest(bad, sites)
