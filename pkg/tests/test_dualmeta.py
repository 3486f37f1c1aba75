import time

import numpy as np
import pytest

from conftest import model_quad
from oracles import QuadraticLoss, quadratic_loss_grad
from smglearn import model
from smglearn.access import SubjectPool
from smglearn.dualmeta import (Adam, MetaStepConfig, direct_sga_grad, dual_meta_grad,
                               dual_meta_step, hvp, inner_update, meta_optimize_round,
                               train_round)
from smglearn.errors import ConfigError
from smglearn.objectives import MinibatchQuad, four_gradients
from smglearn.replay import ReplayBuffer, SiteExemplars


def angle_deg(a, b):
    c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def test_inner_update_examples():
    theta = np.array([1.0, 1.0])
    np.testing.assert_allclose(inner_update(theta, np.array([2.0, -2.0]), 0.1), [0.8, 1.2])
    np.testing.assert_array_equal(inner_update(theta, np.array([5.0, 3.0]), 0.0), theta)
    g = np.random.default_rng(0).normal(size=2)
    back = inner_update(inner_update(theta, g, 0.3), -g, 0.3)
    np.testing.assert_allclose(back, theta, atol=1e-12)
    np.testing.assert_array_equal(theta, [1.0, 1.0])
    with pytest.raises(ConfigError):
        inner_update(theta, np.zeros(3), 0.1)


def test_zero_steps_reduce_to_jm_gradient(rng, params, site1, site6):
    q = model_quad(rng, site6.train, site1.train)
    fg = four_gradients(params, q)
    plain = ((fg.g_d + fg.g_p) + fg.g_ctr) + fg.g_cte
    cfg = MetaStepConfig(gamma=0.0, beta=0.0)
    assert np.max(np.abs(dual_meta_grad(params, q, cfg) - plain)) <= 1e-12
    assert np.max(np.abs(direct_sga_grad(params, q, cfg) - plain)) <= 1e-12


def test_config_validation():
    with pytest.raises(ConfigError):
        MetaStepConfig(gamma=-1.0)
    with pytest.raises(ConfigError):
        MetaStepConfig(meta_lr=0.0)
    assert MetaStepConfig().gamma == MetaStepConfig().beta == MetaStepConfig().meta_lr == 5e-4


def test_quadratic_surrogate_error_is_the_gamma_squared_term(rng):
    n = 20
    lp, ld = QuadraticLoss.random(rng, n), QuadraticLoss.random(rng, n)
    theta = rng.normal(size=n)
    g_d, g_p = ld.grad(theta), lp.grad(theta)
    exact_c = 0.5 * g_d @ lp.a @ g_d
    ratios = []
    for gamma in (1e-2, 1e-3, 1e-4):
        residual = lp.value(theta - gamma * g_d) - (lp.value(theta) - gamma * g_p @ g_d)
        ratios.append(residual / gamma ** 2)
    assert max(ratios) - min(ratios) <= 0.01 * abs(np.mean(ratios))
    assert ratios[0] == pytest.approx(exact_c, rel=1e-6)


def test_hvp_matches_closed_form(rng):
    q = QuadraticLoss.random(rng, 30)
    theta = rng.normal(size=30)
    v = rng.normal(size=30) * 7.0
    est = hvp(quadratic_loss_grad, theta, q, v)
    assert np.linalg.norm(est - q.a @ v) / np.linalg.norm(q.a @ v) < 1e-6
    np.testing.assert_array_equal(hvp(quadratic_loss_grad, theta, q, np.zeros(30)), 0.0)


def test_direct_matches_quadratic_closed_form(rng):
    n = 10
    ls = [QuadraticLoss.random(rng, n) for _ in range(4)]
    q = MinibatchQuad(*ls)
    theta = rng.normal(size=n)
    gamma, beta = 0.05, 0.02
    gd, gp, gc, ge = (l.grad(theta) for l in ls)
    a_d, a_p, a_c, a_e = (l.a for l in ls)
    expect = (gd + gp + gc + ge - gamma * (a_d @ gp + a_p @ gd) - beta * (a_c @ ge + a_e @ gc))
    got = direct_sga_grad(theta, q, MetaStepConfig(gamma=gamma, beta=beta), quadratic_loss_grad)
    np.testing.assert_allclose(got, expect, rtol=1e-7, atol=1e-9)
    # the first-order surrogate drops only the H_d g_p and H_ctr g_cte terms
    dm = dual_meta_grad(theta, q, MetaStepConfig(gamma=gamma, beta=beta), quadratic_loss_grad)
    np.testing.assert_allclose(dm - got, gamma * a_d @ gp + beta * a_c @ ge, atol=1e-9)


def test_gap_to_direct_shrinks_linearly(rng, site1, site6):
    theta = model.init_params(5)
    q = model_quad(rng, site6.train, site1.train)
    gammas = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    gaps = []
    for g in gammas:
        cfg = MetaStepConfig(gamma=g, beta=g)
        d = direct_sga_grad(theta, q, cfg)
        gaps.append(np.linalg.norm(dual_meta_grad(theta, q, cfg) - d) / np.linalg.norm(d))
    slope = np.polyfit(np.log(gammas), np.log(gaps), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_angle_to_direct_is_small(rng, site1, site6):
    cfg = MetaStepConfig()
    for k in range(10):
        theta = model.init_params(100 + k)
        q = model_quad(rng, site6.train, site1.train)
        assert angle_deg(dual_meta_grad(theta, q, cfg), direct_sga_grad(theta, q, cfg)) < 10.0


def test_direct_refuses_large_models(rng):
    q = MinibatchQuad(*(QuadraticLoss.random(rng, 2) for _ in range(4)))
    with pytest.raises(ConfigError):
        direct_sga_grad(np.zeros(60_000), q, MetaStepConfig(), quadratic_loss_grad)


def test_dual_meta_step_losses_use_shifted_params(rng, params, site1, site6):
    q = model_quad(rng, site6.train, site1.train)
    mg = dual_meta_step(params, q, 0.1, 0.2)
    lp, _ = model.loss_and_grad(params - 0.1 * mg.g_d, q.p)
    lcte, _ = model.loss_and_grad(params - 0.2 * mg.g_ctr, q.cte)
    assert mg.loss_p == lp and mg.loss_cte == lcte


def test_single_adam_step_moves_by_lr():
    theta = np.zeros(3)
    Adam(3, 0.01).step(theta, np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(theta, [-0.01, 0.01, 0.0], rtol=1e-6)


def test_iterations_must_be_positive(site1):
    with pytest.raises(ConfigError):
        train_round(model.init_params(0), SubjectPool(site1.train), None, cfg=MetaStepConfig(),
                    iterations=0, rng=np.random.default_rng(0), mode="plain")
    with pytest.raises(ConfigError):
        train_round(model.init_params(0), SubjectPool(site1.train), None, cfg=MetaStepConfig(),
                    iterations=1, rng=np.random.default_rng(0), mode="dual")


def _buffer(site, k=2):
    subs = tuple(site.train[:k])
    return ReplayBuffer((SiteExemplars(site.site_id, subs, np.ones((k, 16))),))


def test_meta_round_is_deterministic(site1, site6):
    buf = _buffer(site1)
    a = meta_optimize_round(model.init_params(0), site6, buf, MetaStepConfig(), 20, seed=3)
    b = meta_optimize_round(model.init_params(0), site6, buf, MetaStepConfig(), 20, seed=3)
    c = meta_optimize_round(model.init_params(0), site6, buf, MetaStepConfig(), 20, seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_logging_does_not_perturb_training(site1, site6):
    kw = dict(cfg=MetaStepConfig(), iterations=15, mode="dual")
    a, rows = train_round(model.init_params(0), SubjectPool(site6.train),
                          SubjectPool(site1.train[:2]), rng=np.random.default_rng(1),
                          log_every=5, **kw)
    b, _ = train_round(model.init_params(0), SubjectPool(site6.train),
                       SubjectPool(site1.train[:2]), rng=np.random.default_rng(1), **kw)
    np.testing.assert_array_equal(a, b)
    assert [r["iteration"] for r in rows] == [5, 10, 15]
    assert all(np.isfinite(r["cos_dp"]) for r in rows)


def test_first_round_learns_the_site(site1):
    theta = meta_optimize_round(model.init_params(0), site1, None, MetaStepConfig(), 2000)
    from smglearn.metrics import evaluate_subjects
    assert evaluate_subjects(theta, site1.train).dsc > 0.9


def test_dual_meta_is_cheaper_than_direct(rng, site1, site6):
    cfg = MetaStepConfig()
    theta = model.init_params(0)
    q = model_quad(rng, site6.train, site1.train)

    def per_call(f, reps=30):
        ts = []
        for _ in range(reps):
            t0 = time.perf_counter()
            f(theta, q, cfg)
            ts.append(time.perf_counter() - t0)
        return float(np.median(ts))

    per_call(dual_meta_grad, 3), per_call(direct_sga_grad, 3)
    assert per_call(dual_meta_grad) < per_call(direct_sga_grad)
