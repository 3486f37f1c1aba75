"""First-order (Dual-Meta) optimisation of the gradient-alignment objective.

Each iteration takes two raw inner steps from the same parameters,

    theta_d   = theta - gamma * g_d          (incoming-site branch)
    theta_ctr = theta - beta  * g_ctr        (virtual-train branch)

and the meta-gradient is

    grad L_d(theta) + grad L_p(theta_d) + grad L_ctr(theta) + grad L_cte(theta_ctr)

where the gradients at shifted parameters are taken with respect to the
shifted parameters (no differentiation through the inner step).  Adam applies
the meta-gradient.

:func:`direct_sga_grad` is the second-order reference: it differentiates the
alignment objective exactly, using central-difference Hessian-vector products.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from smglearn import kernels, model
from smglearn.access import SubjectPool
from smglearn.errors import ConfigError, NumericOverflowError
from smglearn.objectives import (LossGrad, MinibatchQuad, alignment_report,
                                 four_gradients, make_quad)

MAX_DIRECT_PARAMS = 50_000
HVP_EPS = 1e-4


@dataclass(frozen=True)
class MetaStepConfig:
    gamma: float = 5e-4
    beta: float = 5e-4
    meta_lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.gamma < 0 or self.beta < 0:
            raise ConfigError("gamma and beta must be >= 0")
        if self.meta_lr <= 0:
            raise ConfigError("meta_lr must be > 0")


def inner_update(params, g, step: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if params.shape != g.shape:
        raise ConfigError(f"layout mismatch: {params.shape} vs {g.shape}")
    return params - step * g


def _term(loss_grad, params, batch, name):
    try:
        return loss_grad(params, batch)
    except NumericOverflowError as exc:
        raise NumericOverflowError(f"term {name}: {exc}") from exc


@dataclass
class MetaGrad:
    grad: np.ndarray
    loss_d: float
    loss_p: float
    loss_ctr: float
    loss_cte: float
    g_d: np.ndarray
    g_ctr: np.ndarray


def dual_meta_step(params, quad: MinibatchQuad, gamma: float, beta: float,
                   loss_grad: LossGrad = model.loss_and_grad) -> MetaGrad:
    """Meta-gradient plus the losses it was built from (``loss_p``/``loss_cte``
    are evaluated at the shifted parameters)."""
    ld, gd = _term(loss_grad, params, quad.d, "L_d")
    lctr, gctr = _term(loss_grad, params, quad.ctr, "L_ctr")
    lp, gp_shift = _term(loss_grad, inner_update(params, gd, gamma), quad.p, "L_p(theta_d)")
    lcte, gcte_shift = _term(loss_grad, inner_update(params, gctr, beta), quad.cte,
                             "L_cte(theta_ctr)")
    grad = ((gd + gp_shift) + gctr) + gcte_shift
    return MetaGrad(grad, ld, lp, lctr, lcte, gd, gctr)


def dual_meta_grad(params, quad: MinibatchQuad, cfg: MetaStepConfig,
                   loss_grad: LossGrad = model.loss_and_grad) -> np.ndarray:
    return dual_meta_step(params, quad, cfg.gamma, cfg.beta, loss_grad).grad


def hvp(loss_grad: LossGrad, params, batch, v, eps: float = HVP_EPS) -> np.ndarray:
    """Central-difference Hessian-vector product along the unit direction of ``v``."""
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return np.zeros_like(v)
    step = (eps / nv) * v
    _, g_plus = loss_grad(params + step, batch)
    _, g_minus = loss_grad(params - step, batch)
    return (g_plus - g_minus) * (nv / (2.0 * eps))


def direct_sga_grad(params, quad: MinibatchQuad, cfg: MetaStepConfig,
                    loss_grad: LossGrad = model.loss_and_grad,
                    eps: float = HVP_EPS) -> np.ndarray:
    """Gradient of the alignment objective including its second-order terms.

    ``grad(g_d . g_p) = H_d g_p + H_p g_d`` (and likewise for the ctr/cte pair),
    each Hessian-vector product by central differences.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape[0] > MAX_DIRECT_PARAMS:
        raise ConfigError(f"direct optimisation limited to {MAX_DIRECT_PARAMS} parameters")
    fg = four_gradients(params, quad, loss_grad)
    grad = ((fg.g_d + fg.g_p) + fg.g_ctr) + fg.g_cte
    if cfg.gamma:
        grad = grad - cfg.gamma * (hvp(loss_grad, params, quad.d, fg.g_p, eps)
                                   + hvp(loss_grad, params, quad.p, fg.g_d, eps))
    if cfg.beta:
        grad = grad - cfg.beta * (hvp(loss_grad, params, quad.ctr, fg.g_cte, eps)
                                  + hvp(loss_grad, params, quad.cte, fg.g_ctr, eps))
    return grad


class Adam:
    def __init__(self, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        """Update ``theta`` in place."""
        self.t += 1
        kernels.adam_update(theta, grad, self.m, self.v, float(self.t),
                            self.lr, self.beta1, self.beta2, self.eps)


TRAIN_MODES = ("plain", "dual", "direct")

LOG_FIELDS = ("iteration", "loss_d", "loss_p", "loss_ctr", "loss_cte",
              "dot_dp", "dot_ctrcte", "cos_dp", "cos_ctrcte",
              "grad_norm", "step_seconds")


def train_round(params, d_pool: SubjectPool, p_pool: Optional[SubjectPool], *,
                cfg: MetaStepConfig, iterations: int, rng: np.random.Generator,
                mode: str = "dual", batch_size: int = 5, log_every: int = 0,
                probe_pool: Optional[SubjectPool] = None,
                probe_rng: Optional[np.random.Generator] = None,
                loss_grad: LossGrad = model.loss_and_grad):
    """Run ``iterations`` Adam steps from ``params`` and return ``(params, log_rows)``.

    ``mode='plain'`` trains on the incoming site alone (also the round-1 path
    when there is no buffer).  ``'dual'`` uses the first-order meta-gradient,
    ``'direct'`` the second-order reference.  Every ``log_every`` iterations a
    row of alignment diagnostics is recorded; in plain mode this needs a
    ``probe_pool`` (drawn with ``probe_rng`` so logging never perturbs the
    training stream).
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if mode not in TRAIN_MODES:
        raise ConfigError(f"unknown training mode {mode!r}")
    if mode != "plain" and p_pool is None:
        raise ConfigError(f"mode {mode!r} needs a non-empty replay buffer")
    theta = np.array(params, dtype=np.float64)
    opt = Adam(theta.shape[0], cfg.meta_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rows = []
    for it in range(1, iterations + 1):
        t0 = time.perf_counter()
        d = d_pool.draw(rng, batch_size)
        logging = log_every > 0 and it % log_every == 0
        row = None
        try:
            if mode == "plain":
                loss_d, grad = _term(loss_grad, theta, d, "L_d")
                if logging and probe_pool is not None:
                    row = _probe_row(theta, d, probe_pool.draw(probe_rng, batch_size),
                                     probe_rng, loss_grad)
            else:
                quad = make_quad(rng, d, p_pool.draw(rng, batch_size))
                if mode == "dual":
                    mg = dual_meta_step(theta, quad, cfg.gamma, cfg.beta, loss_grad)
                    grad = mg.grad
                else:
                    grad = direct_sga_grad(theta, quad, cfg, loss_grad)
                if logging:
                    row = _quad_row(theta, quad, loss_grad)
        except NumericOverflowError as exc:
            raise NumericOverflowError(f"iteration {it}: {exc}") from exc
        opt.step(theta, grad)
        if not np.all(np.isfinite(theta)):
            raise NumericOverflowError(f"iteration {it}: parameters became non-finite")
        if logging:
            if row is None:
                row = {"loss_d": loss_d}
            row["iteration"] = it
            row["grad_norm"] = float(np.linalg.norm(grad))
            row["step_seconds"] = time.perf_counter() - t0
            rows.append(row)
    return theta, rows


def _quad_row(theta, quad, loss_grad) -> dict:
    fg = four_gradients(theta, quad, loss_grad)
    rep = alignment_report(fg.g_d, fg.g_p, fg.g_ctr, fg.g_cte)
    return {"loss_d": fg.loss_d, "loss_p": fg.loss_p, "loss_ctr": fg.loss_ctr,
            "loss_cte": fg.loss_cte, "dot_dp": rep.dot_dp, "dot_ctrcte": rep.dot_ctrcte,
            "cos_dp": rep.cos_dp, "cos_ctrcte": rep.cos_ctrcte}


def _probe_row(theta, d, p, probe_rng, loss_grad) -> dict:
    return _quad_row(theta, make_quad(probe_rng, d, p), loss_grad)


def meta_optimize_round(params, site_data, buffer, cfg: MetaStepConfig, iterations: int,
                        seed=0, batch_size: int = 5, mode: str = "dual"):
    """Train one round on ``site_data`` (a SiteDataset) rehearsing ``buffer``.

    An empty or missing buffer selects the plain path.  Returns final params.
    """
    d_pool = SubjectPool(site_data.train)
    subjects = buffer.subjects() if buffer is not None else []
    p_pool = SubjectPool(subjects) if subjects else None
    theta, _ = train_round(params, d_pool, p_pool, cfg=cfg, iterations=iterations,
                           rng=np.random.default_rng(seed),
                           mode=mode if p_pool is not None else "plain",
                           batch_size=batch_size)
    return theta
