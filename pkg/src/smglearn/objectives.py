"""Joint-minimization and gradient-alignment objectives.

Four minibatches enter every iteration: one from the incoming site (``d``),
one from the replay buffer (``p``), and the two halves of a random split of
their union (``ctr`` / ``cte``).  The functions here take a pluggable
``loss_grad(params, batch) -> (loss, grad)`` so the same code runs against
the network and against closed-form test fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

import numpy as np

from smglearn import model
from smglearn.errors import ConfigError
from smglearn.model import Batch

LossGrad = Callable[[np.ndarray, Any], tuple]


@dataclass(frozen=True)
class MinibatchQuad:
    d: Any
    p: Any
    ctr: Any
    cte: Any

    def __post_init__(self):
        for name in ("d", "p", "ctr", "cte"):
            b = getattr(self, name)
            if b is None or (isinstance(b, Batch) and len(b) == 0):
                raise ConfigError(f"{name} batch is empty; round 1 must use the plain-training path")


def split_union(rng: np.random.Generator, d: Batch, p: Batch) -> tuple[Batch, Batch]:
    """Shuffle ``d + p`` and cut it into two halves (sizes differ by at most one)."""
    union = d.concat(p)
    n = len(union)
    if n < 2:
        raise ConfigError("union batch needs at least two subjects to split")
    half = n // 2
    if n % 2 and rng.random() < 0.5:
        half += 1
    perm = rng.permutation(n)
    return union.take(perm[:half]), union.take(perm[half:])


def make_quad(rng: np.random.Generator, d: Batch, p: Batch) -> MinibatchQuad:
    ctr, cte = split_union(rng, d, p)
    return MinibatchQuad(d, p, ctr, cte)


class FourGradients(NamedTuple):
    loss_d: float
    loss_p: float
    loss_ctr: float
    loss_cte: float
    g_d: np.ndarray
    g_p: np.ndarray
    g_ctr: np.ndarray
    g_cte: np.ndarray


def four_gradients(params, quad: MinibatchQuad,
                   loss_grad: LossGrad = model.loss_and_grad) -> FourGradients:
    ld, gd = loss_grad(params, quad.d)
    lp, gp = loss_grad(params, quad.p)
    lctr, gctr = loss_grad(params, quad.ctr)
    lcte, gcte = loss_grad(params, quad.cte)
    return FourGradients(ld, lp, lctr, lcte, gd, gp, gctr, gcte)


def jm_losses(params, quad: MinibatchQuad,
              loss_grad: LossGrad = model.loss_and_grad) -> tuple[float, float]:
    """``(L_d + L_p, L_ctr + L_cte)``."""
    fg = four_gradients(params, quad, loss_grad)
    return fg.loss_d + fg.loss_p, fg.loss_ctr + fg.loss_cte


def sga_value(params, quad: MinibatchQuad, gamma: float, beta: float,
              loss_grad: LossGrad = model.loss_and_grad) -> float:
    """Both JM sums minus ``gamma * g_d.g_p`` and ``beta * g_ctr.g_cte``."""
    if gamma < 0 or beta < 0:
        raise ConfigError("gamma and beta must be non-negative")
    fg = four_gradients(params, quad, loss_grad)
    jm = (fg.loss_d + fg.loss_p) + (fg.loss_ctr + fg.loss_cte)
    return float(jm - gamma * np.dot(fg.g_d, fg.g_p) - beta * np.dot(fg.g_ctr, fg.g_cte))


@dataclass(frozen=True)
class AlignmentReport:
    dot_dp: float
    dot_ctrcte: float
    cos_dp: float
    cos_ctrcte: float
    degenerate_dp: bool
    degenerate_ctrcte: bool


def _cosine(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return float(np.dot(a, b) / (na * nb)), False


def alignment_report(g_d, g_p, g_ctr, g_cte) -> AlignmentReport:
    vecs = [np.asarray(v, dtype=np.float64) for v in (g_d, g_p, g_ctr, g_cte)]
    if len({v.shape for v in vecs}) != 1:
        raise ConfigError("gradients must share one layout")
    g_d, g_p, g_ctr, g_cte = vecs
    cos_dp, deg_dp = _cosine(g_d, g_p)
    cos_cc, deg_cc = _cosine(g_ctr, g_cte)
    return AlignmentReport(float(np.dot(g_d, g_p)), float(np.dot(g_ctr, g_cte)),
                           cos_dp, cos_cc, deg_dp, deg_cc)
