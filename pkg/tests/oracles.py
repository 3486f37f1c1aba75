"""Independent reference computations used as test oracles.

Nothing here calls into the code paths it checks: the loss is re-derived
from the layout by hand, gradients come from finite differences, exemplar
selection is scored one subject at a time with plain Python, and surface
distances are exhaustive pairwise minima.
"""

import math

import numpy as np


def reference_loss(theta, x, y, sizes=(256, 64, 16, 64, 256), clamp=30.0):
    """Mean per-pixel BCE of the encoder/decoder MLP, written out longhand."""
    mats, o = [], 0
    for k in range(4):
        n_in, n_out = sizes[k], sizes[k + 1]
        w = np.array(theta[o:o + n_in * n_out]).reshape(n_in, n_out)
        o += n_in * n_out
        b = np.array(theta[o:o + n_out])
        o += n_out
        mats.append((w, b))
    assert o == len(theta)
    h = np.asarray(x, dtype=np.float64)
    for k, (w, b) in enumerate(mats):
        h = h @ w + b
        if k in (0, 2):
            h = np.where(h > 0, h, 0.0)
        elif k == 1:
            h = np.log(1.0 + np.exp(h))
    logits = np.clip(h, -clamp, clamp)
    p = 1.0 / (1.0 + np.exp(-logits))
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def fd_coordinate(f, theta, i, h=1e-4):
    e = np.zeros_like(theta)
    e[i] = h
    return (f(theta + e) - f(theta - e)) / (2 * h)


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


class QuadraticLoss:
    """``L(theta) = 0.5 theta^T A theta + b^T theta`` with symmetric ``A``."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)

    @classmethod
    def random(cls, rng, n):
        m = rng.normal(size=(n, n))
        return cls(0.5 * (m + m.T) / math.sqrt(n), rng.normal(size=n))

    def value(self, theta):
        return float(0.5 * theta @ self.a @ theta + self.b @ theta)

    def grad(self, theta):
        return self.a @ theta + self.b


def quadratic_loss_grad(theta, q):
    return q.value(theta), q.grad(theta)


def cos(a, b):
    return sum(x * y for x, y in zip(a, b)) / (
        math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def brute_force_selection(cand_ids, cand_feats, buffer_feats, lam, n_e):
    """Score every candidate on its own, then take the top ``n_e`` ids.

    ``buffer_feats`` is a list (one per buffered site) of lists of features.
    """
    k = len(cand_feats[0])
    proto = [sum(f[j] for f in cand_feats) / len(cand_feats) for j in range(k)]
    scored = []
    for sid, f in zip(cand_ids, cand_feats):
        r = cos(f, proto)
        if buffer_feats:
            v = sum(min(-cos(f, g) for g in site) for site in buffer_feats) / len(buffer_feats)
        else:
            v = 0.0
        scored.append((r + lam * v, sid))
    # highest score first, then lowest id
    scored.sort(key=lambda t: (-t[0], t[1]))
    return {sid for _, sid in scored[:n_e]}


def exhaustive_asd(a, b):
    """Average symmetric surface distance by brute-force pairwise search."""
    def border(m):
        h, w = m.shape
        pts = []
        for i in range(h):
            for j in range(w):
                if not m[i, j]:
                    continue
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < h and 0 <= jj < w) or not m[ii, jj]:
                        pts.append((i, j))
                        break
        return pts

    pa, pb = border(np.asarray(a, bool)), border(np.asarray(b, bool))

    def directed(src, dst):
        return sum(min(math.dist(p, q) for q in dst) for p in src) / len(src)

    return 0.5 * (directed(pa, pb) + directed(pb, pa))
