"""``@njit`` twins of :mod:`smglearn.kernels.numpy_impl`.

Matrix products go through ``np.dot`` (BLAS); everything elementwise is fused
into explicit loops so a small-batch step does not pay per-op dispatch cost.
"""

import math

import numpy as np
from numba import njit

LOGIT_CLAMP = 30.0


@njit(cache=True)
def _softplus(x):
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


@njit(cache=True)
def _sigmoid(x):
    e = math.exp(-abs(x))
    return 1.0 / (1.0 + e) if x >= 0.0 else e / (1.0 + e)


@njit(cache=True)
def _offsets(sizes):
    off = np.zeros(9, dtype=np.int64)
    o = 0
    for k in range(4):
        off[2 * k] = o
        o += sizes[k] * sizes[k + 1]
        off[2 * k + 1] = o
        o += sizes[k + 1]
    off[8] = o
    return off


@njit(cache=True)
def _layer(theta, off, sizes, k):
    n_in = sizes[k]
    n_out = sizes[k + 1]
    w = theta[off[2 * k]:off[2 * k] + n_in * n_out].reshape((n_in, n_out))
    b = theta[off[2 * k + 1]:off[2 * k + 1] + n_out]
    return w, b


@njit(cache=True)
def _affine(a, w, b):
    h = np.dot(a, w)
    for i in range(h.shape[0]):
        for j in range(h.shape[1]):
            h[i, j] += b[j]
    return h


@njit(cache=True)
def mlp_forward(theta, x, sizes):
    off = _offsets(sizes)
    w1, b1 = _layer(theta, off, sizes, 0)
    w2, b2 = _layer(theta, off, sizes, 1)
    w3, b3 = _layer(theta, off, sizes, 2)
    w4, b4 = _layer(theta, off, sizes, 3)
    a1 = np.maximum(_affine(x, w1, b1), 0.0)
    h2 = _affine(a1, w2, b2)
    z = np.empty_like(h2)
    for i in range(h2.shape[0]):
        for j in range(h2.shape[1]):
            z[i, j] = _softplus(h2[i, j])
    a3 = np.maximum(_affine(z, w3, b3), 0.0)
    raw = _affine(a3, w4, b4)
    p = np.empty_like(raw)
    for i in range(raw.shape[0]):
        for j in range(raw.shape[1]):
            p[i, j] = _sigmoid(min(max(raw[i, j], -LOGIT_CLAMP), LOGIT_CLAMP))
    return p, z


@njit(cache=True)
def _loss_grad_into(theta, x, y, sizes, grad):
    off = _offsets(sizes)
    w1, b1 = _layer(theta, off, sizes, 0)
    w2, b2 = _layer(theta, off, sizes, 1)
    w3, b3 = _layer(theta, off, sizes, 2)
    w4, b4 = _layer(theta, off, sizes, 3)
    g1w, g1b = _layer(grad, off, sizes, 0)
    g2w, g2b = _layer(grad, off, sizes, 1)
    g3w, g3b = _layer(grad, off, sizes, 2)
    g4w, g4b = _layer(grad, off, sizes, 3)
    nb = x.shape[0]

    h1 = _affine(x, w1, b1)
    a1 = np.maximum(h1, 0.0)
    h2 = _affine(a1, w2, b2)
    z = np.empty_like(h2)
    for i in range(nb):
        for j in range(h2.shape[1]):
            z[i, j] = _softplus(h2[i, j])
    h3 = _affine(z, w3, b3)
    a3 = np.maximum(h3, 0.0)
    raw = _affine(a3, w4, b4)

    n = raw.shape[0] * raw.shape[1]
    total = 0.0
    dl = np.empty_like(raw)
    for i in range(nb):
        for j in range(raw.shape[1]):
            r = raw[i, j]
            lc = min(max(r, -LOGIT_CLAMP), LOGIT_CLAMP)
            e = math.exp(-abs(lc))
            total += max(lc, 0.0) + math.log1p(e) - y[i, j] * lc
            if -LOGIT_CLAMP < r < LOGIT_CLAMP:
                p = 1.0 / (1.0 + e) if lc >= 0.0 else e / (1.0 + e)
                dl[i, j] = (p - y[i, j]) / n
            else:
                dl[i, j] = 0.0

    # matmul outputs land directly in the flat gradient: large temporaries
    # would each cost a fresh mmap plus page faults
    np.dot(a3.T, dl, g4w)
    _colsum(dl, g4b)
    dh3 = np.dot(dl, w4.T)
    for i in range(nb):
        for j in range(dh3.shape[1]):
            if h3[i, j] <= 0.0:
                dh3[i, j] = 0.0
    np.dot(z.T, dh3, g3w)
    _colsum(dh3, g3b)
    dh2 = np.dot(dh3, w3.T)
    for i in range(nb):
        for j in range(dh2.shape[1]):
            dh2[i, j] *= _sigmoid(h2[i, j])
    np.dot(a1.T, dh2, g2w)
    _colsum(dh2, g2b)
    dh1 = np.dot(dh2, w2.T)
    for i in range(nb):
        for j in range(dh1.shape[1]):
            if h1[i, j] <= 0.0:
                dh1[i, j] = 0.0
    np.dot(x.T, dh1, g1w)
    _colsum(dh1, g1b)
    return total / n


@njit(cache=True)
def _colsum(a, out):
    for j in range(a.shape[1]):
        acc = 0.0
        for i in range(a.shape[0]):
            acc += a[i, j]
        out[j] = acc


def mlp_loss_grad(theta, x, y, sizes):
    grad = np.empty(theta.shape[0])
    loss = _loss_grad_into(theta, x, y, sizes, grad)
    return loss, grad


@njit(cache=True)
def adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(theta.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        theta[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


@njit(cache=True)
def box_blur(image, times):
    out = image.astype(np.float64).copy()
    h, w = out.shape
    for _ in range(times):
        nxt = np.empty_like(out)
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for di in range(-1, 2):
                    ii = min(max(i + di, 0), h - 1)
                    for dj in range(-1, 2):
                        jj = min(max(j + dj, 0), w - 1)
                        acc += out[ii, jj]
                nxt[i, j] = acc / 9.0
        out = nxt
    return out


@njit(cache=True)
def mean_min_distance(src, dst):
    total = 0.0
    for i in range(src.shape[0]):
        best = np.inf
        for j in range(dst.shape[0]):
            dx = src[i, 0] - dst[j, 0]
            dy = src[i, 1] - dst[j, 1]
            d = dx * dx + dy * dy
            if d < best:
                best = d
        total += math.sqrt(best)
    return total / src.shape[0]
