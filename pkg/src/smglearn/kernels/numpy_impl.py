"""Pure-numpy reference kernels.

Every function here has a twin in :mod:`smglearn.kernels.numba_impl` with the
same signature.  Layer sizes are passed as a 1-D int array
``[n_in, n_h1, n_bottleneck, n_h3, n_out]``; parameters are a flat float64
vector laid out as ``W1, b1, W2, b2, W3, b3, W4, b4`` with each ``W`` stored
row-major as ``(fan_in, fan_out)``.
"""

import numpy as np

LOGIT_CLAMP = 30.0


def _unpack(theta, sizes):
    out = []
    o = 0
    for k in range(4):
        n_in, n_out = int(sizes[k]), int(sizes[k + 1])
        w = theta[o:o + n_in * n_out].reshape(n_in, n_out)
        o += n_in * n_out
        b = theta[o:o + n_out]
        o += n_out
        out.append((w, b))
    return out


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0, e) / (1.0 + e)


def mlp_forward(theta, x, sizes):
    """Return ``(probabilities, bottleneck_activations)`` for a batch ``x``."""
    (w1, b1), (w2, b2), (w3, b3), (w4, b4) = _unpack(theta, sizes)
    a1 = np.maximum(x @ w1 + b1, 0.0)
    z = _softplus(a1 @ w2 + b2)
    a3 = np.maximum(z @ w3 + b3, 0.0)
    logits = np.clip(a3 @ w4 + b4, -LOGIT_CLAMP, LOGIT_CLAMP)
    return _sigmoid(logits), z


def mlp_loss_grad(theta, x, y, sizes):
    """Mean per-pixel binary cross-entropy and its exact gradient."""
    (w1, b1), (w2, b2), (w3, b3), (w4, b4) = _unpack(theta, sizes)
    h1 = x @ w1 + b1
    a1 = np.maximum(h1, 0.0)
    h2 = a1 @ w2 + b2
    z = _softplus(h2)
    h3 = z @ w3 + b3
    a3 = np.maximum(h3, 0.0)
    raw = a3 @ w4 + b4
    lc = np.clip(raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    n = raw.size
    loss = float(np.sum(_softplus(lc) - y * lc) / n)

    dl = (_sigmoid(lc) - y) / n
    dl *= (raw > -LOGIT_CLAMP) & (raw < LOGIT_CLAMP)
    g4w = a3.T @ dl
    g4b = dl.sum(axis=0)
    dh3 = (dl @ w4.T) * (h3 > 0.0)
    g3w = z.T @ dh3
    g3b = dh3.sum(axis=0)
    dh2 = (dh3 @ w3.T) * _sigmoid(h2)
    g2w = a1.T @ dh2
    g2b = dh2.sum(axis=0)
    dh1 = (dh2 @ w2.T) * (h1 > 0.0)
    g1w = x.T @ dh1
    g1b = dh1.sum(axis=0)
    grad = np.concatenate(
        [g1w.ravel(), g1b, g2w.ravel(), g2b, g3w.ravel(), g3b, g4w.ravel(), g4b]
    )
    return loss, grad


def adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps):
    """In-place bias-corrected Adam step; ``step`` counts from 1."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def box_blur(image, times):
    """Apply a 3x3 mean filter ``times`` times with edge-replicated borders."""
    out = np.asarray(image, dtype=np.float64).copy()
    h, w = out.shape
    for _ in range(times):
        p = np.pad(out, 1, mode="edge")
        acc = np.zeros_like(out)
        for di in range(3):
            for dj in range(3):
                acc += p[di:di + h, dj:dj + w]
        out = acc / 9.0
    return out


def mean_min_distance(src, dst):
    """Mean over ``src`` points of the Euclidean distance to the nearest ``dst`` point."""
    d = np.sqrt(((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=-1))
    return float(d.min(axis=1).mean())
