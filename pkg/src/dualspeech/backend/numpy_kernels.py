"""Pure-numpy reference implementations of the hot kernels.

These are the semantics of record: the compiled extension in
``_ckernels.pyx`` implements the same functions and must agree with
these to floating-point noise.  All arrays are float64, C-contiguous.
"""

import numpy as np

NAME = "python"


def layer_norm_fwd(x, gamma, beta, eps):
    """Normalize the last axis of ``x`` (2-d, [rows, dim]).

    Returns (y, mean, rstd); mean/rstd are saved for the backward pass.
    """
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gamma + beta
    return y, mean, rstd


def layer_norm_bwd(dy, x, gamma, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dyg = dy * gamma
    dx = rstd[:, None] * (
        dyg
        - dyg.mean(axis=1)[:, None]
        - xhat * (dyg * xhat).mean(axis=1)[:, None]
    )
    return dx, dgamma, dbeta


def masked_softmax_fwd(scores, mask):
    """Softmax over the last axis of a 2-d array.

    ``mask`` is boolean (True = position allowed) or None.  Masked
    positions get exactly zero probability.  Every row must have at
    least one allowed position; callers enforce that.
    """
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=1)
    e = np.exp(scores - m[:, None])
    return e / e.sum(axis=1)[:, None]


def masked_softmax_bwd(dp, p):
    inner = (dp * p).sum(axis=1)
    return p * (dp - inner[:, None])


def conv1d_fwd(x, w, b):
    """Same-padded 1-d convolution along axis 1.

    x: [batch, time, c_in], w: [kernel, c_in, c_out], b: [c_out].
    Odd kernel sizes only (same padding is symmetric).
    """
    k = w.shape[0]
    pad = (k - 1) // 2
    bsz, t, _ = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    y = np.tile(b, (bsz, t, 1))
    for tap in range(k):
        y += xp[:, tap:tap + t, :] @ w[tap]
    return y


def conv1d_bwd(dy, x, w):
    k = w.shape[0]
    pad = (k - 1) // 2
    t, ci = x.shape[1], x.shape[2]
    co = w.shape[2]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    dy2 = dy.reshape(-1, co)
    for tap in range(k):
        window = np.ascontiguousarray(xp[:, tap:tap + t, :]).reshape(-1, ci)
        dw[tap] = window.T @ dy2
        dxp[:, tap:tap + t, :] += dy @ w[tap].T
    db = dy2.sum(axis=0)
    dx = dxp[:, pad:pad + t, :] if pad else dxp
    return dx, dw, db


def scatter_add_rows(out, ids, dy):
    """out[ids[i]] += dy[i] for every row i (duplicate ids accumulate)."""
    np.add.at(out, ids, dy)
    return out
