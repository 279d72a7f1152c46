"""Loop-based reference implementations used as independent oracles.

Everything here is written with explicit Python loops over float64 numpy
scalars, deliberately avoiding the vectorized code paths in the package.
"""

import numpy as np


def loop_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def loop_softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i] - max(x[i])
        ex = [np.exp(v) for v in row]
        s = sum(ex)
        for j in range(x.shape[1]):
            out[i, j] = ex[j] / s
    return out


def loop_conv2d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlation over a CHW map, zero padding."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = 0.0
                for c in range(c_in):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += kernel[o, c, di, dj] * xp[c, i * stride + di, j * stride + dj]
                out[o, i, j] = acc + (0.0 if bias is None else float(np.asarray(bias)[o]))
    return out


def loop_bilinear_resize(x, size):
    """Half-pixel-center bilinear sampling, evaluated per output site."""
    x = np.asarray(x, dtype=np.float64)
    c_n, h, w = x.shape
    h_out, w_out = size
    out = np.zeros((c_n, h_out, w_out))
    for c in range(c_n):
        for i in range(h_out):
            for j in range(w_out):
                sy = min(max((i + 0.5) * h / h_out - 0.5, 0.0), h - 1.0)
                sx = min(max((j + 0.5) * w / w_out - 0.5, 0.0), w - 1.0)
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                fy, fx = sy - y0, sx - x0
                out[c, i, j] = (
                    x[c, y0, x0] * (1 - fy) * (1 - fx)
                    + x[c, y0, x1] * (1 - fy) * fx
                    + x[c, y1, x0] * fy * (1 - fx)
                    + x[c, y1, x1] * fy * fx
                )
    return out


def loop_global_avg_pool(x):
    x = np.asarray(x, dtype=np.float64)
    c_n, h, w = x.shape
    out = np.zeros(c_n)
    for c in range(c_n):
        acc = 0.0
        for i in range(h):
            for j in range(w):
                acc += x[c, i, j]
        out[c] = acc / (h * w)
    return out


def loop_group_norm(x, groups, gamma, beta, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    c_n, h, w = x.shape
    per = c_n // groups
    out = np.zeros_like(x)
    for g in range(groups):
        vals = [x[c, i, j] for c in range(g * per, (g + 1) * per)
                for i in range(h) for j in range(w)]
        mu = sum(vals) / len(vals)
        var = sum((v - mu) ** 2 for v in vals) / len(vals)
        for c in range(g * per, (g + 1) * per):
            for i in range(h):
                for j in range(w):
                    out[c, i, j] = (x[c, i, j] - mu) / np.sqrt(var + eps)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(c_n)
    beta = np.asarray(beta, dtype=np.float64).reshape(c_n)
    for c in range(c_n):
        out[c] = out[c] * gamma[c] + beta[c]
    return out


def loop_attention(q, k, v):
    """Row-stochastic weights from q @ k.T, applied to v. No scaling."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scores = loop_matmul(q, k.T)
    weights = loop_softmax_rows(scores)
    return loop_matmul(weights, v)


def loop_fuse_tokens(f_i, f_j, proj_i, proj_j):
    """Input + self-attention + cross-attention, evaluated term by term.

    proj_* are (w_q, w_k, w_v) triples of C x C matrices.
    """
    f_i = np.asarray(f_i, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    wq_i, wk_i, wv_i = (np.asarray(m, dtype=np.float64) for m in proj_i)
    _, wk_j, wv_j = (np.asarray(m, dtype=np.float64) for m in proj_j)
    q_i = loop_matmul(f_i, wq_i)
    k_i = loop_matmul(f_i, wk_i)
    v_i = loop_matmul(f_i, wv_i)
    k_j = loop_matmul(f_j, wk_j)
    v_j = loop_matmul(f_j, wv_j)
    self_term = loop_attention(q_i, k_i, v_i)
    cross_term = loop_attention(q_i, k_j, v_j)
    return f_i + self_term + cross_term


def loop_ctb(maps, w_q_a, w_k, w_v, eps=1e-8):
    """Scalar cross-scale attention over four same-shape CHW maps.

    maps[0] is the anchor; w_k / w_v are lists of four C x C matrices.
    Returns (fused, betas, fallback_fired).
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    c_n, h, w = maps[0].shape

    def project(m, mat):
        out = np.zeros_like(m)
        for i in range(h):
            for j in range(w):
                for co in range(c_n):
                    acc = 0.0
                    for ci in range(c_n):
                        acc += m[ci, i, j] * mat[ci, co]
                    out[co, i, j] = acc
        return out

    q_a = project(maps[0], np.asarray(w_q_a, dtype=np.float64))
    keys = [project(m, np.asarray(mat, dtype=np.float64)) for m, mat in zip(maps, w_k)]
    vals = [project(m, np.asarray(mat, dtype=np.float64)) for m, mat in zip(maps, w_v)]

    scores = []
    for k_m in keys:
        acc = 0.0
        for c in range(c_n):
            for i in range(h):
                for j in range(w):
                    acc += q_a[c, i, j] * k_m[c, i, j]
        scores.append(acc)
    total = sum(scores)
    if abs(total) <= eps:
        betas = [0.25] * 4
        fallback = True
    else:
        betas = [s / (total + eps) for s in scores]
        fallback = False

    fused = maps[0].copy()
    for beta, v_m in zip(betas, vals):
        fused += beta * v_m
    return fused, betas, fallback


def loop_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-x))
