"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Arrays are float64 and C-contiguous on input; outputs are freshly allocated.
"""

import numpy as np

# child order inside a 2x2 pooling block (row-major)
CHILDREN = ((0, 0), (0, 1), (1, 0), (1, 1))


def neighbor_sum(x, offsets):
    """Sum of ``x`` over lattice neighbours given by ``offsets``.

    ``x`` has shape (B, H, W, C); ``offsets`` is an (K, 2) integer array.
    out[b, i, j] = sum_k x[b, i + di_k, j + dj_k] for in-bounds neighbours.
    """
    _, h, w, _ = x.shape
    out = np.zeros_like(x)
    for di, dj in offsets:
        di = int(di)
        dj = int(dj)
        r0, r1 = max(0, -di), h - max(0, di)
        c0, c1 = max(0, -dj), w - max(0, dj)
        if r0 >= r1 or c0 >= c1:
            continue
        out[:, r0:r1, c0:c1] += x[:, r0 + di:r1 + di, c0 + dj:c1 + dj]
    return out


def pool_max(x, exists):
    """Indicator-aware 2x2 max pooling.

    Returns ``(out, out_exists, arg)`` where ``arg`` holds the winning child
    index (0..3, row-major within the block) per output channel, or -1 when
    no child exists. Ties go to the lowest child index.
    """
    b, h, w, c = x.shape
    blocks = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    blocks = blocks.reshape(b, h // 2, w // 2, 4, c)
    ex = exists.reshape(b, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    ex = ex.reshape(b, h // 2, w // 2, 4).astype(bool)
    masked = np.where(ex[..., None], blocks, -np.inf)
    arg = np.argmax(masked, axis=3)
    out = np.take_along_axis(masked, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    out_exists = ex.any(axis=3)
    out = np.where(out_exists[..., None], out, 0.0)
    arg = np.where(out_exists[..., None], arg, -1).astype(np.int8)
    return np.ascontiguousarray(out), out_exists, arg


def pool_max_backward(grad, arg):
    """Route each pooled gradient to its argmax child."""
    b, h2, w2, c = grad.shape
    out = np.zeros((b, 2 * h2, 2 * w2, c))
    for k, (di, dj) in enumerate(CHILDREN):
        out[:, di::2, dj::2, :] = np.where(arg == k, grad, 0.0)
    return out


def csr_matvec(indptr, indices, data, x, nrows):
    """y = M @ x for M in compressed sparse row form."""
    if len(data) == 0:
        return np.zeros(nrows)
    row_ids = np.repeat(np.arange(nrows), np.diff(indptr))
    return np.bincount(row_ids, weights=data * x[indices], minlength=nrows)


def dense_csr_matmul(x, indptr, indices, data, ncols):
    """Y = X @ M where X is dense (N, rows) and M is CSR (rows, ncols)."""
    n, nrows = x.shape
    out = np.zeros((n, ncols))
    for r in range(nrows):
        s, e = indptr[r], indptr[r + 1]
        if s == e:
            continue
        out[:, indices[s:e]] += np.outer(x[:, r], data[s:e])
    return out


def neighbor_mean(x, exists, offsets):
    """Mean over existing neighbours, plus the per-vertex scale used.

    Returns ``(mean, inv)`` with ``inv = exists / max(count, 1)``; vertices
    that do not exist, or have no existing neighbour, get a zero mean.
    ``x`` must already be zero at non-existing positions.
    """
    exf = exists.astype(np.float64)[..., None]
    cnt = neighbor_sum(np.ascontiguousarray(exf), offsets)
    inv = (exf / np.maximum(cnt, 1.0))[..., 0]
    return neighbor_sum(x, offsets) * inv[..., None], inv


def neighbor_sum_scaled(g, scale, offsets):
    """out[u] = sum_k scale[u + k] * g[u + k]; adjoint of a scaled aggregation."""
    return neighbor_sum(np.ascontiguousarray(g * scale[..., None]), offsets)
