"""Batched forward/backward passes for every layer kind.

All graph tensors are laid out as ``x[b, i, j, c]`` with an existence grid
``ex[b, i, j]``. Features at non-existing positions are zero on input and on
output of every layer. Each ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward(dout, cache)`` returns ``(dx, grads)`` where ``grads``
maps local parameter names to gradients.

Weight matrices are applied as ``rows @ W`` (``W`` has shape c_in x c_out) and
may be dense arrays or :class:`~sargnn.sparse.SparseMatrix` instances.
"""

import numpy as np

from . import kernels
from .errors import ShapeError
from .sparse import SparseMatrix, dense_times_sparse

LEAKY_SLOPE = 0.2


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _apply(rows, w):
    if isinstance(w, SparseMatrix):
        return dense_times_sparse(rows, w)
    return rows @ w


def _as_dense(w):
    if isinstance(w, SparseMatrix):
        from .sparse import densify

        return densify(w)
    return w


def _update(feat, ex, w):
    """Apply ``w`` to the feature rows of existing vertices only."""
    b, h, wd, c = feat.shape
    co = w.shape[1]
    flat = feat.reshape(-1, c)
    live = ex.reshape(-1)
    if live.all():
        return _apply(flat, w).reshape(b, h, wd, co)
    z = np.zeros((flat.shape[0], co))
    if live.any():
        z[live] = _apply(flat[live], w)
    return z.reshape(b, h, wd, co)


def _check_width(x, w, factor, index):
    if w.shape[0] != factor * x.shape[-1]:
        raise ShapeError(
            f"layer {index}: input width {x.shape[-1]} incompatible with weight {w.shape}"
        )


def shift(x, di, dj):
    """y[:, i, j] = x[:, i + di, j + dj], zero outside the grid."""
    out = np.zeros_like(x)
    h, w = x.shape[1], x.shape[2]
    r0, r1 = max(0, -di), h - max(0, di)
    c0, c1 = max(0, -dj), w - max(0, dj)
    if r0 < r1 and c0 < c1:
        out[:, r0:r1, c0:c1] = x[:, r0 + di:r1 + di, c0 + dj:c1 + dj]
    return out


# -- GraphSAGE (mean aggregator, self || neighbour concatenation) --------------


def _mask(arr, exf, full):
    return arr if full else arr * exf


def _contig(a):
    return np.ascontiguousarray(a)


def sage_forward(x, ex, w, offsets, relu=True, index=None):
    """``act([h_v, mean_{u in N(v)} h_u] @ W)`` over existing vertices.

    When the layer narrows (c_out < c_in) the neighbour half of ``W`` is
    applied before aggregating; the mean is linear so the result is the same.
    """
    _check_width(x, w, 2, index)
    c = x.shape[-1]
    full = bool(ex.all())
    exf = ex.astype(np.float64)[..., None]
    sparse_w = isinstance(w, SparseMatrix)
    project_first = not sparse_w and w.shape[1] < c
    if sparse_w:
        mean, inv = kernels.neighbor_mean(x, ex, offsets)
        z = _update(np.concatenate([x, mean], axis=-1), ex, w)
    elif project_first:
        zn = _update(x, ex, w[c:])
        agg, inv = kernels.neighbor_mean(_contig(zn), ex, offsets)
        z = _update(x, ex, w[:c]) + agg
        mean = None
    else:
        mean, inv = kernels.neighbor_mean(x, ex, offsets)
        z = _update(x, ex, w[:c]) + _update(mean, ex, w[c:])
    if relu:
        out = _mask(np.maximum(z, 0.0), exf, full)
    else:
        out = _mask(z, exf, full)
    return out, (x, mean, inv, z, exf, full, w, offsets, relu, project_first)


def sage_backward(dout, cache):
    x, mean, inv, z, exf, full, w, offsets, relu, project_first = cache
    w = _as_dense(w)
    c = x.shape[-1]
    dz = _mask(dout, exf, full)
    if relu:
        dz = dz * (z > 0)
    co = dz.shape[-1]
    dz2 = dz.reshape(-1, co)
    x2 = x.reshape(-1, c)
    if project_first:
        dzn = kernels.neighbor_sum_scaled(_contig(dz), inv, offsets).reshape(-1, co)
        dw = np.concatenate([x2.T @ dz2, x2.T @ dzn])
        dx = dz2 @ w[:c].T + dzn @ w[c:].T
    else:
        dw = np.concatenate([x2.T @ dz2, mean.reshape(-1, c).T @ dz2])
        dmean = (dz2 @ w[c:].T).reshape(x.shape)
        dx = dz2 @ w[:c].T + kernels.neighbor_sum_scaled(dmean, inv, offsets).reshape(-1, c)
    return _mask(dx.reshape(x.shape), exf, full), {"W": dw}


# -- GCN (symmetric normalisation with self loops) ----------------------------


def gcn_forward(x, ex, w, offsets, index=None):
    """``ReLU(sum_{u in N(v) + v} h_u / sqrt((d_v + 1)(d_u + 1)) @ W)``."""
    _check_width(x, w, 1, index)
    full = bool(ex.all())
    exf = ex.astype(np.float64)[..., None]
    deg = kernels.neighbor_sum(_contig(exf), offsets)
    norm = (exf / np.sqrt(deg + 1.0))[..., 0]
    project_first = not isinstance(w, SparseMatrix) and w.shape[1] < x.shape[-1]
    src = _contig(_update(x, ex, w)) if project_first else x
    agg = norm[..., None] * (kernels.neighbor_sum_scaled(src, norm, offsets)
                             + norm[..., None] * src)
    z = agg if project_first else _update(agg, ex, w)
    out = _mask(np.maximum(z, 0.0), exf, full)
    return out, (x, agg, norm, z, exf, full, w, offsets, project_first)


def gcn_backward(dout, cache):
    x, agg, norm, z, exf, full, w, offsets, project_first = cache
    w = _as_dense(w)
    dz = _mask(dout, exf, full) * (z > 0)

    def agg_adjoint(g):
        g = _contig(g)
        return norm[..., None] * (kernels.neighbor_sum_scaled(g, norm, offsets)
                                  + norm[..., None] * g)

    x2 = x.reshape(-1, x.shape[-1])
    if project_first:
        dp = agg_adjoint(dz).reshape(-1, dz.shape[-1])
        dw = x2.T @ dp
        dx = (dp @ w.T).reshape(x.shape)
    else:
        dz2 = dz.reshape(-1, dz.shape[-1])
        dw = agg.reshape(-1, agg.shape[-1]).T @ dz2
        dx = agg_adjoint((dz2 @ w.T).reshape(x.shape))
    return _mask(dx, exf, full), {"W": dw}


# -- GAT (single head) --------------------------------------------------------


def gat_forward(x, ex, w, a, offsets, index=None):
    _check_width(x, w, 1, index)
    co = w.shape[1]
    if a.shape != (2 * co,):
        raise ShapeError(f"layer {index}: attention vector {a.shape} != ({2 * co},)")
    exf = ex.astype(np.float64)
    p = _update(x, ex, w)
    s_self = p @ a[:co]
    s_nb = p @ a[co:]
    offs = [(0, 0)] + [tuple(int(v) for v in o) for o in offsets]
    pre, valid, p_nb = [], [], []
    for di, dj in offs:
        pre.append(s_self + shift(s_nb, di, dj))
        valid.append(ex & shift(ex, di, dj))
        p_nb.append(shift(p, di, dj))
    pre = np.stack(pre)
    valid = np.stack(valid)
    e = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    e = np.where(valid, e, -np.inf)
    emax = e.max(axis=0)
    emax = np.where(np.isfinite(emax), emax, 0.0)
    num = np.where(valid, np.exp(e - emax), 0.0)
    den = num.sum(axis=0)
    alpha = num / np.where(den > 0, den, 1.0)
    out = np.zeros_like(p)
    for k in range(len(offs)):
        out += alpha[k][..., None] * p_nb[k]
    h = np.maximum(out, 0.0) * exf[..., None]
    return h, (x, exf, w, a, offs, pre, valid, alpha, p, p_nb, out)


def gat_backward(dout, cache):
    x, exf, w, a, offs, pre, valid, alpha, p, p_nb, out = cache
    co = w.shape[1]
    dsum = dout * exf[..., None] * (out > 0)
    dalpha = np.stack([np.einsum("bijc,bijc->bij", dsum, pk) for pk in p_nb])
    dp = np.zeros_like(p)
    for k, (di, dj) in enumerate(offs):
        dp += shift(alpha[k][..., None] * dsum, -di, -dj)
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=0))
    dpre = de * np.where(pre > 0, 1.0, LEAKY_SLOPE) * valid
    ds_self = dpre.sum(axis=0)
    ds_nb = np.zeros_like(ds_self)
    for k, (di, dj) in enumerate(offs):
        ds_nb += shift(dpre[k], -di, -dj)
    da = np.concatenate(
        [np.einsum("bijc,bij->c", p, ds_self), np.einsum("bijc,bij->c", p, ds_nb)]
    )
    dp += ds_self[..., None] * a[:co] + ds_nb[..., None] * a[co:]
    dp *= exf[..., None]
    dp2 = dp.reshape(-1, co)
    dw = x.reshape(-1, x.shape[-1]).T @ dp2
    dx = (dp2 @ _as_dense(w).T).reshape(x.shape) * exf[..., None]
    return dx, {"W": dw, "a": da}


# -- pooling ------------------------------------------------------------------


def pool_forward(x, ex):
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"pooling needs even grid dims, got {x.shape[1:3]}")
    out, out_ex, arg = kernels.pool_max(np.ascontiguousarray(x), ex)
    return out, out_ex, (arg,)


def pool_backward(dout, cache):
    (arg,) = cache
    return kernels.pool_max_backward(np.ascontiguousarray(dout), arg), {}


# -- vertex + feature attention -----------------------------------------------


def attention_forward(x, ex, params, offsets, vertex=True, feature=True, index=None):
    """``(1 + alpha) * h + h * F`` with per-vertex alpha and per-channel F.

    alpha comes from a linear Sage layer (c -> 1) through a sigmoid; F is a
    sigmoid of the mean and sum of existing-vertex features, each projected
    by its own c x c matrix. Disabled branches contribute zero.
    """
    exf = ex.astype(np.float64)
    b, c = x.shape[0], x.shape[-1]
    gate = np.ones((b, 1, 1, 1))
    cache = {"x": x, "exf": exf, "full": bool(ex.all()), "vertex": vertex,
             "feature": feature, "params": params}
    if vertex:
        q, vcache = sage_forward(x, ex, params["va.W"], offsets, relu=False, index=index)
        alpha = sigmoid(q[..., 0]) * exf
        gate = gate + alpha[..., None]
        cache.update(alpha=alpha, vcache=vcache)
    if feature:
        for key in ("fa_mean", "fa_sum"):
            if params[key].shape != (c, c):
                raise ShapeError(f"layer {index}: {key} {params[key].shape} != ({c}, {c})")
        nv = np.maximum(exf.sum(axis=(1, 2)), 1.0)[:, None]
        total = x.sum(axis=(1, 2))
        mean = total / nv
        fa = sigmoid(_apply(mean, params["fa_mean"]) + _apply(total, params["fa_sum"]))
        gate = gate + fa[:, None, None, :]
        cache.update(nv=nv, total=total, mean=mean, fa=fa)
    cache["gate"] = gate
    return x * gate, cache


def attention_backward(dout, cache):
    x, exf, params = cache["x"], cache["exf"], cache["params"]
    dx = dout * cache["gate"]
    grads = {}
    if cache["vertex"]:
        alpha = cache["alpha"]
        dalpha = np.einsum("bijc,bijc->bij", dout, x)
        dq = (dalpha * alpha * (1.0 - alpha))[..., None]
        dxv, g = sage_backward(dq, cache["vcache"])
        dx += dxv
        grads["va.W"] = g["W"]
    if cache["feature"]:
        fa = cache["fa"]
        dfa = np.einsum("bijc,bijc->bc", dout, x)
        dpre = dfa * fa * (1.0 - fa)
        grads["fa_mean"] = cache["mean"].T @ dpre
        grads["fa_sum"] = cache["total"].T @ dpre
        dtotal = dpre @ _as_dense(params["fa_sum"]).T
        dtotal += (dpre @ _as_dense(params["fa_mean"]).T) / cache["nv"]
        dx += dtotal[:, None, None, :]
    return _mask(dx, exf[..., None], cache["full"]), grads


# -- MLP head -----------------------------------------------------------------


def fc_forward(x, w, b, relu, index=None):
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"layer {index}: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    z = _apply(x, w) + b
    return (np.maximum(z, 0.0) if relu else z), (x, z, w, relu)


def fc_backward(dout, cache):
    x, z, w, relu = cache
    dz = dout * (z > 0) if relu else dout
    return dz @ _as_dense(w).T, {"W": x.T @ dz, "b": dz.sum(axis=0)}
