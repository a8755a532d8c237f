"""Magnitude weight pruning, FLOP/parameter accounting, and pruning sweeps.

FLOP convention: one multiply = 1, one add = 1, one comparison = 1, one
divide/exp/sigmoid = 1 per element; ReLU and LeakyReLU are free. Per
layer, with V live vertices, M directed live messages (twice the undirected
live edges) and N = nnz of the weight (c_in * c_out when dense):

====================  ==========================  =====================
layer                 aggregate                   update
====================  ==========================  =====================
sage                  M * c_in                    2 * N * V
gcn                   2 * (M + V) * c_in          2 * N * V
gat                   (M + V) * (4 + 2 * c_out)   2 * N * V + 2 * nnz(a) * V
pool                  (children - 1) * c per live output vertex
attention             vertex branch: M * c + 2 * nnz(va) * V + V (sigmoid)
                      feature branch: V * c + c + 2 * nnz(fa_mean) + 2 * nnz(fa_sum) + 2c
                      gating h * (1 + alpha + F): V * c mults plus the adds
fc                    2 * N + c_out
====================  ==========================  =====================

The GCN normalisation coefficients and the Sage mean divisor are per-graph
constants and are not counted. Aggregation is charged to live messages only.
"""

from dataclasses import dataclass, field

import numpy as np

from .graph import count_edges
from .model import ParameterSet, is_weight, prepare_batch
from .sparse import SparseMatrix, densify, dense_times_sparse, sparse_apply, sparsify

__all__ = [
    "SparseMatrix", "sparsify", "densify", "sparse_apply", "dense_times_sparse",
    "prune_weights", "LevelStats", "level_stats", "LayerCost", "CostReport",
    "count_flops", "sweep", "SweepRow", "sweep_tsv",
]


def prune_weights(params, iw):
    """Mask out weights with ``|w| < iw``. Biases are never pruned.

    Returns ``(pruned_params, stats)`` where stats maps each weight name to
    its pruned fraction and ``"overall"`` to the fraction across all weights.
    """
    out = params.copy()
    stats = {}
    total = pruned = 0
    for name in out.weight_names():
        w = out.values[name]
        keep = ~(np.abs(w) < iw)
        old = out.masks.get(name)
        if old is not None:
            keep &= old
        out.masks[name] = keep
        n_pruned = int(w.size - np.count_nonzero(keep))
        stats[name] = n_pruned / w.size
        total += w.size
        pruned += n_pruned
    out.apply_masks()
    stats["overall"] = pruned / total if total else 0.0
    return out, stats


def weight_pruned_fraction(params):
    total = pruned = 0
    for name in params.weight_names():
        m = params.masks.get(name)
        total += params.values[name].size
        if m is not None:
            pruned += int(m.size - np.count_nonzero(m))
    return pruned / total if total else 0.0


# -- structural statistics ------------------------------------------------------


@dataclass
class LevelStats:
    """Live structure at one pooling level (means when averaged over samples)."""

    side: int
    vertices: float
    edges: float  # undirected live edges
    pool_comparisons: float = 0.0  # sum over live parents of (live children - 1)

    @property
    def messages(self):
        return 2 * self.edges


def level_stats(config, exists):
    """Per-level stats for one existence grid (H, W) or the mean over a batch."""
    ex = np.asarray(exists, dtype=bool)
    if ex.ndim == 2:
        ex = ex[None]
    b = ex.shape[0]
    out = []
    for level in range(config.num_pools + 1):
        side = ex.shape[1]
        verts = ex.sum() / b
        edges = count_edges(ex, config.connectivity) / b
        comps = 0.0
        if level < config.num_pools:
            kids = ex.reshape(b, side // 2, 2, side // 2, 2).sum(axis=(2, 4))
            comps = np.maximum(kids - 1, 0).sum() / b
            nxt = kids > 0
        out.append(LevelStats(side, float(verts), float(edges), float(comps)))
        if level < config.num_pools:
            ex = nxt
    return out


def full_grid_stats(config):
    return level_stats(config, np.ones((config.grid_size, config.grid_size), bool))


# -- FLOP counting --------------------------------------------------------------


@dataclass
class LayerCost:
    index: int
    kind: str
    level: int
    vertices: float
    aggregate: float = 0.0
    update: float = 0.0
    other: float = 0.0

    @property
    def total(self):
        return self.aggregate + self.update + self.other


TSV_HEADER = "layer\tkind\tlevel\tvertices\taggregate\tupdate\tother\ttotal"


@dataclass
class CostReport:
    layers: list
    params_dense: int
    params_nonzero: int
    vertices_per_level: list
    vertex_pruned_fraction: float = 0.0
    weight_pruned_fraction: float = 0.0
    baseline_flops: float = None
    notes: list = field(default_factory=list)

    @property
    def total(self):
        return sum(c.total for c in self.layers)

    def to_tsv(self):
        rows = [TSV_HEADER]
        for c in self.layers:
            rows.append(f"{c.index}\t{c.kind}\t{c.level}\t{_fmt(c.vertices)}\t{_fmt(c.aggregate)}"
                        f"\t{_fmt(c.update)}\t{_fmt(c.other)}\t{_fmt(c.total)}")
        rows.append(f"total\t-\t-\t-\t-\t-\t-\t{_fmt(self.total)}")
        return "\n".join(rows) + "\n"

    def to_text(self):
        lines = [
            f"FLOPs per sample: {_fmt(self.total)}",
            f"parameters (dense): {self.params_dense}",
            f"parameters (stored): {self.params_nonzero}",
            f"vertices per level: {' '.join(_fmt(v) for v in self.vertices_per_level)}",
            f"vertex pruned: {100 * self.vertex_pruned_fraction:.2f}%",
            f"weight pruned: {100 * self.weight_pruned_fraction:.2f}%",
        ]
        if self.baseline_flops:
            ratio = self.baseline_flops / self.total if self.total else float("inf")
            lines.append(f"baseline FLOPs: {_fmt(self.baseline_flops)} (this model is 1/{ratio:.1f})")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else f"{v:.6g}"


def _nnz(params, name):
    if params is None:
        return None
    m = params.masks.get(name)
    return params.values[name].size if m is None else int(np.count_nonzero(m))


def count_flops(config, stats=None, params=None, vertex_pruned_fraction=0.0, baseline_flops=None):
    """Exact per-sample FLOP and parameter accounting.

    ``stats`` is the list returned by :func:`level_stats` (default: full grid);
    ``params`` supplies masks (default: dense weights of the config's shapes).
    """
    from .model import param_shapes

    stats = full_grid_stats(config) if stats is None else stats
    if len(stats) != config.num_pools + 1:
        raise ValueError(f"expected {config.num_pools + 1} levels of stats, got {len(stats)}")
    shapes = param_shapes(config)

    def nnz(name):
        n = _nnz(params, name)
        return int(np.prod(shapes[name])) if n is None else n

    level = 0
    costs = []
    for i, spec in enumerate(config.stack):
        p = f"L{i:02d}."
        st = stats[level]
        v, m = st.vertices, st.messages
        ci, co = spec.in_width, spec.out_width
        c = LayerCost(i, spec.kind, level, v)
        if spec.kind == "sage":
            c.aggregate = m * ci
            c.update = 2 * nnz(p + "W") * v
        elif spec.kind == "gcn":
            c.aggregate = 2 * (m + v) * ci
            c.update = 2 * nnz(p + "W") * v
        elif spec.kind == "gat":
            c.aggregate = (m + v) * (4 + 2 * co)
            c.update = 2 * nnz(p + "W") * v + 2 * nnz(p + "a") * v
        elif spec.kind == "pool":
            c.other = st.pool_comparisons * ci
            level += 1
        elif spec.kind == "attention":
            va, fa = config.vertex_attention, config.feature_attention
            if va:
                c.aggregate += m * ci
                c.update += 2 * nnz(p + "va.W") * v
                c.other += v  # sigmoid
            if fa:
                c.other += v * ci + ci  # sum, mean
                c.update += 2 * nnz(p + "fa_mean") + 2 * nnz(p + "fa_sum")
                c.other += 2 * ci  # add, sigmoid
            if va and fa:
                c.other += v + v * ci + v * ci  # 1 + alpha, + F, multiply
            elif va:
                c.other += v + v * ci
            elif fa:
                c.other += ci + v * ci
        elif spec.kind == "fc":
            c.update = 2 * nnz(p + "W") + co
        costs.append(c)
    dense = sum(int(np.prod(s)) for s in shapes.values())
    stored = dense if params is None else params.num_nonzero()
    return CostReport(
        layers=costs,
        params_dense=dense,
        params_nonzero=stored,
        vertices_per_level=[s.vertices for s in stats],
        vertex_pruned_fraction=vertex_pruned_fraction,
        weight_pruned_fraction=0.0 if params is None else weight_pruned_fraction(params),
        baseline_flops=baseline_flops,
    )


def dataset_cost(config, params, samples, iv=0.0, baseline_flops=None):
    """Mean per-sample cost over a dataset after input pruning at ``iv``.

    Every count is linear in the level statistics, so the report of the mean
    statistics equals the mean of per-sample reports.
    """
    _, ex, frac = prepare_batch(config, list(samples), iv)
    stats = level_stats(config, ex)
    return count_flops(config, stats, params, float(frac.mean()), baseline_flops)


# -- sweep ----------------------------------------------------------------------


@dataclass
class SweepRow:
    iv: float
    iw: float
    vtx_pruned_pct: float
    w_pruned_pct: float
    acc: float
    flops: float


SWEEP_HEADER = "iv\tiw\tvtx_pruned_pct\tw_pruned_pct\tacc\tflops"


def sweep(config, params, dataset, iv_list, iw_list, sparse=False, batch_size=128):
    """Accuracy and cost for every (I_v, I_w) pair, sorted by (I_v, I_w)."""
    from .model import forward_batch

    samples = list(dataset)
    labels = np.array([s.label for s in samples])
    pruned = {iw: prune_weights(params, iw) for iw in sorted(set(iw_list))}
    rows = []
    for iv in sorted(set(iv_list)):
        x, ex, frac = prepare_batch(config, samples, iv)
        stats = level_stats(config, ex)
        for iw in sorted(set(iw_list)):
            p, st = pruned[iw]
            preds = []
            for k in range(0, len(samples), batch_size):
                logits, _ = forward_batch(config, p, x[k:k + batch_size], ex[k:k + batch_size],
                                          sparse=sparse)
                preds.append(np.argmax(logits, axis=1))
            acc = float(np.mean(np.concatenate(preds) == labels)) if samples else float("nan")
            cost = count_flops(config, stats, p)
            rows.append(SweepRow(iv, iw, 100 * float(frac.mean()), 100 * st["overall"], acc,
                                 cost.total))
    return rows


def sweep_tsv(rows):
    out = [SWEEP_HEADER]
    for r in rows:
        out.append(f"{r.iv:g}\t{r.iw:g}\t{r.vtx_pruned_pct:.4f}\t{r.w_pruned_pct:.4f}"
                   f"\t{r.acc:.4f}\t{_fmt(r.flops)}")
    return "\n".join(out) + "\n"
