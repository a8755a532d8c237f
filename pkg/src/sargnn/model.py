"""Layer-stack configuration, parameters, and whole-model forward/backward."""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import layers
from .errors import ConfigError, ShapeError, TapeError
from .graph import Connectivity, ImageSample, magnitudes
from .sparse import sparsify

GRAPH_KINDS = ("sage", "gcn", "gat")
KINDS = GRAPH_KINDS + ("pool", "attention", "flatten", "fc")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_width: int
    out_width: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.in_width < 1 or self.out_width < 1:
            raise ConfigError(f"layer widths must be positive: {self}")
        if self.kind in ("pool", "attention", "flatten") and self.in_width != self.out_width:
            raise ConfigError(f"{self.kind} layers keep their width: {self}")

    def __str__(self):
        return f"{self.kind}:{self.in_width}:{self.out_width}"

    @classmethod
    def parse(cls, text):
        try:
            kind, cin, cout = text.strip().split(":")
            return cls(kind.strip().lower(), int(cin), int(cout))
        except ValueError as exc:
            raise ConfigError(f"bad layer spec {text!r}: expected kind:in:out") from exc


@dataclass(frozen=True)
class ModelConfig:
    connectivity: Connectivity
    input_channels: int
    grid_size: int
    stack: tuple
    num_classes: int
    vertex_attention: bool = True
    feature_attention: bool = True

    def __post_init__(self):
        object.__setattr__(self, "connectivity", Connectivity.parse(self.connectivity))
        object.__setattr__(self, "stack", tuple(self.stack))
        self.validate()

    @property
    def num_pools(self):
        return sum(s.kind == "pool" for s in self.stack)

    @property
    def num_gnn_layers(self):
        return sum(s.kind in GRAPH_KINDS for s in self.stack)

    @property
    def num_layers(self):
        """Layer count with a Flatten directly followed by FC counted once."""
        n = len(self.stack)
        for a, b in zip(self.stack, self.stack[1:]):
            if a.kind == "flatten" and b.kind == "fc":
                n -= 1
        return n

    def level_sizes(self):
        """Grid side at each pooling level, starting from the input grid."""
        return [self.grid_size >> k for k in range(self.num_pools + 1)]

    def validate(self):
        if self.grid_size < 1 or self.input_channels < 1 or self.num_classes < 1:
            raise ConfigError("grid_size, input_channels and num_classes must be positive")
        if self.grid_size % (1 << self.num_pools):
            raise ConfigError(
                f"grid_size {self.grid_size} not divisible by 2^{self.num_pools} pools"
            )
        kinds = [s.kind for s in self.stack]
        if kinds.count("flatten") != 1:
            raise ConfigError("stack needs exactly one flatten layer")
        fi = kinds.index("flatten")
        if any(k != "fc" for k in kinds[fi + 1:]) or fi == len(kinds) - 1:
            raise ConfigError("flatten must be followed by fully connected layers only")
        if "fc" in kinds[:fi]:
            raise ConfigError("fully connected layers must come after flatten")
        width = self.input_channels
        side = self.grid_size
        for i, s in enumerate(self.stack):
            if s.kind == "fc" and self.stack[i - 1].kind == "flatten":
                width = side * side * width
            if s.in_width != width:
                raise ConfigError(f"layer {i} ({s}) expects width {s.in_width}, got {width}")
            if s.kind == "pool":
                side //= 2
            width = s.out_width
        if self.stack[-1].out_width != self.num_classes:
            raise ConfigError("final layer width must equal num_classes")

    def with_stack_kind(self, kind):
        """Same config with every graph layer replaced by ``kind``."""
        if kind not in GRAPH_KINDS:
            raise ConfigError(f"not a graph layer kind: {kind}")
        stack = [replace(s, kind=kind) if s.kind in GRAPH_KINDS else s for s in self.stack]
        return replace(self, stack=tuple(stack))


def default_stack(input_channels=1, num_classes=10, grid_size=32, layer_type="sage"):
    """The default 12-layer stack.

    Grids up to 64 use three pooling stages (32/64/128 channels); larger
    grids use a narrower five-pool variant so the flattened width, and
    with it the parameter count, stays small.
    """
    g = layer_type
    c = input_channels
    if grid_size >= 128:
        widths = [(c, 16), (16, 32), (32, 64), (64, 64)]
        s = [
            LayerSpec(g, *widths[0]),
            LayerSpec("pool", 16, 16),
            LayerSpec(g, *widths[1]),
            LayerSpec("attention", 32, 32),
            LayerSpec("pool", 32, 32),
            LayerSpec(g, *widths[2]),
            LayerSpec("pool", 64, 64),
            LayerSpec(g, *widths[3]),
            LayerSpec("attention", 64, 64),
            LayerSpec("pool", 64, 64),
            LayerSpec("pool", 64, 64),
        ]
        final_c, pools = 64, 5
    else:
        s = [
            LayerSpec(g, c, 32),
            LayerSpec(g, 32, 32),
            LayerSpec("attention", 32, 32),
            LayerSpec("pool", 32, 32),
            LayerSpec(g, 32, 64),
            LayerSpec(g, 64, 64),
            LayerSpec("attention", 64, 64),
            LayerSpec("pool", 64, 64),
            LayerSpec(g, 64, 128),
            LayerSpec("attention", 128, 128),
            LayerSpec("pool", 128, 128),
        ]
        final_c, pools = 128, 3
    side = grid_size >> pools
    flat = side * side * final_c
    s += [LayerSpec("flatten", final_c, final_c), LayerSpec("fc", flat, num_classes)]
    return tuple(s)


def default_config(
    grid_size=32,
    input_channels=1,
    num_classes=10,
    layer_type="sage",
    connectivity=Connectivity.EIGHT,
    vertex_attention=True,
    feature_attention=True,
):
    return ModelConfig(
        connectivity=connectivity,
        input_channels=input_channels,
        grid_size=grid_size,
        stack=default_stack(input_channels, num_classes, grid_size, layer_type),
        num_classes=num_classes,
        vertex_attention=vertex_attention,
        feature_attention=feature_attention,
    )


# -- parameters -----------------------------------------------------------------


def param_shapes(config):
    """Ordered mapping of parameter name -> shape."""
    shapes = {}
    for i, s in enumerate(config.stack):
        p = f"L{i:02d}."
        if s.kind == "sage":
            shapes[p + "W"] = (2 * s.in_width, s.out_width)
        elif s.kind == "gcn":
            shapes[p + "W"] = (s.in_width, s.out_width)
        elif s.kind == "gat":
            shapes[p + "W"] = (s.in_width, s.out_width)
            shapes[p + "a"] = (2 * s.out_width,)
        elif s.kind == "attention":
            c = s.in_width
            if config.feature_attention:
                shapes[p + "fa_mean"] = (c, c)
                shapes[p + "fa_sum"] = (c, c)
            if config.vertex_attention:
                shapes[p + "va.W"] = (2 * c, 1)
        elif s.kind == "fc":
            shapes[p + "W"] = (s.in_width, s.out_width)
            shapes[p + "b"] = (s.out_width,)
    return shapes


def is_weight(name):
    """Biases are excluded from L1/L2 penalties and pruning."""
    return not name.endswith(".b")


class ParameterSet:
    """Named parameter arrays with optional boolean masks on weights.

    ``version`` increases whenever values change in place, which lets a
    backward pass detect a tape recorded against older parameters.
    """

    def __init__(self, values, masks=None):
        self.values = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
        self.masks = dict(masks or {})
        self.version = 0
        self.apply_masks()

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def weight_names(self):
        return [k for k in self.values if is_weight(k)]

    def bias_names(self):
        return [k for k in self.values if not is_weight(k)]

    def apply_masks(self):
        for name, mask in self.masks.items():
            if mask is not None:
                self.values[name] = np.where(mask, self.values[name], 0.0)

    def bump(self):
        self.version += 1

    def copy(self):
        out = ParameterSet(
            {k: v.copy() for k, v in self.values.items()},
            {k: (None if m is None else m.copy()) for k, m in self.masks.items()},
        )
        return out

    def num_dense(self):
        return sum(v.size for v in self.values.values())

    def num_nonzero(self):
        """Stored weights (mask-true entries, or all entries if unmasked) plus biases."""
        n = 0
        for k, v in self.values.items():
            m = self.masks.get(k)
            n += v.size if m is None else int(np.count_nonzero(m))
        return n

    def mean_abs_weight(self):
        w = np.concatenate([self.values[k].ravel() for k in self.weight_names()])
        return float(np.abs(w).mean())

    def sparse_weights(self):
        """CSR encodings of every 2-D weight matrix (mask or full)."""
        out = {}
        for k in self.weight_names():
            v = self.values[k]
            if v.ndim == 2:
                m = self.masks.get(k)
                out[k] = sparsify(v, np.ones(v.shape, bool) if m is None else m)
        return out


def init_params(config, seed=0):
    """Glorot-uniform weights from a seeded generator, zero biases."""
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in param_shapes(config).items():
        if not is_weight(name):
            values[name] = np.zeros(shape)
            continue
        fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        values[name] = rng.uniform(-limit, limit, size=shape)
    return ParameterSet(values)


# -- ingestion ----------------------------------------------------------------


def fit_to_grid(data, grid_size):
    """Centre-crop or zero-pad an H x W x C array to grid_size x grid_size."""
    h, w, c = data.shape
    out = np.zeros((grid_size, grid_size, c))
    sh, sw = max(0, (h - grid_size) // 2), max(0, (w - grid_size) // 2)
    dh, dw = max(0, (grid_size - h) // 2), max(0, (grid_size - w) // 2)
    nh, nw = min(h, grid_size), min(w, grid_size)
    out[dh:dh + nh, dw:dw + nw] = data[sh:sh + nh, sw:sw + nw]
    return out


def prepare_batch(config, samples, iv=0.0):
    """Stack samples into ``(x, ex, pruned_fraction)`` after input pruning."""
    datas = []
    for s in samples:
        d = s.data if isinstance(s, ImageSample) else ImageSample(s).data
        if d.shape[2] != config.input_channels:
            raise ShapeError(f"sample has {d.shape[2]} channels, config expects {config.input_channels}")
        if d.shape[:2] != (config.grid_size, config.grid_size):
            d = fit_to_grid(d, config.grid_size)
        datas.append(d)
    x = np.stack(datas) if datas else np.zeros((0, config.grid_size, config.grid_size, config.input_channels))
    ex = ~(magnitudes(x) < iv)
    x = np.where(ex[..., None], x, 0.0)
    frac = 1.0 - ex.mean(axis=(1, 2)) if len(datas) else np.zeros(0)
    return np.ascontiguousarray(x), ex, frac


# -- forward / backward -------------------------------------------------------


@dataclass
class ActivationTape:
    caches: list
    kinds: list
    params: ParameterSet
    version: int
    batch_size: int
    exists: list = field(default_factory=list)
    inputs: list = None


def _layer_params(params, index, weights):
    p = f"L{index:02d}."
    out = {}
    for name in params.values:
        if name.startswith(p):
            local = name[len(p):]
            out[local] = weights.get(name, params.values[name])
    return out


def forward_batch(config, params, x, ex, sparse=False, check=False, keep_inputs=False):
    """Run the stack on a batch. Returns ``(logits[B, classes], tape)``.

    With ``sparse=True`` every 2-D weight is applied through its CSR encoding.
    ``check=True`` asserts that non-existing vertices stay zero after each layer.
    ``keep_inputs=True`` stores each layer's input and existence grid on the tape.
    """
    weights = params.sparse_weights() if sparse else {}
    offsets = config.connectivity.offsets
    tape = ActivationTape([], [], params, params.version, x.shape[0], [ex])
    n_fc = sum(s.kind == "fc" for s in config.stack)
    fc_seen = 0
    h = x
    if keep_inputs:
        tape.inputs = []
    for i, spec in enumerate(config.stack):
        if keep_inputs:
            tape.inputs.append((h, ex))
        lp = _layer_params(params, i, weights)
        if spec.kind == "sage":
            h, cache = layers.sage_forward(h, ex, lp["W"], offsets, index=i)
        elif spec.kind == "gcn":
            h, cache = layers.gcn_forward(h, ex, lp["W"], offsets, index=i)
        elif spec.kind == "gat":
            h, cache = layers.gat_forward(h, ex, lp["W"], lp["a"], offsets, index=i)
        elif spec.kind == "pool":
            h, ex, cache = layers.pool_forward(h, ex)
            tape.exists.append(ex)
        elif spec.kind == "attention":
            h, cache = layers.attention_forward(
                h, ex, lp, offsets, config.vertex_attention, config.feature_attention, index=i
            )
        elif spec.kind == "flatten":
            cache = h.shape
            h = h.reshape(h.shape[0], -1)
        else:
            fc_seen += 1
            h, cache = layers.fc_forward(h, lp["W"], lp["b"], relu=fc_seen < n_fc, index=i)
        if check and h.ndim == 4 and np.any(h[~ex] != 0):
            raise AssertionError(f"layer {i} produced features at non-existing vertices")
        tape.caches.append(cache)
        tape.kinds.append(spec.kind)
    return h, tape


def model_backward(tape, logits_grad):
    """Reverse-mode gradients of ``sum(logits * logits_grad)`` w.r.t. parameters."""
    if tape.version != tape.params.version:
        raise TapeError("parameters changed since this tape was recorded")
    g = np.asarray(logits_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape[0] != tape.batch_size:
        raise TapeError(f"gradient batch {g.shape[0]} != tape batch {tape.batch_size}")
    grads = {}
    for i in range(len(tape.caches) - 1, -1, -1):
        kind, cache = tape.kinds[i], tape.caches[i]
        if kind == "sage":
            g, local = layers.sage_backward(g, cache)
        elif kind == "gcn":
            g, local = layers.gcn_backward(g, cache)
        elif kind == "gat":
            g, local = layers.gat_backward(g, cache)
        elif kind == "pool":
            g, local = layers.pool_backward(g, cache)
        elif kind == "attention":
            g, local = layers.attention_backward(g, cache)
        elif kind == "flatten":
            g, local = g.reshape(cache), {}
        else:
            g, local = layers.fc_backward(g, cache)
        for k, v in local.items():
            grads[f"L{i:02d}.{k}"] = v
    for name, mask in tape.params.masks.items():
        if mask is not None and name in grads:
            grads[name] = np.where(mask, grads[name], 0.0)
    return grads


def model_forward(config, params, sample, iv=0.0, sparse=False):
    """Single-sample inference: logits vector and tape."""
    x, ex, _ = prepare_batch(config, [sample], iv)
    logits, tape = forward_batch(config, params, x, ex, sparse=sparse)
    return logits[0], tape


def predict(config, params, samples, iv=0.0, batch_size=64, sparse=False):
    """Logits for a sequence of samples, computed in chunks."""
    samples = list(samples)
    out = []
    for k in range(0, len(samples), batch_size):
        x, ex, _ = prepare_batch(config, samples[k:k + batch_size], iv)
        logits, _ = forward_batch(config, params, x, ex, sparse=sparse)
        out.append(logits)
    return np.concatenate(out) if out else np.zeros((0, config.num_classes))


def kink_margin(config, params, x, ex):
    """Distance of the batch from the nearest non-differentiable point.

    Minimum over |pre-activation| of every ReLU/LeakyReLU at a live unit and
    over the gap between the two largest live children of every max-pool
    block whose maximum is positive. Finite differences with a step well
    below this margin see a smooth function.
    """
    _, tape = forward_batch(config, params, x, ex, keep_inputs=True)
    best = np.inf
    for (h, live), kind, cache in zip(tape.inputs, tape.kinds, tape.caches):
        vals = []
        if kind in ("sage", "gcn"):
            relu = cache[8] if kind == "sage" else True
            if relu:
                vals.append(cache[3][live])
        elif kind == "gat":
            pre, valid, out = cache[5], cache[6], cache[10]
            vals += [pre[valid], out[live]]
        elif kind == "fc" and cache[3]:
            vals.append(cache[1])
        elif kind == "pool":
            b, hh, ww, c = h.shape
            blk = h.reshape(b, hh // 2, 2, ww // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
            ok = live.reshape(b, hh // 2, 2, ww // 2, 2).transpose(0, 1, 3, 2, 4)
            blk = np.where(ok[:, :, :, None], blk, -np.inf).reshape(b, hh // 2, ww // 2, c, 4)
            top2 = -np.sort(-blk, axis=-1)[..., :2]
            gap = top2[..., 0] - top2[..., 1]
            vals.append(gap[(top2[..., 0] > 0) & np.isfinite(gap)])
        for v in vals:
            if v.size:
                best = min(best, float(np.abs(v).min()))
    return best


def activation_pattern(tape):
    """Branch taken by every piecewise unit: ReLU signs and max-pool winners."""
    pat = []
    for kind, cache in zip(tape.kinds, tape.caches):
        if kind == "sage" and cache[8] or kind == "gcn":
            pat.append(cache[3] > 0)
        elif kind == "gat":
            pat += [cache[5] > 0, cache[10] > 0]
        elif kind == "fc" and cache[3]:
            pat.append(cache[1] > 0)
        elif kind == "pool":
            pat.append(cache[0])
    return pat


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    skipped: int  # coordinates whose +-epsilon probe crossed a kink
    worst: tuple = None  # (name, index) of the largest error

    def ok(self, tolerance):
        return self.checked > 0 and self.max_rel_err <= tolerance


def gradient_check(config, params, sample, epsilon=1e-5, n_coords=200, seed=0, iv=0.0,
                   floor=1e-6):
    """Compare analytic gradients with central differences.

    The objective is a fixed random projection of the logits. Up to
    ``n_coords`` parameter coordinates are drawn at random (all of them if
    fewer exist). Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    A coordinate whose probes change the activation pattern straddles a
    kink, where central differences are meaningless; it is skipped and
    counted instead.
    """
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(config.num_classes)
    x, ex, _ = prepare_batch(config, [sample], iv)

    def probe():
        logits, tape = forward_batch(config, params, x, ex)
        return float(logits[0] @ r), activation_pattern(tape)

    _, tape = forward_batch(config, params, x, ex)
    base = activation_pattern(tape)
    analytic = model_backward(tape, r)
    coords = [(k, idx) for k in params for idx in np.ndindex(params[k].shape)
              if params.masks.get(k) is None or params.masks[k][idx]]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[j] for j in sorted(pick)]
    worst, where, checked, skipped = 0.0, None, 0, 0
    for name, idx in coords:
        arr = params.values[name]
        old = arr[idx]
        arr[idx] = old + epsilon
        fp, pat_p = probe()
        arr[idx] = old - epsilon
        fm, pat_m = probe()
        arr[idx] = old
        if not (_same_pattern(base, pat_p) and _same_pattern(base, pat_m)):
            skipped += 1
            continue
        checked += 1
        numeric = (fp - fm) / (2 * epsilon)
        a = analytic[name][idx]
        err = float(abs(a - numeric) / max(abs(a), abs(numeric), floor))
        if where is None or err > worst:
            worst, where = err, (name, idx)
    return GradCheckResult(worst, checked, skipped, where)
