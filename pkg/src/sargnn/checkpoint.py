"""Checkpoint files: a text header followed by binary parameter blocks.

Layout::

    SGRCKPT1
    connectivity = 8
    input_channels = 1
    grid_size = 32
    num_classes = 10
    vertex_attention = true
    feature_attention = true
    layer = sage:1:32          (one line per layer, in order)
    seed = 7
    epoch = 12
    end_header

Each block after the header, little-endian: u32 name length, utf-8 name,
u32 rows, u32 cols, u8 flag. Flag 0 is followed by rows*cols float64
values (row-major). Flag 1 marks a masked matrix in CSR form: u32 nnz,
(rows + 1) u32 row offsets, nnz u32 column indices, nnz float64 values.
Vectors are stored as a single row.
"""

from dataclasses import dataclass
import struct

import numpy as np

from .errors import ConfigError, FormatError
from .model import LayerSpec, ModelConfig, ParameterSet, param_shapes
from .sparse import SparseMatrix, densify, sparsify

MAGIC = "SGRCKPT1"
END = "end_header"
DENSE, SPARSE = 0, 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParameterSet
    seed: int = 0
    epoch: int = 0


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def config_lines(config):
    lines = [
        f"connectivity = {config.connectivity.value}",
        f"input_channels = {config.input_channels}",
        f"grid_size = {config.grid_size}",
        f"num_classes = {config.num_classes}",
        f"vertex_attention = {str(config.vertex_attention).lower()}",
        f"feature_attention = {str(config.feature_attention).lower()}",
    ]
    return lines + [f"layer = {s}" for s in config.stack]


def dumps(ckpt):
    header = [MAGIC] + config_lines(ckpt.config)
    header += [f"seed = {int(ckpt.seed)}", f"epoch = {int(ckpt.epoch)}", END]
    out = bytearray("\n".join(header).encode() + b"\n")
    shapes = param_shapes(ckpt.config)
    for name in shapes:
        v = ckpt.params.values[name]
        mat = v.reshape(1, -1) if v.ndim == 1 else v
        rows, cols = mat.shape
        enc = name.encode()
        mask = ckpt.params.masks.get(name)
        out += _U32.pack(len(enc)) + enc
        out += struct.pack("<IIB", rows, cols, DENSE if mask is None else SPARSE)
        if mask is None:
            out += np.ascontiguousarray(mat, dtype="<f8").tobytes()
        else:
            sp = sparsify(mat, mask.reshape(mat.shape))
            out += _U32.pack(sp.nnz)
            out += sp.row_offsets.astype("<u4").tobytes()
            out += sp.col_indices.astype("<u4").tobytes()
            out += sp.values.astype("<f8").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, buf, pos):
        self.buf = buf
        self.pos = pos

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(len(self.buf), f"truncated {what}: need {n} bytes at {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def array(self, dtype, count, what):
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size, what), dtype=dtype, count=count)


def _parse_header(buf):
    end_marker = ("\n" + END + "\n").encode()
    stop = buf.find(end_marker)
    if not buf.startswith(MAGIC.encode() + b"\n"):
        raise FormatError(0, "bad magic (expected SGRCKPT1)")
    if stop < 0:
        raise FormatError(len(buf), "missing end_header line")
    try:
        text = buf[:stop].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(exc.start, "header is not utf-8") from exc
    fields, stack = {}, []
    offset = len(MAGIC) + 1
    for line in text.split("\n")[1:]:
        if "=" not in line:
            raise FormatError(offset, f"bad header line {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key == "layer":
            try:
                stack.append(LayerSpec.parse(value))
            except ConfigError as exc:
                raise FormatError(offset, str(exc)) from exc
        elif key in fields:
            raise FormatError(offset, f"duplicate header key {key!r}")
        else:
            fields[key] = (value, offset)
        offset += len(line.encode()) + 1
    conv = {
        "connectivity": int, "input_channels": int, "grid_size": int, "num_classes": int,
        "vertex_attention": _bool, "feature_attention": _bool, "seed": int, "epoch": int,
    }
    unknown = set(fields) - set(conv)
    if unknown:
        key = sorted(unknown)[0]
        raise FormatError(fields[key][1], f"unknown header key {key!r}")
    vals = {}
    for key, fn in conv.items():
        if key not in fields:
            raise FormatError(stop, f"header missing {key!r}")
        value, off = fields[key]
        try:
            vals[key] = fn(value)
        except ValueError as exc:
            raise FormatError(off, f"bad value for {key}: {value!r}") from exc
    try:
        config = ModelConfig(
            connectivity=vals["connectivity"],
            input_channels=vals["input_channels"],
            grid_size=vals["grid_size"],
            stack=stack,
            num_classes=vals["num_classes"],
            vertex_attention=vals["vertex_attention"],
            feature_attention=vals["feature_attention"],
        )
    except (ConfigError, ValueError) as exc:
        raise FormatError(0, f"invalid model config: {exc}") from exc
    return config, vals["seed"], vals["epoch"], stop + len(end_marker)


def loads(buf):
    """Parse checkpoint bytes; any defect raises :class:`FormatError`."""
    buf = bytes(buf)
    config, seed, epoch, pos = _parse_header(buf)
    shapes = param_shapes(config)
    r = _Reader(buf, pos)
    values, masks = {}, {}
    for name, shape in shapes.items():
        start = r.pos
        n = r.u32("block name length")
        if n > 256:
            raise FormatError(start, f"implausible name length {n}")
        try:
            got = r.take(n, "block name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(start + 4, "block name is not utf-8") from exc
        if got != name:
            raise FormatError(start, f"expected block {name!r}, found {got!r}")
        rows, cols = r.u32("rows"), r.u32("cols")
        want = (1, shape[0]) if len(shape) == 1 else shape
        if (rows, cols) != tuple(want):
            raise FormatError(start, f"{name}: shape {rows}x{cols}, config expects {want}")
        flag = r.take(1, "storage flag")[0]
        if flag == DENSE:
            mat = r.array("<f8", rows * cols, f"{name} values").reshape(rows, cols)
            mask = None
        elif flag == SPARSE:
            nnz = r.u32("nnz")
            if nnz > rows * cols:
                raise FormatError(r.pos - 4, f"{name}: nnz {nnz} exceeds {rows * cols}")
            ro = r.array("<u4", rows + 1, f"{name} row offsets").astype(np.int_)
            ci = r.array("<u4", nnz, f"{name} column indices").astype(np.int_)
            va = r.array("<f8", nnz, f"{name} values").astype(np.float64)
            sp = SparseMatrix(rows, cols, ro, ci, va)
            if ro[-1] != nnz:
                raise FormatError(start, f"{name}: row offsets end at {ro[-1]}, nnz is {nnz}")
            try:
                sp.validate()
            except ValueError as exc:
                raise FormatError(start, f"{name}: {exc}") from exc
            mat, mask = densify(sp), sp.mask()
        else:
            raise FormatError(r.pos - 1, f"{name}: unknown storage flag {flag}")
        if not np.all(np.isfinite(mat)):
            raise FormatError(start, f"{name}: non-finite value")
        values[name] = np.array(mat).reshape(shape)
        if mask is not None:
            masks[name] = mask.reshape(shape)
    if r.pos != len(buf):
        raise FormatError(r.pos, f"{len(buf) - r.pos} trailing bytes")
    return Checkpoint(config, ParameterSet(values, masks), seed, epoch)


def save(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
