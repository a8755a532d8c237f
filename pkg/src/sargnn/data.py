"""Sample/manifest I/O, stratified splitting, and the synthetic target generator.

Sample files ("SGR1"), little-endian::

    magic  b"SGR1"      4 bytes
    height, width, channels, label    u32 each
    values  float32 x height*width*channels, row-major (row, col, channel)

A dataset is a directory holding sample files and a manifest: a header line
``classes=<N>`` followed by one sample filename per line.
"""

from dataclasses import dataclass, field
import logging
import math
import os
from pathlib import Path
import struct

import numpy as np

from .errors import DatasetError, FormatError, IngestionError, InvalidInputError
from .graph import ImageSample

log = logging.getLogger(__name__)

MAGIC = b"SGR1"
HEADER = struct.Struct("<4sIIII")
MAX_VALUES = 1 << 28  # refuse absurd headers before allocating


def write_sample(sample):
    h, w, c = sample.data.shape
    return HEADER.pack(MAGIC, h, w, c, sample.label) + sample.data.astype("<f4").tobytes()


def read_sample(buf):
    """Parse one sample; every rejection raises :class:`FormatError` with an offset."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise FormatError(0, f"truncated magic ({len(buf)} of 4 bytes)")
    if buf[:4] != MAGIC:
        raise FormatError(0, f"bad magic {buf[:4]!r}")
    if len(buf) < HEADER.size:
        raise FormatError(len(buf), f"truncated header ({len(buf)} of {HEADER.size} bytes)")
    _, h, w, c, label = HEADER.unpack_from(buf)
    for off, name, v in ((4, "height", h), (8, "width", w), (12, "channels", c)):
        if v == 0:
            raise FormatError(off, f"zero {name}")
    n = h * w * c
    if n > MAX_VALUES:
        raise FormatError(4, f"dimension overflow: {h}x{w}x{c} values")
    need = HEADER.size + 4 * n
    if len(buf) < need:
        raise FormatError(len(buf), f"truncated payload: expected {need} bytes, got {len(buf)}")
    if len(buf) > need:
        raise FormatError(need, f"{len(buf) - need} trailing bytes")
    values = np.frombuffer(buf, dtype="<f4", count=n, offset=HEADER.size)
    bad = ~np.isfinite(values)
    if bad.any():
        k = int(np.argmax(bad))
        coord = np.unravel_index(k, (h, w, c))
        raise FormatError(HEADER.size + 4 * k, f"non-finite value at pixel {tuple(map(int, coord))}")
    return ImageSample(values.reshape(h, w, c).astype(np.float64), label)


def save_sample(path, sample):
    Path(path).write_bytes(write_sample(sample))


def load_sample(path):
    return read_sample(Path(path).read_bytes())


@dataclass
class Dataset:
    samples: list
    num_classes: int
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, idx):
        idx = list(idx)
        names = [self.names[i] for i in idx] if self.names else []
        return Dataset([self.samples[i] for i in idx], self.num_classes, names)


def write_manifest(path, names, num_classes):
    path = Path(path)
    lines = [f"classes={num_classes}"] + list(names)
    path.write_text("\n".join(lines) + "\n")


def load_dataset(manifest, expected_dims=None):
    """Load every sample listed in a manifest.

    ``expected_dims`` optionally pins (height, width, channels).
    """
    manifest = Path(manifest)
    try:
        lines = manifest.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {manifest}: {exc}") from exc
    if not lines or not lines[0].startswith("classes="):
        raise DatasetError(f"{manifest}:1: missing 'classes=<N>' header")
    try:
        num_classes = int(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise DatasetError(f"{manifest}:1: bad class count") from exc
    if num_classes < 1:
        raise DatasetError(f"{manifest}:1: class count must be positive")
    samples, names, seen = [], [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        name = line.strip()
        if not name or name.startswith("#"):
            continue
        if name in seen:
            raise DatasetError(f"{manifest}:{lineno}: duplicate entry {name}")
        seen.add(name)
        path = manifest.parent / name
        if not path.is_file():
            raise DatasetError(f"{manifest}:{lineno}: missing file {name}")
        try:
            s = load_sample(path)
        except (FormatError, IngestionError) as exc:
            raise DatasetError(f"{manifest}:{lineno}: {name}: {exc}") from exc
        if s.label >= num_classes:
            raise DatasetError(f"{manifest}:{lineno}: label {s.label} >= classes {num_classes}")
        if expected_dims is not None and s.data.shape != tuple(expected_dims):
            raise DatasetError(
                f"{manifest}:{lineno}: dims {s.data.shape} != expected {tuple(expected_dims)}"
            )
        samples.append(s)
        names.append(name)
    if not samples:
        log.warning("manifest %s lists no samples", manifest)
    return Dataset(samples, num_classes, names)


def split(dataset, fraction, seed=0):
    """Stratified seeded split into (train, test).

    Per class, ``floor((1 - fraction) * n)`` samples go to test and the rest
    (including any rounding remainder) to train. Original order is kept
    inside each part.
    """
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"fraction must be in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(math.floor((1.0 - fraction) * len(idx) + 1e-9))
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


# -- synthetic generator ------------------------------------------------------

CANVAS = 16


def _shape_library():
    r = np.arange(CANVAS)
    ii, jj = np.meshgrid(r, r, indexing="ij")
    hbar = (ii >= 7) & (ii <= 8) & (jj >= 1) & (jj <= 14)
    vbar = (jj >= 7) & (jj <= 8) & (ii >= 1) & (ii <= 14)
    diag = ((ii == jj) | (ii == jj + 1)) & (jj >= 1) & (jj <= 14)
    anti = ((ii + jj == 15) | (ii + jj == 16)) & (ii >= 1) & (ii <= 14)
    outer = (ii >= 2) & (ii <= 13) & (jj >= 2) & (jj <= 13)
    inner = (ii >= 4) & (ii <= 11) & (jj >= 4) & (jj <= 11)
    corner = np.zeros((CANVAS, CANVAS), bool)
    for a in (2, 11):
        for b in (2, 11):
            corner[a:a + 3, b:b + 3] = True
    return {
        "bar": hbar,
        "cross": hbar | vbar,
        "ell": ((jj >= 2) & (jj <= 3) & (ii >= 1) & (ii <= 14))
        | ((ii >= 13) & (ii <= 14) & (jj >= 2) & (jj <= 13)),
        "tee": ((ii >= 1) & (ii <= 2) & (jj >= 1) & (jj <= 14))
        | ((jj >= 7) & (jj <= 8) & (ii >= 3) & (ii <= 14)),
        "square": inner,
        "diag": diag,
        "xcross": diag | anti,
        "ring": outer & ~inner,
        "twobars": (((ii >= 4) & (ii <= 5)) | ((ii >= 10) & (ii <= 11))) & (jj >= 1) & (jj <= 14),
        "corners": corner,
    }


SHAPES = _shape_library()
DEFAULT_SHAPES = ("bar", "cross", "ell", "tee", "square", "diag", "xcross", "ring", "twobars", "corners")
SHIP_SHAPES = ("clutter", "bar")


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    per_class: int = 100
    size: int = 32
    channels: int = 1
    background: tuple = (0.0, 0.05)
    intensity: tuple = (0.5, 1.5)
    max_shift: int = 4
    rotate: bool = True
    shapes: tuple = DEFAULT_SHAPES
    train_fraction: float = 0.8
    clutter_pixels: int = 30
    falloff: bool = True  # scale target returns by local 3x3 target density
    seed: int = 0

    def class_shapes(self):
        if self.num_classes > len(self.shapes):
            raise InvalidInputError(
                f"{self.num_classes} classes requested but only {len(self.shapes)} shapes defined"
            )
        return self.shapes[:self.num_classes]


def ship_spec(**kw):
    """Two-class spec: class 0 scattered clutter, class 1 an elongated target."""
    kw.setdefault("num_classes", 2)
    kw.setdefault("shapes", SHIP_SHAPES)
    return SynthSpec(**kw)


def class_mask(name):
    """Canonical (un-jittered) binary mask of a named shape."""
    if name not in SHAPES:
        raise InvalidInputError(f"unknown or random shape {name!r}")
    return SHAPES[name].copy()


def _channel_split(mag, channels, rng):
    """Spread magnitudes over non-negative channels keeping the Euclidean norm."""
    if channels == 1:
        return mag[..., None]
    u = np.abs(rng.standard_normal(mag.shape + (channels,))) + 1e-3
    u /= np.sqrt((u * u).sum(axis=-1, keepdims=True))
    return mag[..., None] * u


def target_density(mask):
    """Fraction of each pixel's 3x3 window covered by the target."""
    m = np.pad(mask.astype(np.float64), 1)
    h, w = mask.shape
    acc = sum(m[1 + di:1 + di + h, 1 + dj:1 + dj + w] for di in (-1, 0, 1) for dj in (-1, 0, 1))
    return acc / 9.0


def _render(spec, shape_name, rng):
    s = spec.size
    if shape_name == "clutter":
        canvas = np.zeros((CANVAS, CANVAS), bool)
        flat = rng.choice(CANVAS * CANVAS, size=spec.clutter_pixels, replace=False)
        canvas.flat[flat] = True
    else:
        canvas = SHAPES[shape_name]
    if spec.rotate:
        canvas = np.rot90(canvas, k=int(rng.integers(4)))
    shift = min(spec.max_shift, (s - CANVAS) // 2)
    dy, dx = rng.integers(-shift, shift + 1, size=2) if shift > 0 else (0, 0)
    top, left = (s - CANVAS) // 2 + dy, (s - CANVAS) // 2 + dx
    mask = np.zeros((s, s), bool)
    mask[top:top + CANVAS, left:left + CANVAS] = canvas
    mag = rng.uniform(*spec.background, size=(s, s))
    gain = target_density(mask) if spec.falloff and shape_name != "clutter" else np.ones((s, s))
    mag[mask] = rng.uniform(*spec.intensity, size=int(mask.sum())) * gain[mask]
    # float32-representable so on-disk round trips are exact
    return _channel_split(mag, spec.channels, rng).astype(np.float32).astype(np.float64)


def check_spec(spec):
    """Raise if the spec cannot produce sparse, distinguishable classes."""
    if spec.size < CANVAS:
        raise InvalidInputError(f"image size {spec.size} smaller than target canvas {CANVAS}")
    names = spec.class_shapes()
    for n in names:
        count = spec.clutter_pixels if n == "clutter" else int(SHAPES[n].sum())
        if count >= 0.15 * spec.size * spec.size:
            raise InvalidInputError(f"shape {n!r} covers >= 15% of a {spec.size}px image")
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            if "clutter" in (names[a], names[b]):
                continue
            diff = int(np.count_nonzero(SHAPES[names[a]] ^ SHAPES[names[b]]))
            if diff < 20:
                raise InvalidInputError(f"shapes {names[a]} and {names[b]} differ in only {diff} px")
    if not spec.background[1] < spec.intensity[0]:
        raise InvalidInputError("background range must lie below target intensity")
    if spec.falloff:
        for n in names:
            if n == "clutter":
                continue
            m = SHAPES[n]
            weakest = spec.intensity[0] * target_density(m)[m].min()
            if weakest <= spec.background[1]:
                raise InvalidInputError(f"shape {n!r} has target returns down to {weakest:.3f}, "
                                        "not above the background range")


def generate_synthetic(spec):
    """Deterministic (train, test) datasets for ``spec``."""
    check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    samples, names = [], []
    for label, shape_name in enumerate(spec.class_shapes()):
        for k in range(spec.per_class):
            samples.append(ImageSample(_render(spec, shape_name, rng), label))
            names.append(f"c{label:02d}_{k:05d}.sgr")
    full = Dataset(samples, spec.num_classes, names)
    return split(full, spec.train_fraction, seed=spec.seed)


def write_dataset(out_dir, dataset, manifest_name):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, s in zip(dataset.names, dataset.samples):
        save_sample(out_dir / name, s)
    path = out_dir / manifest_name
    write_manifest(path, dataset.names, dataset.num_classes)
    return path


def write_synthetic(spec, out_dir):
    """Generate and write a dataset; returns (train manifest, test manifest) paths."""
    train, test = generate_synthetic(spec)
    os.makedirs(out_dir, exist_ok=True)
    return (write_dataset(out_dir, train, "train.txt"), write_dataset(out_dir, test, "test.txt"))
