"""Image to grid-graph conversion and threshold-based input pruning.

Edges are never materialised. A grid graph is a boolean existence grid plus
a connectivity kind; two vertices are adjacent iff both exist and their
coordinates differ by one of the connectivity offsets. Boundary pixels have
truncated neighbourhoods (no padding, no wraparound).
"""

from dataclasses import dataclass, field
import enum

import numpy as np

from .errors import EmptyHistogramError, IngestionError, InvalidInputError


class Connectivity(enum.Enum):
    FOUR = 4
    EIGHT = 8

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("4", "four"):
            return cls.FOUR
        if text in ("8", "eight"):
            return cls.EIGHT
        raise InvalidInputError(f"unknown connectivity {value!r}")

    @property
    def offsets(self):
        """(K, 2) array of (row, col) neighbour offsets."""
        if self is Connectivity.FOUR:
            return _FOUR
        return _EIGHT

    @property
    def half_offsets(self):
        """One offset from each +/- pair; enumerates every undirected edge once."""
        return self.offsets[::2]


# paired as (d, -d) so that [::2] picks one of each
_FOUR = np.array([(0, 1), (0, -1), (1, 0), (-1, 0)], dtype=np.int_)
_EIGHT = np.array(
    [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)],
    dtype=np.int_,
)


@dataclass
class ImageSample:
    """A labelled H x W x C image. ``data`` is stored as float64."""

    data: np.ndarray
    label: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise InvalidInputError(f"image data must be HxWxC, got shape {data.shape}")
        if min(data.shape) == 0:
            raise InvalidInputError(f"zero-sized image {data.shape}")
        bad = ~np.isfinite(data)
        if bad.any():
            raise IngestionError(np.argwhere(bad)[0])
        if int(self.label) < 0:
            raise InvalidInputError(f"negative label {self.label}")
        self.data = data
        self.label = int(self.label)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@dataclass
class GridGraph:
    exists: np.ndarray
    features: np.ndarray
    connectivity: Connectivity = Connectivity.EIGHT
    level: int = 0

    def __post_init__(self):
        self.exists = np.asarray(self.exists, dtype=bool)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3 or self.features.shape[:2] != self.exists.shape:
            raise InvalidInputError(
                f"features {self.features.shape} do not match grid {self.exists.shape}"
            )

    @property
    def grid_height(self):
        return self.exists.shape[0]

    @property
    def grid_width(self):
        return self.exists.shape[1]

    @property
    def width(self):
        """Feature vector length c."""
        return self.features.shape[2]

    @property
    def num_vertices(self):
        return int(self.exists.sum())

    @property
    def num_edges(self):
        """Number of undirected edges between existing vertices."""
        return count_edges(self.exists, self.connectivity)

    def neighbors(self, i, j):
        """Existing neighbours of vertex (i, j), in offset order."""
        if not self.exists[i, j]:
            return []
        out = []
        for di, dj in self.connectivity.offsets:
            ii, jj = i + di, j + dj
            if 0 <= ii < self.grid_height and 0 <= jj < self.grid_width and self.exists[ii, jj]:
                out.append((int(ii), int(jj)))
        return out

    def edges(self):
        """Iterate undirected edges as ((i, j), (k, l)) pairs."""
        h, w = self.exists.shape
        for di, dj in self.connectivity.half_offsets:
            for i, j in np.argwhere(self.exists):
                ii, jj = i + di, j + dj
                if 0 <= ii < h and 0 <= jj < w and self.exists[ii, jj]:
                    yield (int(i), int(j)), (int(ii), int(jj))


def count_edges(exists, connectivity):
    """Undirected edge count of an existence grid (or a stack of grids)."""
    ex = np.asarray(exists, dtype=bool)
    h, w = ex.shape[-2:]
    total = 0
    for di, dj in Connectivity.parse(connectivity).half_offsets:
        r0, r1 = max(0, -di), h - max(0, di)
        c0, c1 = max(0, -dj), w - max(0, dj)
        if r0 >= r1 or c0 >= c1:
            continue
        a = ex[..., r0:r1, c0:c1]
        b = ex[..., r0 + di:r1 + di, c0 + dj:c1 + dj]
        total += int(np.count_nonzero(a & b))
    return total


def compute_magnitude(pixel):
    """Euclidean norm of a pixel's channel vector."""
    x = np.asarray(pixel, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError("pixel must be a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise IngestionError((int(np.argmax(~np.isfinite(x))),), "non-finite channel value")
    return float(np.sqrt(np.dot(x, x)))


def magnitudes(data):
    """Per-pixel magnitudes of an H x W x C array (or B x H x W x C)."""
    data = np.asarray(data, dtype=np.float64)
    return np.sqrt(np.einsum("...c,...c->...", data, data))


def build_graph(image, connectivity=Connectivity.EIGHT):
    """Full grid graph: every pixel a vertex, features copied verbatim."""
    if not isinstance(image, ImageSample):
        image = ImageSample(image)
    return GridGraph(
        exists=np.ones((image.height, image.width), dtype=bool),
        features=image.data.copy(),
        connectivity=Connectivity.parse(connectivity),
        level=0,
    )


def prune_input(graph, threshold):
    """Drop vertices whose magnitude is strictly smaller than ``threshold``.

    Returns ``(pruned_graph, pruned_fraction)``; the fraction is taken over
    all grid positions.
    """
    if graph.level != 0:
        raise InvalidInputError("input pruning applies to level-0 graphs only")
    if threshold < 0:
        raise InvalidInputError(f"threshold must be non-negative, got {threshold}")
    keep = graph.exists & ~(magnitudes(graph.features) < threshold)
    features = np.where(keep[..., None], graph.features, 0.0)
    pruned = GridGraph(keep, features, graph.connectivity, graph.level)
    fraction = 1.0 - keep.sum() / keep.size
    return pruned, float(fraction)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0
    total: int = field(init=False)

    def __post_init__(self):
        self.total = int(self.counts.sum()) + self.underflow + self.overflow


def magnitude_histogram(dataset, bins, value_range):
    """Histogram of pixel magnitudes over half-open bins ``[lo, hi)``.

    Values below ``lo`` or at/above ``hi`` land in the under/overflow counters.
    """
    lo, hi = map(float, value_range)
    if not lo < hi:
        raise InvalidInputError(f"empty range [{lo}, {hi})")
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    samples = list(dataset)
    if not samples:
        raise EmptyHistogramError("cannot build a histogram of an empty dataset")
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    under = over = 0
    for s in samples:
        data = s.data if isinstance(s, ImageSample) else np.asarray(s, dtype=np.float64)
        m = magnitudes(data).ravel()
        under += int(np.count_nonzero(m < lo))
        over += int(np.count_nonzero(m >= hi))
        m = m[(m >= lo) & (m < hi)]
        idx = np.searchsorted(edges, m, side="right") - 1
        counts += np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)
    return Histogram(edges=edges, counts=counts, underflow=under, overflow=over)
