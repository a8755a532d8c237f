"""Small model configurations and inputs shared across test modules."""

import numpy as np

from sargnn.graph import ImageSample
from sargnn.model import LayerSpec, ModelConfig


def small_config(kind="sage", conn=8, grid=8, channels=1, classes=3, va=True, fa=True):
    stack = [
        LayerSpec(kind, channels, 4),
        LayerSpec("attention", 4, 4),
        LayerSpec("pool", 4, 4),
        LayerSpec(kind, 4, 5),
        LayerSpec("pool", 5, 5),
        LayerSpec("flatten", 5, 5),
        LayerSpec("fc", (grid // 4) ** 2 * 5, 6),
        LayerSpec("fc", 6, classes),
    ]
    return ModelConfig(conn, channels, grid, stack, classes, va, fa)


def fc_config(width, classes, hidden=None):
    """Flatten plus FC head on a 1x1 grid with ``width`` channels."""
    stack = [LayerSpec("flatten", width, width)]
    if hidden:
        stack += [LayerSpec("fc", width, hidden), LayerSpec("fc", hidden, classes)]
    else:
        stack.append(LayerSpec("fc", width, classes))
    return ModelConfig(8, width, 1, stack, classes, False, False)


def random_image(rng, grid, channels, sparsity=0.5):
    img = rng.uniform(0.0, 1.0, (grid, grid, channels))
    img[rng.random((grid, grid)) < sparsity] = 0.0
    return img


def blobs(rng, n_per_class, centres, noise=0.1):
    """Linearly separable 1x1 samples around the given channel vectors."""
    out = []
    for label, c in enumerate(centres):
        for _ in range(n_per_class):
            v = np.asarray(c, float) + rng.normal(0, noise, len(c))
            out.append(ImageSample(v.reshape(1, 1, -1), label))
    return out
