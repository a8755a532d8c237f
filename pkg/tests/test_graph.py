import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sargnn.errors import EmptyHistogramError, IngestionError, InvalidInputError
from sargnn.graph import (Connectivity, GridGraph, ImageSample, build_graph, compute_magnitude,
                          count_edges, magnitude_histogram, prune_input)


def test_magnitude_examples():
    assert compute_magnitude([0.3]) == pytest.approx(0.3)
    assert compute_magnitude([3.0, 4.0, 0.0, 0.0]) == 5.0
    assert compute_magnitude([0, 0]) == 0.0


def test_magnitude_rejects_nan():
    with pytest.raises(IngestionError):
        compute_magnitude([1.0, np.nan])


def test_sample_rejects_nonfinite_with_coordinate():
    data = np.zeros((3, 4, 2))
    data[2, 1, 1] = np.inf
    with pytest.raises(IngestionError) as err:
        ImageSample(data, 0)
    assert err.value.coord == (2, 1, 1)
    assert "(2, 1, 1)" in str(err.value)


@pytest.mark.parametrize("shape", [(0, 3), (3, 0), (2, 2, 0)])
def test_zero_sized_image_rejected(shape):
    with pytest.raises(InvalidInputError):
        build_graph(ImageSample(np.zeros(shape)))


@pytest.mark.parametrize("h,w,conn,v,e", [
    (2, 2, 4, 4, 4),
    (3, 3, 8, 9, 20),
    (1, 5, 8, 5, 4),
])
def test_build_graph_counts(h, w, conn, v, e):
    g = build_graph(np.ones((h, w)), conn)
    assert g.num_vertices == v
    assert g.num_edges == e
    assert g.level == 0 and g.exists.all()


@given(st.integers(1, 64), st.integers(1, 64))
def test_edge_count_formulas(h, w):
    full = np.ones((h, w), bool)
    four = h * (w - 1) + w * (h - 1)
    assert count_edges(full, 4) == four
    assert count_edges(full, 8) == four + 2 * (h - 1) * (w - 1)


@given(arrays(bool, (6, 7)), st.sampled_from([4, 8]))
def test_neighbor_symmetry_and_edge_listing(ex, conn):
    g = GridGraph(ex, np.zeros((6, 7, 1)), Connectivity.parse(conn))
    for i, j in np.argwhere(ex):
        for u, v in g.neighbors(i, j):
            assert (int(i), int(j)) in g.neighbors(u, v)
    assert len(list(g.edges())) == g.num_edges


def test_prune_examples():
    g = build_graph(np.zeros((4, 4)))
    same, frac = prune_input(g, 0.0)
    assert frac == 0.0 and same.exists.all()
    gone, frac = prune_input(g, 0.1)
    assert frac == 1.0 and gone.num_vertices == 0 and gone.num_edges == 0


def test_prune_is_strict():
    g = build_graph(np.array([[0.1, 0.09999]]))
    p, _ = prune_input(g, 0.1)
    assert p.exists.tolist() == [[True, False]]
    assert p.features[0, 1, 0] == 0.0


def test_prune_rejects_pooled_graph():
    g = GridGraph(np.ones((2, 2), bool), np.ones((2, 2, 1)), level=1)
    with pytest.raises(InvalidInputError):
        prune_input(g, 0.1)


images = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 3)),
                elements=st.floats(-2, 2))


@given(images, st.floats(0, 2), st.floats(0, 2))
def test_prune_monotone_and_idempotent(img, a, b):
    lo, hi = sorted((a, b))
    g = build_graph(img)
    p_lo, _ = prune_input(g, lo)
    p_hi, _ = prune_input(g, hi)
    assert not np.any(p_hi.exists & ~p_lo.exists)
    again, _ = prune_input(p_hi, hi)
    assert np.array_equal(again.exists, p_hi.exists)
    assert np.array_equal(again.features, p_hi.features)
    assert np.all(p_hi.features[~p_hi.exists] == 0)


@given(images)
def test_prune_zero_is_identity(img):
    g = build_graph(img)
    p, frac = prune_input(g, 0.0)
    assert frac == 0.0
    assert np.array_equal(p.exists, g.exists) and np.array_equal(p.features, g.features)


def test_histogram_examples():
    data = [ImageSample(np.array([[0.05, 0.15], [0.25, 0.95]]))]
    h = magnitude_histogram(data, 10, (0.0, 1.0))
    assert h.counts.tolist() == [1, 1, 1, 0, 0, 0, 0, 0, 0, 1]
    top = magnitude_histogram([ImageSample(np.array([[1.0]]))], 10, (0.0, 1.0))
    assert top.overflow == 1 and top.counts.sum() == 0


def test_histogram_empty_dataset():
    with pytest.raises(EmptyHistogramError):
        magnitude_histogram([], 10, (0, 1))


def test_histogram_uniform_chi_square():
    rng = np.random.default_rng(5)
    vals = rng.uniform(0, 1, 10_000).reshape(100, 100)
    h = magnitude_histogram([ImageSample(vals)], 10, (0.0, 1.0))
    expected = 1000.0
    chi2 = float(((h.counts - expected) ** 2 / expected).sum())
    assert h.total == 10_000
    # 9 degrees of freedom; 27.88 is the 0.999 quantile
    assert chi2 < 27.88
