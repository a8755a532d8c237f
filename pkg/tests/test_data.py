import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sargnn.data import (HEADER, MAGIC, Dataset, SynthSpec, check_spec, class_mask,
                         generate_synthetic, load_dataset, read_sample, ship_spec, split,
                         target_density, write_manifest, write_sample, write_synthetic)
from sargnn.errors import DatasetError, FormatError, InvalidInputError
from sargnn.graph import ImageSample, magnitudes

SMALL = SynthSpec(per_class=10, seed=3)


def test_minimal_sample_layout():
    raw = write_sample(ImageSample(np.full((1, 1, 1), 0.5), 3))
    assert len(raw) == 24
    assert raw[:4] == b"SGR1" and struct.unpack("<IIII", raw[4:20]) == (1, 1, 1, 3)
    back = read_sample(raw)
    assert back.label == 3 and back.data.tolist() == [[[0.5]]]


def test_bad_magic_offset():
    with pytest.raises(FormatError) as info:
        read_sample(b"XXXX" + bytes(20))
    assert info.value.offset == 0


@pytest.mark.parametrize("raw,offset", [
    (b"SG", 0),
    (MAGIC + bytes(6), 10),
    (HEADER.pack(MAGIC, 0, 1, 1, 0), 4),
    (HEADER.pack(MAGIC, 1, 0, 1, 0), 8),
    (HEADER.pack(MAGIC, 1, 1, 0, 0), 12),
    (HEADER.pack(MAGIC, 65536, 65536, 4, 0), 4),
    (HEADER.pack(MAGIC, 2, 1, 1, 0) + bytes(4), 24),
    (HEADER.pack(MAGIC, 1, 1, 1, 0) + bytes(5), 24),
    (HEADER.pack(MAGIC, 1, 2, 1, 0) + struct.pack("<ff", 1.0, float("nan")), 24),
])
def test_rejections_carry_offsets(raw, offset):
    with pytest.raises(FormatError) as info:
        read_sample(raw)
    assert info.value.offset == offset


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3), st.integers(0, 99),
       st.integers(0, 2**32 - 1))
def test_round_trip_bit_exact(h, w, c, label, seed):
    data = np.random.default_rng(seed).standard_normal((h, w, c)).astype(np.float32)
    raw = write_sample(ImageSample(data.astype(np.float64), label))
    back = read_sample(raw)
    assert back.label == label
    assert back.data.astype(np.float32).tobytes() == data.tobytes()
    assert write_sample(back) == raw


def test_fuzzed_files_raise_structured_errors():
    rng = np.random.default_rng(0)
    good = write_sample(ImageSample(rng.uniform(0, 1, (4, 3, 2)), 1))
    outcomes = {"ok": 0, "error": 0}
    for i in range(10_000):
        buf = bytearray(good)
        mode = i % 3
        if mode == 0:
            buf = buf[:int(rng.integers(0, len(good)))]
        elif mode == 1:
            for _ in range(int(rng.integers(1, 6))):
                buf[int(rng.integers(len(buf)))] = int(rng.integers(256))
        else:
            buf += bytes(rng.integers(0, 256, int(rng.integers(1, 9)), dtype=np.uint8))
        try:
            read_sample(bytes(buf))
            outcomes["ok"] += 1
        except FormatError as exc:
            assert 0 <= exc.offset <= len(buf)
            outcomes["error"] += 1
    assert outcomes["error"] > 6000


# -- manifests ----------------------------------------------------------------------


def test_empty_manifest_warns(tmp_path, caplog):
    path = tmp_path / "m.txt"
    write_manifest(path, [], 3)
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(path)
    assert len(ds) == 0 and ds.num_classes == 3
    assert "no samples" in caplog.text


def test_missing_file_names_line(tmp_path):
    (tmp_path / "a.sgr").write_bytes(write_sample(ImageSample(np.ones((2, 2, 1)), 0)))
    write_manifest(tmp_path / "m.txt", ["a.sgr", "gone.sgr"], 2)
    with pytest.raises(DatasetError, match=r"m.txt:3: missing file gone.sgr"):
        load_dataset(tmp_path / "m.txt")


@pytest.mark.parametrize("body,message", [
    ("", "classes"),
    ("classes=x\n", "bad class count"),
    ("classes=0\n", "positive"),
    ("classes=2\na.sgr\na.sgr\n", "duplicate"),
    ("classes=1\na.sgr\n", "label 1 >= classes 1"),
    ("classes=2\nbad.sgr\n", "bad magic"),
])
def test_manifest_errors(tmp_path, body, message):
    (tmp_path / "a.sgr").write_bytes(write_sample(ImageSample(np.ones((2, 2, 1)), 1)))
    (tmp_path / "bad.sgr").write_bytes(b"nope")
    (tmp_path / "m.txt").write_text(body)
    with pytest.raises(DatasetError, match=message):
        load_dataset(tmp_path / "m.txt")


def test_dimension_pin(tmp_path):
    (tmp_path / "a.sgr").write_bytes(write_sample(ImageSample(np.ones((2, 2, 1)), 0)))
    write_manifest(tmp_path / "m.txt", ["a.sgr"], 1)
    assert len(load_dataset(tmp_path / "m.txt", expected_dims=(2, 2, 1))) == 1
    with pytest.raises(DatasetError, match="dims"):
        load_dataset(tmp_path / "m.txt", expected_dims=(3, 3, 1))


def test_written_dataset_reloads(tmp_path):
    train_path, test_path = write_synthetic(SMALL, tmp_path)
    train, test = generate_synthetic(SMALL)
    loaded = load_dataset(train_path)
    assert len(loaded) == len(train) == 80 and len(load_dataset(test_path)) == 20
    for a, b in zip(loaded, train):
        assert a.label == b.label and np.array_equal(a.data, b.data)


# -- splitting ----------------------------------------------------------------------


def _balanced(n_per_class, classes=10):
    samples = [ImageSample(np.full((1, 1, 1), float(i)), c)
               for c in range(classes) for i in range(n_per_class)]
    return Dataset(samples, classes)


def test_split_stratified():
    train, test = split(_balanced(10), 0.8, seed=1)
    assert np.bincount(train.labels).tolist() == [8] * 10
    assert np.bincount(test.labels).tolist() == [2] * 10


def test_split_full_fraction():
    train, test = split(_balanced(3), 1.0)
    assert len(test) == 0 and len(train) == 30


@given(st.integers(1, 13), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_split_partitions(n, frac, seed):
    ds = _balanced(n, 3)
    train, test = split(ds, frac, seed)
    values = sorted(float(s.data[0, 0, 0]) + 100 * s.label for s in list(train) + list(test))
    assert values == sorted(float(s.data[0, 0, 0]) + 100 * s.label for s in ds)
    for c in range(3):
        assert np.count_nonzero(train.labels == c) >= np.count_nonzero(test.labels == c) or frac < 0.5


def test_split_rejects_bad_fraction():
    with pytest.raises(InvalidInputError):
        split(_balanced(2), 1.5)


# -- generator ----------------------------------------------------------------------


def test_generator_deterministic(tmp_path):
    a = write_synthetic(SMALL, tmp_path / "a")
    b = write_synthetic(SMALL, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
        for name in pa.read_text().splitlines()[1:]:
            assert (pa.parent / name).read_bytes() == (pb.parent / name).read_bytes()


def test_generated_images_are_sparse_targets():
    train, test = generate_synthetic(SMALL)
    frac = []
    for s in list(train) + list(test):
        m = magnitudes(s.data)
        frac.append(np.mean(m < 0.1))
        assert m[m >= 0.1].min() > 0.05
    assert np.mean(frac) >= 0.85 and min(frac) > 0.85


def test_classes_differ_by_twenty_pixels():
    for a in ("bar", "cross", "ell"):
        for b in ("square", "ring", "tee"):
            assert np.count_nonzero(class_mask(a) ^ class_mask(b)) >= 20


def test_target_density():
    m = np.zeros((3, 3), bool)
    m[1, 1] = True
    d = target_density(m)
    assert d[1, 1] == pytest.approx(1 / 9) and d[0, 0] == pytest.approx(1 / 9)


@pytest.mark.parametrize("kw", [dict(size=8), dict(num_classes=11),
                                dict(background=(0.0, 0.6)), dict(intensity=(0.1, 1.0))])
def test_infeasible_specs(kw):
    with pytest.raises(InvalidInputError):
        check_spec(SynthSpec(**kw))


def test_ship_spec_two_classes():
    train, test = generate_synthetic(ship_spec(per_class=10, seed=1))
    assert train.num_classes == 2 and sorted(set(train.labels)) == [0, 1]
    with pytest.raises(InvalidInputError):
        class_mask("clutter")
