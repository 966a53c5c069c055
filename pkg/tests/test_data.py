import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tndis.data import (
    Dataset,
    area_weights,
    batches,
    downscale,
    load_cifar10_bin,
    load_mnist_idx,
    standardize,
    write_cifar10_bin,
    write_mnist_idx,
)
from tndis.errors import ConsistencyError, FormatError, ParameterError, ShapeError


def pixel_dataset(rng, n, side=28):
    px = rng.integers(0, 256, size=(n, side * side))
    return Dataset(px / 255.0, rng.integers(0, 10, size=n), "train", (side, side))


def box_downscale(img, side):
    """Direct fractional-box average, one output pixel at a time."""
    src = img.shape[0]
    s = src / side
    out = np.zeros((side, side))
    for i in range(side):
        for j in range(side):
            acc = 0.0
            for u in range(src):
                wu = max(0.0, min((i + 1) * s, u + 1) - max(i * s, u))
                if wu == 0.0:
                    continue
                for v in range(src):
                    wv = max(0.0, min((j + 1) * s, v + 1) - max(j * s, v))
                    acc += wu * wv * img[u, v]
            out[i, j] = acc / (s * s)
    return out


def test_mnist_roundtrip(tmp_path, rng):
    ds = pixel_dataset(rng, 5)
    write_mnist_idx(ds, tmp_path / "img", tmp_path / "lbl")
    back = load_mnist_idx(tmp_path / "img", tmp_path / "lbl")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.image_shape == (28, 28)


def test_mnist_zero_images(tmp_path):
    (tmp_path / "img").write_bytes(struct.pack(">IIII", 0x803, 3, 28, 28) + bytes(3 * 784))
    (tmp_path / "lbl").write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    ds = load_mnist_idx(tmp_path / "img", tmp_path / "lbl")
    assert ds.images.shape == (3, 784) and not ds.images.any()


def test_mnist_full_byte_is_one(tmp_path):
    (tmp_path / "img").write_bytes(struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([255, 0, 255, 0]))
    (tmp_path / "lbl").write_bytes(struct.pack(">II", 0x801, 1) + bytes([7]))
    ds = load_mnist_idx(tmp_path / "img", tmp_path / "lbl")
    assert ds.images[0, 0] == 1.0 and ds.labels[0] == 7


def test_mnist_errors(tmp_path):
    img, lbl = tmp_path / "img", tmp_path / "lbl"
    lbl.write_bytes(struct.pack(">II", 0x801, 2) + bytes(2))
    img.write_bytes(struct.pack(">IIII", 0x802, 2, 2, 2) + bytes(8))
    with pytest.raises(FormatError):
        load_mnist_idx(img, lbl)
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(5))
    with pytest.raises(OSError):
        load_mnist_idx(img, lbl)
    img.write_bytes(struct.pack(">IIII", 0x803, 3, 2, 2) + bytes(12))
    with pytest.raises(ConsistencyError):
        load_mnist_idx(img, lbl)


def test_cifar_roundtrip_and_record(tmp_path, rng):
    ds = Dataset(rng.integers(0, 256, size=(4, 3072)) / 255.0, [3, 1, 4, 1], "train", (3, 32, 32))
    write_cifar10_bin(ds, tmp_path / "b.bin")
    back = load_cifar10_bin([tmp_path / "b.bin"])
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)

    (tmp_path / "one.bin").write_bytes(bytes([9]) + bytes(3072))
    one = load_cifar10_bin(tmp_path / "one.bin")
    assert len(one) == 1 and one.labels[0] == 9 and one.images[0, 0] == 0.0


def test_cifar_bad_size(tmp_path):
    (tmp_path / "x.bin").write_bytes(bytes(3074))
    with pytest.raises(FormatError):
        load_cifar10_bin([tmp_path / "x.bin"])


def test_dataset_validation():
    with pytest.raises(ParameterError):
        Dataset(np.full((1, 4), 1.5), [0])
    with pytest.raises(ConsistencyError):
        Dataset(np.zeros((2, 4)), [0])


@pytest.mark.parametrize("c", [0.0, 0.37, 1.0])
def test_downscale_constant(c):
    ds = Dataset(np.full((2, 784), c), [0, 1], "train", (28, 28))
    np.testing.assert_allclose(downscale(ds).images, c, atol=1e-15)
    assert downscale(ds).images.shape == (2, 64)


def test_downscale_checkerboard_oracle():
    board = (np.indices((28, 28)).sum(axis=0) % 2).astype(float)
    ds = Dataset(board.reshape(1, -1), [0], "train", (28, 28))
    np.testing.assert_allclose(downscale(ds).images[0].reshape(8, 8), box_downscale(board, 8), atol=1e-12)


def test_downscale_random_oracle(rng):
    img = rng.random((12, 12))
    ds = Dataset(img.reshape(1, -1), [0], "train", (12, 12))
    np.testing.assert_allclose(downscale(ds, 5).images[0].reshape(5, 5), box_downscale(img, 5), atol=1e-12)


def test_downscale_not_square():
    with pytest.raises(ShapeError):
        downscale(Dataset(np.zeros((1, 12)), [0], "train", (3, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 12))
def test_downscale_preserves_mean(seed, src, side):
    img = np.random.default_rng(seed).random((1, src * src))
    out = downscale(Dataset(img, [0], "train", (src, src)), side)
    assert abs(out.images.mean() - img.mean()) < 1e-12


def test_area_weights_rows_sum_to_one():
    np.testing.assert_allclose(area_weights(28, 8).sum(axis=1), 1.0, atol=1e-15)


def indexed(n):
    return Dataset(np.arange(n)[:, None] / n, np.arange(n) % 10)


def test_batches_single_batch_is_permutation():
    ds = indexed(17)
    (x, y), = list(batches(ds, 100, seed=3))
    assert sorted(np.rint(x[:, 0] * 17).astype(int)) == list(range(17))


def test_batches_deterministic_and_cover():
    ds = indexed(103)
    a = [x[:, 0].copy() for x, _ in batches(ds, 10, seed=5, epoch=2)]
    b = [x[:, 0].copy() for x, _ in batches(ds, 10, seed=5, epoch=2)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert [len(u) for u in a] == [10] * 10 + [3]
    seen = np.rint(np.concatenate(a) * 103).astype(int)
    assert len(set(seen)) == 103 and set(seen) == set(range(103))
    c = np.concatenate([x[:, 0] for x, _ in batches(ds, 10, seed=5, epoch=3)])
    assert not np.array_equal(np.concatenate(a), c)


def test_batches_bad_size():
    with pytest.raises(ParameterError):
        list(batches(indexed(3), 0))


def test_standardize_range(rng):
    tr = Dataset(rng.random((20, 3)) * 0.5, np.zeros(20))
    te = Dataset(rng.random((5, 3)), np.zeros(5))
    a, b = standardize(tr, te)
    np.testing.assert_allclose(a.images.min(axis=0), 0.0)
    np.testing.assert_allclose(a.images.max(axis=0), 1.0)
    assert b.images.max() <= 1.0
