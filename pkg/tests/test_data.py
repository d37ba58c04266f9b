import struct

import numpy as np
import pytest

from saflab.data import (Dataset, augment_train, dataset_pixels, hflip, load_cifar10, load_dataset,
                         load_digits32, load_mnist_idx, pad_crop, read_cifar10_file, read_idx, synth_blobs,
                         write_cifar10_file, write_idx)
from saflab.errors import FormatError, InputError, StorageError
from saflab.numerics import Rng

from conftest import cifar10_dir, have_cifar10


def test_cifar_test_batch_shape(fake_cifar):
    ds = load_cifar10(fake_cifar, "test", standardize_data=False)
    assert len(ds) == 10000 and ds.images.shape == (10000, 3, 32, 32)
    assert ds.images.dtype == np.float32


def test_cifar_label_and_pixel_scaling(tmp_path):
    pixels = np.zeros((2, 3, 32, 32), np.uint8)
    pixels[0, 1, 5, 7] = 255
    write_cifar10_file(tmp_path / "test_batch.bin", pixels, np.array([6, 2]))
    ds = load_cifar10(tmp_path, "test", standardize_data=False)
    assert ds.labels.tolist() == [6, 2]
    assert ds.images[0, 1, 5, 7] == 1.0 and ds.images[0, 1, 5, 6] == 0.0


def test_cifar_plane_order(tmp_path):
    record = bytes([3]) + bytes(range(256)) * 12  # 3072 pixel bytes
    (tmp_path / "test_batch.bin").write_bytes(record)
    px, lab = read_cifar10_file(tmp_path / "test_batch.bin")
    assert lab.tolist() == [3]
    assert px[0, 0, 0, 0] == 0 and px[0, 0, 0, 31] == 31 and px[0, 0, 1, 0] == 32
    assert px[0, 1, 0, 0] == 0  # G plane starts at byte 1024 = 4*256


def test_cifar_round_trip_bytes(fake_cifar, tmp_path):
    ds = load_cifar10(fake_cifar, "test", standardize_data=False)
    write_cifar10_file(tmp_path / "again.bin", dataset_pixels(ds), ds.labels)
    assert (tmp_path / "again.bin").read_bytes() == (fake_cifar / "test_batch.bin").read_bytes()


def test_cifar_standardization_from_train_split(fake_cifar):
    train = load_cifar10(fake_cifar, "train")
    x = train.images.astype(np.float64)
    assert np.all(np.abs(x.mean(axis=(0, 2, 3))) < 1e-3)
    assert np.all(np.abs(x.std(axis=(0, 2, 3)) - 1) < 1e-2)
    test = load_cifar10(fake_cifar, "test")
    assert test.norm == train.norm and len(train.norm["mean"]) == 3


def test_cifar_missing_and_truncated(tmp_path):
    with pytest.raises(StorageError):
        load_cifar10(tmp_path, "test")
    (tmp_path / "test_batch.bin").write_bytes(b"\x01" * (3073 * 2 + 100))
    with pytest.raises(FormatError, match="offset 6146"):
        load_cifar10(tmp_path, "test")


def test_cifar_bad_label(tmp_path):
    (tmp_path / "test_batch.bin").write_bytes(bytes([12]) + bytes(3072))
    with pytest.raises(FormatError):
        load_cifar10(tmp_path, "test")


@pytest.mark.skipif(not have_cifar10(), reason="real CIFAR-10 binaries not present")
def test_real_cifar10_test_split_is_balanced():
    ds = load_cifar10(cifar10_dir(), "test", standardize_data=False)
    assert len(ds) == 10000
    assert np.bincount(ds.labels, minlength=10).tolist() == [1000] * 10


def test_mnist_idx(fake_mnist):
    ds = load_mnist_idx(fake_mnist, "train")
    assert ds.images.shape == (600, 1, 28, 28)
    assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0
    assert load_mnist_idx(fake_mnist, "test").labels.tolist()[:3] == [0, 1, 2]


def test_mnist_header_count(tmp_path):
    raw = struct.pack(">IIII", 0x00000803, 60000, 28, 28)
    assert struct.unpack(">I", raw[4:8])[0] == 60000
    write_idx(tmp_path / "x", np.zeros((60000, 28, 28), np.uint8))
    arr = read_idx((tmp_path / "x").read_bytes(), 0x00000803)
    assert arr.shape == (60000, 28, 28)


def test_idx_magic_checked(tmp_path):
    write_idx(tmp_path / "lab", np.zeros(5, np.uint8))
    raw = (tmp_path / "lab").read_bytes()
    assert read_idx(raw, 0x00000801).shape == (5,)
    with pytest.raises(FormatError):
        read_idx(raw, 0x00000803)
    with pytest.raises(FormatError):
        read_idx(b"\x00\x00\x09\x01" + raw[4:], 0x00000801)


def test_idx_zero_image(tmp_path):
    write_idx(tmp_path / "t10k-images-idx3-ubyte", np.zeros((2, 28, 28), np.uint8))
    write_idx(tmp_path / "t10k-labels-idx1-ubyte", np.array([1, 2], np.uint8))
    ds = load_mnist_idx(tmp_path, "test")
    assert not ds.images.any()


def test_synth_deterministic_counts_and_separable():
    a = synth_blobs(2, 50, 5, seed=4, separation=10.0)
    b = synth_blobs(2, 50, 5, seed=4, separation=10.0)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [50, 50]
    # centers are +/- 5 sigma along one axis: the midplane separates all samples with margin
    x = a.images.reshape(len(a), -1).astype(np.float64)
    centers = np.stack([x[a.labels == c].mean(0) for c in (0, 1)])
    d = centers[1] - centers[0]
    proj = (x - centers.mean(0)) @ d / np.linalg.norm(d)
    assert np.all(proj[a.labels == 0] < 0) and np.all(proj[a.labels == 1] > 0)


def test_synth_splits_share_centers_but_not_samples():
    tr = synth_blobs(3, 200, 4, seed=1, split="train")
    te = synth_blobs(3, 200, 4, seed=1, split="test")
    assert not np.array_equal(tr.images, te.images)
    for c in range(3):
        a = tr.images[tr.labels == c].mean(0)
        b = te.images[te.labels == c].mean(0)
        assert np.abs(a - b).max() < 0.5


def test_synth_rejects_one_class():
    with pytest.raises(InputError):
        synth_blobs(1, 10, 2)


def test_flip_involution_and_disabled_identity():
    batch = Rng(0).gen.standard_normal((6, 3, 32, 32)).astype(np.float32)
    mask = np.array([1, 0, 1, 1, 0, 0], bool)
    assert np.array_equal(hflip(hflip(batch, mask), mask), batch)
    assert augment_train(batch, Rng(1), enabled=False) is batch


def test_crop_offsets_bounded_and_zero_offset_shift():
    batch = Rng(0).gen.standard_normal((2, 3, 32, 32)).astype(np.float32)
    centred = pad_crop(batch, np.array([[4, 4], [4, 4]]))
    assert np.array_equal(centred, batch)
    corner = pad_crop(batch, np.array([[0, 0], [8, 8]]))
    assert np.all(corner[0, :, :4, :] == 0) and np.array_equal(corner[0, :, 4:, 4:], batch[0, :, :28, :28])
    rng = Rng(3)
    offsets = rng.gen.integers(0, 9, size=(10000, 2))
    assert offsets.min() >= 0 and offsets.max() <= 8


def test_augment_is_seeded():
    batch = Rng(0).gen.standard_normal((8, 3, 32, 32)).astype(np.float32)
    assert np.array_equal(augment_train(batch, Rng(5)), augment_train(batch, Rng(5)))
    assert augment_train(batch, Rng(5)).shape == batch.shape


def test_digits_substitute():
    tr = load_digits32("train")
    te = load_digits32("test", stats=tr.norm)
    assert tr.images.shape[1:] == (3, 32, 32)
    assert len(tr) + len(te) == 1797
    assert np.abs(tr.images.mean(axis=(0, 2, 3))).max() < 1e-3


@pytest.mark.parametrize("name", ["cifar100", "ImageNet"])
def test_out_of_scope_datasets_rejected(name):
    with pytest.raises(InputError, match="out of scope"):
        load_dataset(name)


def test_dataset_validation():
    with pytest.raises(FormatError):
        Dataset(np.zeros((2, 1, 1, 1), np.float32), np.array([0, 5]), 3)
    ds = Dataset(np.zeros((4, 1, 1, 1), np.float32), np.array([0, 1, 2, 0]), 3)
    assert len(ds.subset(2)) == 2 and ds.subset(None) is ds
