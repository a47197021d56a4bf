"""Tests for the dataset loaders, the synthetic rig, splits, and PGM I/O.

Binary fixtures are assembled in-test with struct.pack and decoded with
independent byte-level readers, so the loader is never checked against
itself. The bundled canonical MNIST files get a spot check against the
same independent decoder.
"""

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from dsinit.datasets import (
    Dataset,
    SyntheticSpec,
    center_images,
    cifar10_bytes,
    load_cifar10,
    load_mnist_idx,
    load_pgm,
    load_pgm_directory,
    make_bar_patch,
    minibatches,
    split,
    synthetic_dataset,
    write_pgm,
)
from dsinit.errors import FormatError, InvalidArgumentError

MNIST_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist"


def idx_images_bytes(images_u8):
    n, h, w = images_u8.shape
    return struct.pack(">IIII", 2051, n, h, w) + images_u8.astype(np.uint8).tobytes()


def idx_labels_bytes(labels):
    return struct.pack(">II", 2049, len(labels)) + bytes(int(v) for v in labels)


def independent_idx_decode(images_buf, labels_buf):
    """Separate struct-based reader used as the oracle."""
    magic, n, h, w = struct.unpack_from(">IIII", images_buf, 0)
    assert magic == 2051
    pixels = np.frombuffer(images_buf, dtype=np.uint8, count=n * h * w, offset=16)
    magic2, n2 = struct.unpack_from(">II", labels_buf, 0)
    assert magic2 == 2049 and n2 == n
    labels = np.frombuffer(labels_buf, dtype=np.uint8, count=n, offset=8)
    return pixels.reshape(n, h, w), labels


# ----------------------------------------------------------------- mnist idx


def test_mnist_fixture_roundtrip(tmp_path, rng):
    raw = rng.integers(0, 256, size=(3, 28, 28)).astype(np.uint8)
    raw[0, 0, 0] = 0
    raw[0, 0, 1] = 255
    labels = [7, 0, 9]
    ip = tmp_path / "imgs"
    lp = tmp_path / "labs"
    ip.write_bytes(idx_images_bytes(raw))
    lp.write_bytes(idx_labels_bytes(labels))
    ds = load_mnist_idx(ip, lp)
    assert ds.images.shape == (3, 1, 28, 28)
    assert ds.class_count == 10
    assert ds.images[0, 0, 0, 0] == 0.0
    assert ds.images[0, 0, 0, 1] == 1.0
    oracle_pixels, oracle_labels = independent_idx_decode(
        ip.read_bytes(), lp.read_bytes()
    )
    assert np.array_equal(ds.labels, oracle_labels)
    assert np.max(np.abs(ds.images[:, 0] - oracle_pixels / 255.0)) <= 1e-15


def test_mnist_gzip_transparent(tmp_path, rng):
    raw = rng.integers(0, 256, size=(2, 28, 28)).astype(np.uint8)
    labels = [1, 2]
    plain_i = tmp_path / "i"
    plain_l = tmp_path / "l"
    plain_i.write_bytes(idx_images_bytes(raw))
    plain_l.write_bytes(idx_labels_bytes(labels))
    gz_i = tmp_path / "i.gz"
    gz_l = tmp_path / "l.gz"
    gz_i.write_bytes(gzip.compress(plain_i.read_bytes()))
    gz_l.write_bytes(gzip.compress(plain_l.read_bytes()))
    a = load_mnist_idx(plain_i, plain_l)
    b = load_mnist_idx(gz_i, gz_l)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)


def test_mnist_bad_magic_reports_offset_zero(tmp_path):
    buf = struct.pack(">IIII", 2052, 1, 28, 28) + bytes(28 * 28)
    ip = tmp_path / "i"
    lp = tmp_path / "l"
    ip.write_bytes(buf)
    lp.write_bytes(idx_labels_bytes([0]))
    with pytest.raises(FormatError, match="offset 0"):
        load_mnist_idx(ip, lp)


def test_mnist_truncated_payload(tmp_path):
    full = idx_images_bytes(np.zeros((2, 28, 28), dtype=np.uint8))
    ip = tmp_path / "i"
    lp = tmp_path / "l"
    ip.write_bytes(full[:-10])
    lp.write_bytes(idx_labels_bytes([0, 1]))
    with pytest.raises(FormatError, match="offset"):
        load_mnist_idx(ip, lp)


def test_mnist_count_mismatch(tmp_path):
    ip = tmp_path / "i"
    lp = tmp_path / "l"
    ip.write_bytes(idx_images_bytes(np.zeros((2, 28, 28), dtype=np.uint8)))
    lp.write_bytes(idx_labels_bytes([0, 1, 2]))
    with pytest.raises(FormatError):
        load_mnist_idx(ip, lp)


def test_mnist_label_out_of_range(tmp_path):
    ip = tmp_path / "i"
    lp = tmp_path / "l"
    ip.write_bytes(idx_images_bytes(np.zeros((1, 28, 28), dtype=np.uint8)))
    lp.write_bytes(struct.pack(">II", 2049, 1) + bytes([11]))
    with pytest.raises(FormatError):
        load_mnist_idx(ip, lp)


def test_mnist_trailing_bytes_rejected(tmp_path):
    ip = tmp_path / "i"
    lp = tmp_path / "l"
    ip.write_bytes(idx_images_bytes(np.zeros((1, 28, 28), dtype=np.uint8)) + b"x")
    lp.write_bytes(idx_labels_bytes([0]))
    with pytest.raises(FormatError):
        load_mnist_idx(ip, lp)


@pytest.mark.skipif(not MNIST_DIR.exists(), reason="bundled MNIST not present")
def test_mnist_canonical_files_spot_check():
    ds = load_mnist_idx(
        MNIST_DIR / "train-images-idx3-ubyte.gz",
        MNIST_DIR / "train-labels-idx1-ubyte.gz",
    )
    assert ds.images.shape == (60000, 1, 28, 28)
    assert float(ds.images.min()) >= 0.0 and float(ds.images.max()) <= 1.0
    with gzip.open(MNIST_DIR / "train-images-idx3-ubyte.gz", "rb") as f:
        ibuf = f.read()
    with gzip.open(MNIST_DIR / "train-labels-idx1-ubyte.gz", "rb") as f:
        lbuf = f.read()
    pixels, labels = independent_idx_decode(ibuf, lbuf)
    assert int(ds.labels[0]) == int(labels[0])
    assert np.array_equal(ds.labels[:10], labels[:10])
    assert np.max(np.abs(ds.images[0, 0] - pixels[0] / 255.0)) <= 1e-15


# ------------------------------------------------------------------- cifar10


def cifar_record(label, pixels_u8):
    return bytes([label]) + pixels_u8.astype(np.uint8).tobytes()


def test_cifar_fixture_decodes(tmp_path, rng):
    px0 = rng.integers(0, 256, size=3072).astype(np.uint8)
    px1 = rng.integers(0, 256, size=3072).astype(np.uint8)
    batch = tmp_path / "data_batch_1.bin"
    batch.write_bytes(cifar_record(3, px0) + cifar_record(9, px1))
    ds = load_cifar10([batch])
    assert ds.images.shape == (2, 3, 32, 32)
    assert ds.class_count == 10
    assert list(ds.labels) == [3, 9]
    # channel-major plane layout
    assert np.max(np.abs(ds.images[0].reshape(-1) - px0 / 255.0)) <= 1e-15


def test_cifar_rejects_partial_record(tmp_path):
    batch = tmp_path / "b.bin"
    batch.write_bytes(bytes(3073 * 2 + 100))
    with pytest.raises(FormatError):
        load_cifar10([batch])


def test_cifar_label_out_of_range(tmp_path):
    batch = tmp_path / "b.bin"
    batch.write_bytes(cifar_record(10, np.zeros(3072, dtype=np.uint8)))
    with pytest.raises(FormatError):
        load_cifar10([batch])


def test_cifar_roundtrip_bytes(tmp_path, rng):
    records = b"".join(
        cifar_record(int(rng.integers(10)), rng.integers(0, 256, size=3072).astype(np.uint8))
        for _ in range(5)
    )
    batch = tmp_path / "b.bin"
    batch.write_bytes(records)
    ds = load_cifar10([batch])
    assert cifar10_bytes(ds) == records


def test_cifar_multiple_batches_concatenate(tmp_path, rng):
    b1 = tmp_path / "b1.bin"
    b2 = tmp_path / "b2.bin"
    b1.write_bytes(cifar_record(0, np.zeros(3072, dtype=np.uint8)))
    b2.write_bytes(cifar_record(1, np.full(3072, 255, dtype=np.uint8)))
    ds = load_cifar10([b1, b2])
    assert len(ds) == 2
    assert list(ds.labels) == [0, 1]
    assert float(ds.images[1].min()) == 1.0


# ----------------------------------------------------------------- synthetic


def test_synthetic_exact_patch_without_noise():
    patch = make_bar_patch(5)
    spec = SyntheticSpec(image_side=12, signal_patch=patch, noise_std=0.0,
                         patch_jitter=0, samples_per_class=4)
    ds = synthetic_dataset(spec, np.random.default_rng(0))
    assert len(ds) == 8
    base = spec.patch_base
    for i in range(4):
        assert np.array_equal(ds.images[i], np.zeros((1, 12, 12)))
        img = ds.images[4 + i]
        assert np.array_equal(img[:, base : base + 5, base : base + 5], patch)
        mask = np.ones((1, 12, 12), dtype=bool)
        mask[:, base : base + 5, base : base + 5] = False
        assert np.max(np.abs(img[mask])) == 0.0


def test_synthetic_size_and_labels():
    spec = SyntheticSpec(image_side=10, signal_patch=make_bar_patch(3), samples_per_class=50)
    ds = synthetic_dataset(spec, np.random.default_rng(1))
    assert len(ds) == 100
    assert int(np.sum(ds.labels == 0)) == 50
    assert int(np.sum(ds.labels == 1)) == 50


def test_synthetic_mean_difference_concentrates_on_patch():
    patch = make_bar_patch(5)
    spec = SyntheticSpec(image_side=12, signal_patch=patch, noise_std=0.25,
                         patch_jitter=1, samples_per_class=200)
    ds = synthetic_dataset(spec, np.random.default_rng(2))
    diff = ds.images[ds.labels == 1].mean(axis=0) - ds.images[ds.labels == 0].mean(axis=0)
    flat = np.abs(diff).ravel()
    p2 = patch.size
    top = np.argsort(-flat)[:p2]
    base = spec.patch_base
    support = np.zeros((1, 12, 12), dtype=bool)
    support[:, base - 1 : base + 6, base - 1 : base + 6] = True  # jitter widens it
    hits = sum(1 for t in top if support.ravel()[t])
    assert hits / p2 >= 0.8


def test_synthetic_deterministic_per_seed():
    spec = SyntheticSpec(image_side=9, signal_patch=make_bar_patch(3),
                         noise_std=0.2, patch_jitter=1, samples_per_class=10)
    a = synthetic_dataset(spec, np.random.default_rng(5))
    b = synthetic_dataset(spec, np.random.default_rng(5))
    assert np.array_equal(a.images, b.images)


def test_synthetic_values_stay_in_unit_interval():
    spec = SyntheticSpec(image_side=9, signal_patch=make_bar_patch(3),
                         noise_std=0.8, samples_per_class=30)
    ds = synthetic_dataset(spec, np.random.default_rng(6))
    assert float(ds.images.min()) >= 0.0
    assert float(ds.images.max()) <= 1.0


def test_synthetic_spec_validation():
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(image_side=4, signal_patch=make_bar_patch(5))
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(image_side=12, signal_patch=make_bar_patch(5), noise_std=-0.1)
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(image_side=12, signal_patch=make_bar_patch(5), patch_jitter=30)


# -------------------------------------------------------- split / minibatch


def _numbered_dataset(n):
    images = np.arange(n, dtype=np.float64).reshape(n, 1, 1, 1) / max(n, 1)
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    return Dataset(images, labels, 2)


def test_split_sizes():
    train, val = split(_numbered_dataset(1000), 0.8, np.random.default_rng(0))
    assert len(train) == 800
    assert len(val) == 200


def test_split_union_is_original_multiset():
    ds = _numbered_dataset(100)
    train, val = split(ds, 0.7, np.random.default_rng(1))
    merged = np.concatenate([train.images.ravel(), val.images.ravel()])
    assert np.array_equal(np.sort(merged), np.sort(ds.images.ravel()))


def test_split_deterministic_per_seed():
    ds = _numbered_dataset(50)
    a1, b1 = split(ds, 0.6, np.random.default_rng(9))
    a2, b2 = split(ds, 0.6, np.random.default_rng(9))
    assert np.array_equal(a1.images, a2.images)
    assert np.array_equal(b1.labels, b2.labels)


def test_split_rejects_degenerate_fractions():
    ds = _numbered_dataset(10)
    with pytest.raises(InvalidArgumentError):
        split(ds, 0.0, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        split(ds, 1.0, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        split(_numbered_dataset(3), 0.01, np.random.default_rng(0))


def test_minibatches_cover_dataset_exactly():
    ds = _numbered_dataset(23)
    seen = []
    for images, labels in minibatches(ds, 5, np.random.default_rng(3)):
        assert len(images) == len(labels)
        seen.extend(images.ravel().tolist())
    assert len(seen) == 23
    assert np.array_equal(np.sort(seen), np.sort(ds.images.ravel()))


def test_minibatches_short_final_batch():
    ds = _numbered_dataset(23)
    sizes = [len(lab) for _, lab in minibatches(ds, 5, np.random.default_rng(3))]
    assert sizes == [5, 5, 5, 5, 3]


def test_minibatches_replay_identical():
    ds = _numbered_dataset(16)
    a = [img.copy() for img, _ in minibatches(ds, 4, np.random.default_rng(8))]
    b = [img.copy() for img, _ in minibatches(ds, 4, np.random.default_rng(8))]
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_minibatches_validation():
    with pytest.raises(InvalidArgumentError):
        list(minibatches(_numbered_dataset(4), 0, np.random.default_rng(0)))


def test_center_images_zero_mean(rng):
    ds = Dataset(rng.uniform(size=(10, 1, 4, 4)), np.zeros(10, dtype=np.int64), 2)
    centered = center_images(ds)
    assert np.max(np.abs(centered.images.mean(axis=0))) <= 1e-12
    assert np.array_equal(centered.labels, ds.labels)


# ----------------------------------------------------------------------- pgm


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.uniform(size=(6, 7))
    path = tmp_path / "x.pgm"
    write_pgm(path, img)
    back = load_pgm(path)
    # writing quantizes to bytes, so round-trip agrees to half a level
    assert back.shape == (6, 7)
    assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12


def test_pgm_exact_for_byte_levels(tmp_path):
    img = np.arange(12, dtype=np.float64).reshape(3, 4) / 255.0
    path = tmp_path / "y.pgm"
    write_pgm(path, img)
    assert np.array_equal(load_pgm(path), img)


def test_pgm_header_with_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = load_pgm(path)
    assert img.shape == (2, 2)
    assert img[0, 1] == 128 / 255.0


def test_pgm_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(FormatError):
        load_pgm(path)


def test_pgm_rejects_wrong_maxval(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError):
        load_pgm(path)


def test_pgm_rejects_short_payload(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(FormatError):
        load_pgm(path)


def test_pgm_directory_loader(tmp_path, rng):
    for ci, cls in enumerate(["ants", "bees"]):
        d = tmp_path / cls
        d.mkdir()
        for j in range(3):
            write_pgm(d / f"{j}.pgm", rng.uniform(size=(5, 5)))
    ds = load_pgm_directory(tmp_path)
    assert len(ds) == 6
    assert ds.class_count == 2
    assert ds.images.shape == (6, 1, 5, 5)
    # class indexes follow sorted directory names
    assert list(np.sort(np.unique(ds.labels))) == [0, 1]


def test_pgm_directory_needs_two_classes(tmp_path, rng):
    d = tmp_path / "only"
    d.mkdir()
    write_pgm(d / "0.pgm", rng.uniform(size=(4, 4)))
    with pytest.raises(InvalidArgumentError):
        load_pgm_directory(tmp_path)
