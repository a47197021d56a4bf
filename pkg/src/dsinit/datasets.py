"""Dataset loading, synthesis, splitting, batching, and PGM I/O.

Loaders return float64 images in [0, 1], shaped (count, channels, height,
width), with int64 labels. Files whose bytes start with the gzip magic are
decompressed transparently, so the stock .gz distributions work as-is.
"""

from __future__ import annotations

import dataclasses
import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Images (n, c, h, w), labels (n,), and the number of classes."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4 or images.shape[0] < 1:
            raise InvalidArgumentError(f"images must be (n, c, h, w), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise InvalidArgumentError(
                f"label count {labels.shape} does not match image count {images.shape[0]}"
            )
        if self.class_count < 2:
            raise InvalidArgumentError(f"class_count must be >= 2, got {self.class_count}")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise InvalidArgumentError(
                f"labels must lie in [0, {self.class_count}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


def _read_file_bytes(path) -> bytes:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except OSError as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})", offset=0) from exc
    return data


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load a handwritten-digit image/label file pair in IDX format.

    IDX is big-endian: u32 magic (2051 for u8 image volumes, 2049 for u8
    label vectors), u32 dimension sizes, then the raw bytes. Pixels are
    scaled by 1/255 into [0, 1].
    """
    ibuf = _read_file_bytes(images_path)
    if len(ibuf) < 16:
        raise FormatError(f"{images_path}: truncated image header", offset=len(ibuf))
    magic, count, rows, cols = struct.unpack_from(">IIII", ibuf, 0)
    if magic != MNIST_IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad image magic {magic} (expected {MNIST_IMAGE_MAGIC})", offset=0
        )
    need = 16 + count * rows * cols
    if len(ibuf) < need:
        raise FormatError(f"{images_path}: truncated image payload", offset=len(ibuf))
    if len(ibuf) > need:
        raise FormatError(f"{images_path}: trailing bytes after image payload", offset=need)

    lbuf = _read_file_bytes(labels_path)
    if len(lbuf) < 8:
        raise FormatError(f"{labels_path}: truncated label header", offset=len(lbuf))
    lmagic, lcount = struct.unpack_from(">II", lbuf, 0)
    if lmagic != MNIST_LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic {lmagic} (expected {MNIST_LABEL_MAGIC})", offset=0
        )
    if lcount != count:
        raise FormatError(
            f"{labels_path}: label count {lcount} does not match image count {count}", offset=4
        )
    if len(lbuf) < 8 + lcount:
        raise FormatError(f"{labels_path}: truncated label payload", offset=len(lbuf))
    if len(lbuf) > 8 + lcount:
        raise FormatError(f"{labels_path}: trailing bytes after label payload", offset=8 + lcount)

    labels = np.frombuffer(lbuf, dtype=np.uint8, count=lcount, offset=8)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise FormatError(
            f"{labels_path}: label {labels[bad[0]]} out of range 0..9", offset=8 + int(bad[0])
        )
    images = (
        np.frombuffer(ibuf, dtype=np.uint8, count=count * rows * cols, offset=16)
        .astype(np.float64)
        .reshape(count, 1, rows, cols)
        / 255.0
    )
    return Dataset(images, labels.astype(np.int64), 10)


def load_cifar10(batch_paths) -> Dataset:
    """Load one or more binary batches of 32x32 color images.

    Each record is 3073 bytes: one label byte then 3072 pixel bytes as
    channel-major planes (red, green, blue), each plane row-major.
    """
    paths = list(batch_paths)
    if not paths:
        raise InvalidArgumentError("need at least one batch path")
    image_parts = []
    label_parts = []
    for path in paths:
        buf = _read_file_bytes(path)
        if len(buf) == 0 or len(buf) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: length {len(buf)} is not a positive multiple of {CIFAR_RECORD_BYTES}",
                offset=len(buf) - (len(buf) % CIFAR_RECORD_BYTES),
            )
        records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        bad = np.nonzero(labels > 9)[0]
        if bad.size:
            raise FormatError(
                f"{path}: label {labels[bad[0]]} out of range 0..9",
                offset=int(bad[0]) * CIFAR_RECORD_BYTES,
            )
        image_parts.append(records[:, 1:].astype(np.float64).reshape(-1, 3, 32, 32) / 255.0)
        label_parts.append(labels.astype(np.int64))
    return Dataset(np.concatenate(image_parts), np.concatenate(label_parts), 10)


def cifar10_bytes(dataset: Dataset) -> bytes:
    """Re-encode a 3x32x32 dataset to the binary batch format (round-trip aid)."""
    if dataset.image_shape != (3, 32, 32):
        raise InvalidArgumentError(f"expected 3x32x32 images, got {dataset.image_shape}")
    n = len(dataset)
    out = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = dataset.labels
    out[:, 1:] = np.round(dataset.images * 255.0).astype(np.uint8).reshape(n, -1)
    return out.tobytes()


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the two-class signal-patch dataset.

    Class 0 is clamped Gaussian noise; class 1 additionally has
    ``signal_patch`` added at the image center, jittered by up to
    ``patch_jitter`` pixels per axis.
    """

    image_side: int
    signal_patch: np.ndarray  # (1, p, p), values in [0, 1]
    noise_std: float = 0.1
    patch_jitter: int = 0
    samples_per_class: int = 100

    def __post_init__(self):
        patch = np.asarray(self.signal_patch, dtype=np.float64)
        if patch.ndim != 3 or patch.shape[0] != 1 or patch.shape[1] != patch.shape[2]:
            raise InvalidArgumentError(f"signal_patch must be (1, p, p), got shape {patch.shape}")
        p = patch.shape[1]
        if p > self.image_side:
            raise InvalidArgumentError(
                f"patch side {p} exceeds image side {self.image_side}"
            )
        if self.noise_std < 0.0:
            raise InvalidArgumentError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.patch_jitter < 0:
            raise InvalidArgumentError(f"patch_jitter must be >= 0, got {self.patch_jitter}")
        base = (self.image_side - p) // 2
        if base - self.patch_jitter < 0 or base + self.patch_jitter + p > self.image_side:
            raise InvalidArgumentError(
                f"jitter {self.patch_jitter} pushes the patch out of the {self.image_side}-pixel image"
            )
        if self.samples_per_class < 1:
            raise InvalidArgumentError(
                f"samples_per_class must be >= 1, got {self.samples_per_class}"
            )
        object.__setattr__(self, "signal_patch", patch)

    @property
    def patch_side(self) -> int:
        return self.signal_patch.shape[1]

    @property
    def patch_base(self) -> int:
        return (self.image_side - self.patch_side) // 2


def make_bar_patch(p: int) -> np.ndarray:
    """A (1, p, p) patch with a bright horizontal bar across the middle row."""
    if p < 1:
        raise InvalidArgumentError(f"patch side must be >= 1, got {p}")
    patch = np.zeros((1, p, p))
    patch[0, p // 2, :] = 1.0
    return patch


def synthetic_dataset(spec: SyntheticSpec, rng) -> Dataset:
    """Generate the signal-patch dataset.

    Draw order per image: the noise field first, then (class 1, when
    jitter > 0) the row offset then the column offset. All class-0 images
    come first, then class 1.
    """
    side = spec.image_side
    count = 2 * spec.samples_per_class
    images = np.empty((count, 1, side, side))
    for i in range(spec.samples_per_class):
        noise = rng.normal(0.0, spec.noise_std, (1, side, side))
        images[i] = np.clip(noise, 0.0, 1.0)
    base = spec.patch_base
    p = spec.patch_side
    for i in range(spec.samples_per_class):
        img = rng.normal(0.0, spec.noise_std, (1, side, side))
        r, c = base, base
        if spec.patch_jitter:
            r += int(rng.integers(-spec.patch_jitter, spec.patch_jitter + 1))
            c += int(rng.integers(-spec.patch_jitter, spec.patch_jitter + 1))
        img[:, r : r + p, c : c + p] += spec.signal_patch
        images[spec.samples_per_class + i] = np.clip(img, 0.0, 1.0)
    labels = np.repeat(np.array([0, 1], dtype=np.int64), spec.samples_per_class)
    return Dataset(images, labels, 2)


def center_images(dataset: Dataset) -> Dataset:
    """Subtract the dataset-mean image (values then leave [0, 1])."""
    return Dataset(dataset.images - dataset.images.mean(axis=0), dataset.labels, dataset.class_count)


def split(dataset: Dataset, train_fraction: float, rng):
    """Disjoint, exhaustive (train, val) split after a seeded shuffle."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")
    perm = rng.permutation(len(dataset))
    cut = int(len(dataset) * train_fraction)
    if cut == 0 or cut == len(dataset):
        raise InvalidArgumentError(
            f"fraction {train_fraction} leaves an empty side of a {len(dataset)}-sample dataset"
        )
    return dataset.subset(perm[:cut]), dataset.subset(perm[cut:])


def minibatches(dataset: Dataset, batch_size: int, rng):
    """Yield (images, labels) batches after a fresh shuffle; the short final
    batch is kept."""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    perm = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = perm[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def write_pgm(path, image: np.ndarray) -> None:
    """Write a (h, w) image with values in [0, 1] as binary PGM, maxval 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-d image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise InvalidArgumentError("pixel values must lie in [0, 1]")
    h, w = img.shape
    payload = np.round(img * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + payload)


def _pgm_tokens(buf: bytes):
    """Yield (token, offset) pairs from a PGM header, skipping # comments."""
    i = 0
    while i < len(buf):
        ch = buf[i : i + 1]
        if ch.isspace():
            i += 1
            continue
        if ch == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(buf) and not buf[i : i + 1].isspace():
            i += 1
        yield buf[start:i], start, i
        i += 1  # single whitespace byte ends the token


def load_pgm(path) -> np.ndarray:
    """Load one binary PGM (maxval 255) as a (h, w) float image in [0, 1]."""
    buf = _read_file_bytes(path)
    tokens = _pgm_tokens(buf)
    fields = []
    payload_start = None
    for token, start, end in tokens:
        fields.append((token, start))
        if len(fields) == 4:
            payload_start = end + 1
            break
    if len(fields) < 4:
        raise FormatError(f"{path}: incomplete header", offset=len(buf))
    if fields[0][0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0][0]!r})", offset=0)
    try:
        w, h, maxval = (int(fields[i][0].decode("ascii")) for i in (1, 2, 3))
    except (ValueError, UnicodeDecodeError):
        raise FormatError(f"{path}: non-numeric header field", offset=fields[1][1]) from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval} (need 255)", offset=fields[3][1])
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad dimensions {w}x{h}", offset=fields[1][1])
    if len(buf) < payload_start + w * h:
        raise FormatError(f"{path}: truncated pixel payload", offset=len(buf))
    pixels = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=payload_start)
    return pixels.astype(np.float64).reshape(h, w) / 255.0


def load_pgm_directory(root) -> Dataset:
    """Load root/<class_name>/*.pgm as a dataset.

    Class indices follow the sorted subdirectory names; images sort by
    filename within each class and must share one shape.
    """
    rootp = Path(root)
    class_dirs = sorted(p for p in rootp.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise InvalidArgumentError(f"{root}: need at least 2 class subdirectories")
    images = []
    labels = []
    shape = None
    for label, class_dir in enumerate(class_dirs):
        files = sorted(class_dir.glob("*.pgm"))
        if not files:
            raise InvalidArgumentError(f"{class_dir}: class directory has no .pgm files")
        for f in files:
            img = load_pgm(f)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise FormatError(f"{f}: shape {img.shape} differs from {shape}", offset=0)
            images.append(img[None, :, :])
            labels.append(label)
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64), len(class_dirs))
