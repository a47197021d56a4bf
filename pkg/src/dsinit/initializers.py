"""Weight initialization schemes and the layer-wise network driver.

Four schemes share one entry point, ``init_network``:

- ``he``, ``xavier``: the usual variance-scaled Gaussians.
- ``pca``: filters come from eigenvectors of block scatter matrices of the
  activations each layer actually receives.
- ``datastats``: filters are sampled from a Gaussian fitted to random crops
  of those activations, then whitened and rescaled to the 2/fan_in variance
  He initialization would use.

The data-driven schemes are layer-sequential: layer k sees the subsample
pushed through the already initialized layers 1..k-1. Biases are always 0.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateDataError, DsinitError, InvalidArgumentError
from .network import (
    LayerSpec,
    Network,
    NetworkSpec,
    activation_forward,
    affine_forward,
    bias_length,
)
from .numerics import (
    gaussian_fit,
    sample_multivariate_gaussian,
    scale_to_variance,
    sym_eigendecomposition,
    zca_whiten,
)

SCHEMES = ("xavier", "he", "pca", "datastats")


@dataclasses.dataclass(frozen=True)
class InitConfig:
    """Knobs shared by all schemes (the statistical ones ignore most)."""

    scheme: str = "he"
    subsample_size: int = 256
    crops_per_image: int = 10
    epsilon: float = 1e-5
    seed: int = 0
    pca_center: bool = False  # subtract block means before the scatter

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgumentError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.subsample_size < 2:
            raise InvalidArgumentError(f"subsample_size must be >= 2, got {self.subsample_size}")
        if self.crops_per_image < 1:
            raise InvalidArgumentError(f"crops_per_image must be >= 1, got {self.crops_per_image}")
        if not self.epsilon > 0.0:
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")
        if self.seed < 0:
            raise InvalidArgumentError(f"seed must be >= 0, got {self.seed}")


@dataclasses.dataclass(frozen=True)
class FilterBank:
    """n_k vectorized filters as rows of an (n_k, d) matrix.

    Rows reshape losslessly to the layer's weight tensor: channel-major,
    then row-major spatial, i.e. d = c_in * m * m for conv and fan_in for
    dense layers.
    """

    filters: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.filters, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise InvalidArgumentError(f"filters must be (n_k, d) with n_k >= 1, got shape {f.shape}")
        object.__setattr__(self, "filters", f)

    def conv_weights(self, in_channels: int, kernel: int) -> np.ndarray:
        n_k, d = self.filters.shape
        if d != in_channels * kernel * kernel:
            raise InvalidArgumentError(
                f"filter dimension {d} does not factor as {in_channels}*{kernel}*{kernel}"
            )
        return self.filters.reshape(n_k, in_channels, kernel, kernel).copy()

    def dense_weights(self) -> np.ndarray:
        return self.filters.copy()


def layer_fans(layer: LayerSpec):
    """(fan_in, fan_out) of an affine layer; conv uses the receptive-field
    convention on both sides (c*m*m in, n_k*m*m out)."""
    if layer.kind == "conv2d":
        mm = layer.kernel * layer.kernel
        return layer.in_channels * mm, layer.out_channels * mm
    if layer.kind == "dense":
        return layer.fan_in, layer.fan_out
    raise InvalidArgumentError(f"{layer.kind} layers have no fans")


def init_he(fan_in: int, shape, rng) -> np.ndarray:
    """i.i.d. N(0, 2/fan_in) weights."""
    if fan_in < 1:
        raise InvalidArgumentError(f"fan_in must be >= 1, got {fan_in}")
    return np.sqrt(2.0 / fan_in) * rng.standard_normal(shape)


def init_xavier(fan_in: int, fan_out: int, shape, rng) -> np.ndarray:
    """i.i.d. N(0, 2/(fan_in + fan_out)) weights."""
    if fan_in < 1 or fan_out < 1:
        raise InvalidArgumentError(f"fans must be >= 1, got ({fan_in}, {fan_out})")
    return np.sqrt(2.0 / (fan_in + fan_out)) * rng.standard_normal(shape)


def extract_blocks(image: np.ndarray, m: int, channel: int = 0) -> np.ndarray:
    """All stride-1 m x m blocks of one channel, vectorized row-major.

    Returns (h-m+1)*(w-m+1) rows in raster scan order (leftmost index moves
    one pixel right per row, then one pixel down).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise InvalidArgumentError(f"expected a (c, h, w) image, got shape {img.shape}")
    c, h, w = img.shape
    if not 0 <= channel < c:
        raise InvalidArgumentError(f"channel {channel} out of range for {c} channels")
    if m < 1 or m > min(h, w):
        raise InvalidArgumentError(f"block side {m} must be in 1..min({h}, {w})")
    win = sliding_window_view(img[channel], (m, m))  # (oh, ow, m, m)
    return win.reshape(-1, m * m)


def _image_stack(images) -> np.ndarray:
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim != 4 or stack.shape[0] < 1:
        raise InvalidArgumentError(f"expected an (n, c, h, w) image stack, got shape {stack.shape}")
    return stack


def _orthonormalize_rows(rows: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt over the rows, kept in their given order."""
    q = rows.copy()
    for j in range(q.shape[0]):
        for i in range(j):
            q[j] -= (q[i] @ q[j]) * q[i]
        norm = float(np.linalg.norm(q[j]))
        if norm < 1e-12:
            raise DegenerateDataError(
                f"orthonormalization broke down at filter {j} (norm {norm:.2e}); "
                f"the averaged eigenvectors are linearly dependent"
            )
        q[j] /= norm
    return q


def pca_init(images, filter_count: int, kernel: int, in_channels: int, center: bool = False) -> FilterBank:
    """Filters from averaged eigenvectors of the images' block scatter matrices.

    For every stride-1 block position, the blocks of all images (one
    channel at a time) are stacked into a matrix U and the eigenvectors of
    U^T U extracted, sorted by descending eigenvalue and sign-normalized.
    The j-th eigenvectors are averaged over all block positions, then over
    channels, re-orthonormalized in eigen order, and the top filter_count
    of them become the filters; for multi-channel input each 2-d filter is
    replicated across channels and scaled by 1/in_channels.

    ``center`` subtracts each position's mean block before the scatter, for
    comparing against the plain uncentered statistics (the default).
    """
    stack = _image_stack(images)
    n, c, h, w = stack.shape
    if c != in_channels:
        raise InvalidArgumentError(f"images have {c} channels, expected {in_channels}")
    mm = kernel * kernel
    if filter_count < 1 or filter_count > mm:
        raise InvalidArgumentError(
            f"filter_count must be in 1..{mm} for a {kernel}x{kernel} kernel, got {filter_count}"
        )
    if kernel > min(h, w):
        raise InvalidArgumentError(f"kernel {kernel} exceeds image sides {h}x{w}")
    oh, ow = h - kernel + 1, w - kernel + 1
    averaged = np.zeros((mm, mm))
    for ch in range(c):
        # (n, oh, ow, m, m): one m x m block per image per position
        win = sliding_window_view(stack[:, ch], (kernel, kernel), axis=(1, 2))
        position_sum = np.zeros((mm, mm))
        for bi in range(oh):
            for bj in range(ow):
                u = win[:, bi, bj].reshape(n, mm)
                if center:
                    u = u - u.mean(axis=0)
                scatter = u.T @ u
                scatter = 0.5 * (scatter + scatter.T)
                _, vecs = sym_eigendecomposition(scatter)
                position_sum += vecs
        averaged += position_sum / (oh * ow)
    averaged /= c
    basis = _orthonormalize_rows(averaged.T)  # rows are eigen-order vectors
    flat = basis[:filter_count]
    if in_channels == 1:
        return FilterBank(flat)
    tiled = np.tile(flat[:, None, :], (1, in_channels, 1)).reshape(filter_count, in_channels * mm)
    return FilterBank(tiled / in_channels)


def extract_random_crops(activation: np.ndarray, m: int, n: int, rng) -> np.ndarray:
    """n random m x m x c crops of one activation, as rows.

    Crop corners come from the generator in a fixed order: one row offset
    then one column offset per crop, uniform over valid positions. Rows are
    vectorized channel-major then row-major, so d = c*m*m.
    """
    act = np.asarray(activation, dtype=np.float64)
    if act.ndim != 3:
        raise InvalidArgumentError(f"expected a (c, h, w) activation, got shape {act.shape}")
    c, h, w = act.shape
    if m < 1 or m > min(h, w):
        raise InvalidArgumentError(f"crop side {m} must be in 1..min({h}, {w})")
    if n < 1:
        raise InvalidArgumentError(f"crop count must be >= 1, got {n}")
    rows = np.empty((n, c * m * m))
    for t in range(n):
        r = int(rng.integers(0, h - m + 1))
        cc = int(rng.integers(0, w - m + 1))
        rows[t] = act[:, r : r + m, cc : cc + m].reshape(-1)
    return rows


def draw_filter_samples(crops: np.ndarray, count: int, epsilon: float, rng) -> np.ndarray:
    """Sample ``count`` raw filters from the Gaussian fitted to the crops.

    This is the sampling stage on its own, before any whitening or
    rescaling, which is what makes the samples comparable to the crop
    statistics they came from.
    """
    crops = np.asarray(crops, dtype=np.float64)
    if crops.ndim != 2 or crops.shape[0] < 2:
        raise InvalidArgumentError(f"need a (>=2, d) crop matrix, got shape {crops.shape}")
    model = gaussian_fit(crops)
    return sample_multivariate_gaussian(model, count, epsilon, rng)


def data_stats_init_layer(crops: np.ndarray, n_k: int, fan_in: int, epsilon: float, rng) -> FilterBank:
    """One layer of the data-statistics scheme.

    Fit a Gaussian to the crops, draw n_k filter samples from it, whiten
    them to zero mean and (regularized) identity covariance across the
    filter dimension, then rescale all elements so the pooled variance is
    exactly 2/fan_in.
    """
    crops = np.asarray(crops, dtype=np.float64)
    if crops.ndim != 2 or crops.shape[0] < 2:
        raise InvalidArgumentError(f"need a (>=2, d) crop matrix, got shape {crops.shape}")
    if crops.shape[1] != fan_in:
        raise InvalidArgumentError(
            f"crop dimension {crops.shape[1]} does not match fan_in {fan_in}"
        )
    if n_k < 2:
        raise InvalidArgumentError(f"need at least 2 filters to whiten, got {n_k}")
    raw = draw_filter_samples(crops, n_k, epsilon, rng)
    white = zca_whiten(raw, epsilon)
    return FilterBank(scale_to_variance(white, 2.0 / fan_in))


def _subsample_images(dataset, size: int, rng) -> np.ndarray:
    if len(dataset) < size:
        raise InvalidArgumentError(
            f"dataset has {len(dataset)} images, need at least subsample_size={size}"
        )
    idx = rng.choice(len(dataset), size=size, replace=False)
    return dataset.images[idx]


def _init_layer_sequential(spec: NetworkSpec, dataset, config: InitConfig, rng, make_weight) -> Network:
    """Shared driver for the data-driven schemes.

    Pushes the subsample through the network segment by segment, handing
    ``make_weight(layer, activations, ordinal)`` the exact tensors each
    affine layer will receive under the weights assigned so far.
    """
    sub = _subsample_images(dataset, config.subsample_size, rng)
    current = [sub[i] for i in range(sub.shape[0])]
    weights = []
    biases = []
    next_layer = 0
    for ordinal, ai in enumerate(spec.affine_indices):
        for li in range(next_layer, ai):
            kind = spec.layers[li].kind
            current = [activation_forward(kind, t) for t in current]
        layer = spec.layers[ai]
        acts = np.stack(current)
        try:
            w = make_weight(layer, acts, ordinal)
        except DsinitError as exc:
            raise type(exc)(f"layer {ai} ({layer.kind}): {exc}") from exc
        b = np.zeros(bias_length(layer))
        weights.append(w)
        biases.append(b)
        current = [affine_forward(layer, w, b, t) for t in current]
        next_layer = ai + 1
    return Network(spec, tuple(weights), tuple(biases))


def data_stats_init_network(spec: NetworkSpec, dataset, config: InitConfig, rng=None) -> Network:
    """Initialize every affine layer from the statistics of its own inputs.

    Conv layers fit crops_per_image random crops per subsample image,
    concatenated in (image, crop) order; dense layers use each image's full
    flattened activation as its single crop.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)

    def make_weight(layer, acts, ordinal):
        fan_in, _ = layer_fans(layer)
        if layer.kind == "conv2d":
            crops = np.concatenate(
                [extract_random_crops(a, layer.kernel, config.crops_per_image, rng) for a in acts]
            )
            bank = data_stats_init_layer(crops, layer.out_channels, fan_in, config.epsilon, rng)
            return bank.conv_weights(layer.in_channels, layer.kernel)
        crops = acts.reshape(acts.shape[0], -1)
        bank = data_stats_init_layer(crops, layer.fan_out, fan_in, config.epsilon, rng)
        return bank.dense_weights()

    return _init_layer_sequential(spec, dataset, config, rng, make_weight)


def _pca_dense_rows(acts: np.ndarray, fan_out: int, center: bool) -> np.ndarray:
    """Top eigenvectors of the activations' scatter, as dense weight rows."""
    n, d = acts.shape
    if fan_out > d:
        raise InvalidArgumentError(f"fan_out {fan_out} exceeds activation dimension {d}")
    u = acts - acts.mean(axis=0) if center else acts
    scatter = u.T @ u
    scatter = 0.5 * (scatter + scatter.T)
    _, vecs = sym_eigendecomposition(scatter)
    return np.ascontiguousarray(vecs[:, :fan_out].T)


def pca_init_network(spec: NetworkSpec, dataset, config: InitConfig, rng=None) -> Network:
    """Eigenvector-based initialization of every affine layer.

    Conv layers run the block-scatter averaging on their prefix
    activations (requires out_channels <= kernel^2); dense layers take the
    top fan_out eigenvectors of the scatter of their flattened inputs.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)

    def make_weight(layer, acts, ordinal):
        if layer.kind == "conv2d":
            bank = pca_init(acts, layer.out_channels, layer.kernel, layer.in_channels, config.pca_center)
            return bank.conv_weights(layer.in_channels, layer.kernel)
        return _pca_dense_rows(acts.reshape(acts.shape[0], -1), layer.fan_out, config.pca_center)

    return _init_layer_sequential(spec, dataset, config, rng, make_weight)


def init_network(spec: NetworkSpec, dataset, config: InitConfig, rng=None) -> Network:
    """Initialize a network under the configured scheme.

    ``dataset`` may be None for the purely statistical schemes (he,
    xavier). The generator, when omitted, is seeded from config.seed.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.scheme == "datastats":
        if dataset is None:
            raise InvalidArgumentError("the datastats scheme needs a dataset")
        return data_stats_init_network(spec, dataset, config, rng)
    if config.scheme == "pca":
        if dataset is None:
            raise InvalidArgumentError("the pca scheme needs a dataset")
        return pca_init_network(spec, dataset, config, rng)
    weights = []
    biases = []
    for ai in spec.affine_indices:
        layer = spec.layers[ai]
        fan_in, fan_out = layer_fans(layer)
        shape = (
            (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            if layer.kind == "conv2d"
            else (layer.fan_out, layer.fan_in)
        )
        if config.scheme == "he":
            weights.append(init_he(fan_in, shape, rng))
        else:
            weights.append(init_xavier(fan_in, fan_out, shape, rng))
        biases.append(np.zeros(bias_length(layer)))
    return Network(spec, tuple(weights), tuple(biases))
