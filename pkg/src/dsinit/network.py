"""Feed-forward CNN machinery: layers, loss, gradients, SGD.

All tensors are float64 numpy arrays. An image activation has shape
(channels, height, width); a flat activation is a 1-d vector. Forward and
backward passes operate on a single sample; minibatch behavior is an
explicit sum over samples in order, so results are bit-reproducible.

Convolution here is valid (no padding) stride-1 cross-correlation: the
kernel slides one pixel right or down and is never flipped.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError

LAYER_KINDS = ("conv2d", "dense", "relu", "maxpool2x2", "flatten")


@dataclasses.dataclass(frozen=True)
class LayerSpec:
    """One layer of a network. Only the fields for its kind are meaningful."""

    kind: str
    out_channels: int = 0
    kernel: int = 0
    in_channels: int = 0
    fan_in: int = 0
    fan_out: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidArgumentError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if self.out_channels < 1 or self.kernel < 1 or self.in_channels < 1:
                raise InvalidArgumentError(
                    f"conv2d needs out_channels, kernel, in_channels >= 1, got "
                    f"({self.out_channels}, {self.kernel}, {self.in_channels})"
                )
        elif self.kind == "dense":
            if self.fan_in < 1 or self.fan_out < 1:
                raise InvalidArgumentError(
                    f"dense needs fan_in, fan_out >= 1, got ({self.fan_in}, {self.fan_out})"
                )

    @property
    def is_affine(self) -> bool:
        return self.kind in ("conv2d", "dense")


def conv2d(out_channels: int, kernel: int, in_channels: int) -> LayerSpec:
    return LayerSpec("conv2d", out_channels=out_channels, kernel=kernel, in_channels=in_channels)


def dense(fan_in: int, fan_out: int) -> LayerSpec:
    return LayerSpec("dense", fan_in=fan_in, fan_out=fan_out)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool2x2() -> LayerSpec:
    return LayerSpec("maxpool2x2")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def _shape_after(layer: LayerSpec, shape, index: int):
    """Shape of a layer's output given its input shape. Raises on mismatch."""
    if layer.kind == "conv2d":
        if len(shape) != 3:
            raise InvalidArgumentError(f"layer {index}: conv2d needs a (c, h, w) input, got {shape}")
        c, h, w = shape
        if c != layer.in_channels:
            raise InvalidArgumentError(
                f"layer {index}: conv2d expects {layer.in_channels} input channels, got {c}"
            )
        if layer.kernel > min(h, w):
            raise InvalidArgumentError(
                f"layer {index}: kernel {layer.kernel} exceeds spatial side of {shape}"
            )
        return (layer.out_channels, h - layer.kernel + 1, w - layer.kernel + 1)
    if layer.kind == "dense":
        if len(shape) != 1 or shape[0] != layer.fan_in:
            raise InvalidArgumentError(
                f"layer {index}: dense expects a flat input of length {layer.fan_in}, got {shape}"
            )
        return (layer.fan_out,)
    if layer.kind == "relu":
        return shape
    if layer.kind == "maxpool2x2":
        if len(shape) != 3:
            raise InvalidArgumentError(f"layer {index}: maxpool needs a (c, h, w) input, got {shape}")
        c, h, w = shape
        if h % 2 or w % 2:
            raise InvalidArgumentError(
                f"layer {index}: maxpool needs even spatial sides, got {h}x{w}"
            )
        return (c, h // 2, w // 2)
    # flatten
    if len(shape) == 1:
        return shape
    return (int(np.prod(shape)),)


@dataclasses.dataclass(frozen=True)
class NetworkSpec:
    """An ordered layer list plus the input shape and class count.

    Shape chaining is validated here, at construction, so a spec that
    constructs can always run; an invalid spec never gets as far as a
    forward pass.
    """

    layers: tuple
    input_shape: tuple
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.layers) < 1:
            raise InvalidArgumentError("a network needs at least one layer")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidArgumentError(f"input_shape must be (c, h, w), got {self.input_shape}")
        if self.class_count < 2:
            raise InvalidArgumentError(f"class_count must be >= 2, got {self.class_count}")
        self.layer_input_shapes()
        last = self.layers[-1]
        if last.kind != "dense" or last.fan_out != self.class_count:
            raise InvalidArgumentError(
                f"final layer must be dense with fan_out == class_count ({self.class_count})"
            )

    def layer_input_shapes(self):
        """Input shape seen by each layer, derived by chaining."""
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shapes.append(shape)
            shape = _shape_after(layer, shape, i)
        return shapes

    @property
    def affine_indices(self) -> tuple:
        return tuple(i for i, l in enumerate(self.layers) if l.is_affine)

    @property
    def affine_count(self) -> int:
        return len(self.affine_indices)


def weight_shape(layer: LayerSpec):
    if layer.kind == "conv2d":
        return (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    if layer.kind == "dense":
        return (layer.fan_out, layer.fan_in)
    raise InvalidArgumentError(f"{layer.kind} layers carry no weights")


def bias_length(layer: LayerSpec) -> int:
    return layer.out_channels if layer.kind == "conv2d" else layer.fan_out


@dataclasses.dataclass(frozen=True)
class Network:
    """A NetworkSpec plus one weight tensor and bias vector per affine layer.

    Immutable by convention: sgd_step returns a new Network, and callers
    must not write into the arrays.
    """

    spec: NetworkSpec
    weights: tuple
    biases: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        affine = [self.spec.layers[i] for i in self.spec.affine_indices]
        if len(self.weights) != len(affine) or len(self.biases) != len(affine):
            raise InvalidArgumentError(
                f"expected {len(affine)} weight/bias tensors, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        for k, layer in enumerate(affine):
            w, b = self.weights[k], self.biases[k]
            if w.shape != weight_shape(layer):
                raise InvalidArgumentError(
                    f"affine layer {k}: weight shape {w.shape}, expected {weight_shape(layer)}"
                )
            if b.shape != (bias_length(layer),):
                raise InvalidArgumentError(
                    f"affine layer {k}: bias shape {b.shape}, expected ({bias_length(layer)},)"
                )


def zero_network(spec: NetworkSpec) -> Network:
    """All weights and biases zero. Useful as a degenerate reference."""
    affine = [spec.layers[i] for i in spec.affine_indices]
    return Network(
        spec,
        tuple(np.zeros(weight_shape(l)) for l in affine),
        tuple(np.zeros(bias_length(l)) for l in affine),
    )


@dataclasses.dataclass(frozen=True)
class GradientSet:
    """Gradients shape-matched to a Network's weights and biases."""

    weight_grads: tuple
    bias_grads: tuple

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            tuple(g * factor for g in self.weight_grads),
            tuple(g * factor for g in self.bias_grads),
        )


def _conv_patches(x: np.ndarray, m: int):
    """im2col: (c, h, w) -> (positions, c*m*m) in raster order over outputs."""
    win = sliding_window_view(x, (m, m), axis=(1, 2))  # (c, oh, ow, m, m)
    oh, ow = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, -1)
    return cols, oh, ow


def affine_forward(layer: LayerSpec, weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a conv2d or dense layer to one sample."""
    if layer.kind == "dense":
        if x.shape != (layer.fan_in,):
            raise InvalidArgumentError(
                f"dense expects a flat input of length {layer.fan_in}, got shape {x.shape}"
            )
        return weight @ x + bias
    if layer.kind != "conv2d":
        raise InvalidArgumentError(f"{layer.kind} is not an affine layer")
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise InvalidArgumentError(
            f"conv2d expects ({layer.in_channels}, h, w) input, got shape {x.shape}"
        )
    if layer.kernel > min(x.shape[1], x.shape[2]):
        raise InvalidArgumentError(
            f"conv2d kernel {layer.kernel} exceeds input spatial side {x.shape[1:]}"
        )
    cols, oh, ow = _conv_patches(x, layer.kernel)
    out = cols @ weight.reshape(layer.out_channels, -1).T + bias
    return np.ascontiguousarray(out.T).reshape(layer.out_channels, oh, ow)


def _maxpool_windows(x: np.ndarray):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    """Apply a parameter-free layer (relu, maxpool2x2, flatten) to one sample."""
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "maxpool2x2":
        if x.ndim != 3:
            raise InvalidArgumentError(f"maxpool needs a (c, h, w) input, got shape {x.shape}")
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise InvalidArgumentError(
                f"maxpool needs even spatial sides, got {x.shape[1]}x{x.shape[2]}"
            )
        return _maxpool_windows(x).max(axis=3)
    if kind == "flatten":
        return x.reshape(-1)
    raise InvalidArgumentError(f"{kind} is not a parameter-free layer kind")


def _layer_forward(network: Network, index: int, affine_ordinal: int, x: np.ndarray):
    layer = network.spec.layers[index]
    if layer.is_affine:
        return affine_forward(layer, network.weights[affine_ordinal], network.biases[affine_ordinal], x)
    return activation_forward(layer.kind, x)


def _forward_cached(network: Network, x: np.ndarray):
    """Run all layers, keeping each layer's input for the backward pass."""
    inputs = []
    affine_ordinal = 0
    t = x
    for i, layer in enumerate(network.spec.layers):
        inputs.append(t)
        t = _layer_forward(network, i, affine_ordinal, t)
        if layer.is_affine:
            affine_ordinal += 1
    return t, inputs


def forward(network: Network, x: np.ndarray) -> np.ndarray:
    """Logits for one input sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.spec.input_shape:
        raise InvalidArgumentError(
            f"layer 0 expected input shape {network.spec.input_shape}, got {x.shape}"
        )
    out, _ = _forward_cached(network, x)
    return out


def forward_prefix(network: Network, x: np.ndarray, k: int) -> np.ndarray:
    """The tensor the k-th affine layer (1-based) would receive.

    Runs every layer strictly before the k-th affine layer; for k=1 with no
    preceding layers the input comes back unchanged.
    """
    if not 1 <= k <= network.spec.affine_count:
        raise InvalidArgumentError(
            f"affine layer index {k} out of range 1..{network.spec.affine_count}"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.spec.input_shape:
        raise InvalidArgumentError(
            f"layer 0 expected input shape {network.spec.input_shape}, got {x.shape}"
        )
    seen = 0
    affine_ordinal = 0
    t = x
    for i, layer in enumerate(network.spec.layers):
        if layer.is_affine:
            seen += 1
            if seen == k:
                return t
        t = _layer_forward(network, i, affine_ordinal, t)
        if layer.is_affine:
            affine_ordinal += 1
    raise AssertionError("unreachable: k was validated against affine_count")


def affine_preactivations(network: Network, x: np.ndarray):
    """Outputs of every affine layer (before any following activation)."""
    x = np.asarray(x, dtype=np.float64)
    outs = []
    affine_ordinal = 0
    t = x
    for i, layer in enumerate(network.spec.layers):
        t = _layer_forward(network, i, affine_ordinal, t)
        if layer.is_affine:
            outs.append(t)
            affine_ordinal += 1
    return outs


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Loss and dloss/dlogits, computed with max subtraction for stability.

    Returns (-log p_label, p - onehot(label)).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise InvalidArgumentError(f"logits must be a vector, got shape {logits.shape}")
    if not 0 <= label < logits.size:
        raise InvalidArgumentError(f"label {label} out of range for {logits.size} classes")
    z = logits - logits.max()
    log_norm = np.log(np.exp(z).sum())
    loss = log_norm - z[label]
    dlogits = np.exp(z - log_norm)
    dlogits[label] -= 1.0
    return loss, dlogits


def _affine_backward(layer: LayerSpec, weight: np.ndarray, x: np.ndarray, dy: np.ndarray):
    """Gradients (dweight, dbias, dx) of one affine layer."""
    if layer.kind == "dense":
        return np.outer(dy, x), dy.copy(), weight.T @ dy
    m = layer.kernel
    cols, oh, ow = _conv_patches(x, m)
    dyf = dy.reshape(layer.out_channels, -1)  # (n_k, positions)
    dweight = (dyf @ cols).reshape(weight.shape)
    dbias = dy.sum(axis=(1, 2))
    dcols = weight.reshape(layer.out_channels, -1).T @ dyf  # (c*m*m, positions)
    dcols = dcols.reshape(layer.in_channels, m, m, oh, ow)
    dx = np.zeros_like(x)
    for di in range(m):
        for dj in range(m):
            dx[:, di : di + oh, dj : dj + ow] += dcols[:, di, dj]
    return dweight, dbias, dx


def _activation_backward(kind: str, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return dy * (x > 0.0)
    if kind == "maxpool2x2":
        win = _maxpool_windows(x)
        # argmax takes the first maximum in the window's row-major scan,
        # which is where the whole gradient goes on a tie.
        idx = win.argmax(axis=3)
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=3)
        c, oh, ow = dy.shape
        return (
            dwin.reshape(c, oh, ow, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, oh * 2, ow * 2)
        )
    # flatten
    return dy.reshape(x.shape)


def _backprop(network: Network, inputs, dout: np.ndarray):
    """Reverse pass from dloss/dlogits; returns (GradientSet, dloss/dinput)."""
    n_affine = network.spec.affine_count
    weight_grads = [None] * n_affine
    bias_grads = [None] * n_affine
    affine_ordinal = n_affine
    d = dout
    for i in range(len(network.spec.layers) - 1, -1, -1):
        layer = network.spec.layers[i]
        if layer.is_affine:
            affine_ordinal -= 1
            dw, db, d = _affine_backward(layer, network.weights[affine_ordinal], inputs[i], d)
            weight_grads[affine_ordinal] = dw
            bias_grads[affine_ordinal] = db
        else:
            d = _activation_backward(layer.kind, inputs[i], d)
    return GradientSet(tuple(weight_grads), tuple(bias_grads)), d


def backward(network: Network, x: np.ndarray, label: int):
    """Loss and exact reverse-mode gradients for one sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.spec.input_shape:
        raise InvalidArgumentError(
            f"layer 0 expected input shape {network.spec.input_shape}, got {x.shape}"
        )
    logits, inputs = _forward_cached(network, x)
    loss, dlogits = softmax_cross_entropy(logits, label)
    grads, _ = _backprop(network, inputs, dlogits)
    return loss, grads


def input_gradient(network: Network, x: np.ndarray, class_index: int) -> np.ndarray:
    """Gradient of one class logit with respect to the input pixels."""
    x = np.asarray(x, dtype=np.float64)
    logits, inputs = _forward_cached(network, x)
    if not 0 <= class_index < logits.size:
        raise InvalidArgumentError(f"class index {class_index} out of range for {logits.size} classes")
    seed = np.zeros_like(logits)
    seed[class_index] = 1.0
    _, dx = _backprop(network, inputs, seed)
    return dx


def batch_gradients(network: Network, images: np.ndarray, labels: np.ndarray):
    """Sum of per-sample losses and gradients, accumulated in sample order."""
    if len(images) != len(labels) or len(images) < 1:
        raise InvalidArgumentError("batch needs equal, nonzero image and label counts")
    loss_sum = 0.0
    wsum = None
    bsum = None
    for i in range(len(images)):
        loss, grads = backward(network, images[i], int(labels[i]))
        loss_sum += loss
        if wsum is None:
            wsum = [g.copy() for g in grads.weight_grads]
            bsum = [g.copy() for g in grads.bias_grads]
        else:
            for acc, g in zip(wsum, grads.weight_grads):
                acc += g
            for acc, g in zip(bsum, grads.bias_grads):
                acc += g
    return loss_sum, GradientSet(tuple(wsum), tuple(bsum))


def sgd_step(network: Network, grads: GradientSet, lr: float) -> Network:
    """w <- w - lr * g for every parameter; returns a new Network."""
    if lr <= 0.0:
        raise InvalidArgumentError(f"learning rate must be > 0, got {lr}")
    return Network(
        network.spec,
        tuple(w - lr * g for w, g in zip(network.weights, grads.weight_grads)),
        tuple(b - lr * g for b, g in zip(network.biases, grads.bias_grads)),
    )


def predict(network: Network, x: np.ndarray) -> int:
    """Argmax class; ties resolve to the lowest class index."""
    return int(np.argmax(forward(network, x)))


def evaluate(network: Network, dataset):
    """Mean loss and accuracy over a dataset, visited in stored order."""
    n = len(dataset.labels)
    if n < 1:
        raise InvalidArgumentError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    correct = 0
    for i in range(n):
        logits = forward(network, dataset.images[i])
        loss, _ = softmax_cross_entropy(logits, int(dataset.labels[i]))
        loss_sum += loss
        if int(np.argmax(logits)) == int(dataset.labels[i]):
            correct += 1
    return loss_sum / n, correct / n


def finite_difference_gradients(network: Network, x: np.ndarray, label: int, h: float = 1e-3) -> GradientSet:
    """Central-difference loss gradients for every parameter.

    Independent of the analytic backward pass: each parameter is nudged by
    +-h and the loss recomputed through the forward pass only.
    """

    probe = Network(
        network.spec,
        tuple(w.copy() for w in network.weights),
        tuple(b.copy() for b in network.biases),
    )

    def loss_at() -> float:
        logits = forward(probe, x)
        loss, _ = softmax_cross_entropy(logits, label)
        return loss

    def tensor_grad(t: np.ndarray) -> np.ndarray:
        g = np.zeros_like(t)
        flat = t.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        return g

    return GradientSet(
        tuple(tensor_grad(w) for w in probe.weights),
        tuple(tensor_grad(b) for b in probe.biases),
    )


def gradient_check(network: Network, x: np.ndarray, label: int, h: float = 1e-3, floor: float = 1e-3) -> float:
    """Worst relative disagreement between analytic and numeric gradients.

    The denominator is floored at `floor`, which matches the O(h^2)
    truncation noise of the central difference for losses of order 1;
    below that scale the comparison is effectively absolute.
    """
    _, analytic = backward(network, x, label)
    numeric = finite_difference_gradients(network, x, label, h)
    worst = 0.0
    pairs = list(zip(analytic.weight_grads, numeric.weight_grads))
    pairs += list(zip(analytic.bias_grads, numeric.bias_grads))
    for a, n in pairs:
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def kink_margins(network: Network, x: np.ndarray):
    """How far a forward pass stays from relu/maxpool nondifferentiabilities.

    Returns (min |relu input|, min maxpool top-two gap); inf where the
    network has no such layer. Finite-difference checks are only meaningful
    when both margins comfortably exceed the probe step.
    """
    relu_margin = np.inf
    pool_gap = np.inf
    t = np.asarray(x, dtype=np.float64)
    affine_ordinal = 0
    for i, layer in enumerate(network.spec.layers):
        if layer.kind == "relu":
            relu_margin = min(relu_margin, float(np.abs(t).min()))
        elif layer.kind == "maxpool2x2":
            win = np.sort(_maxpool_windows(t), axis=3)
            pool_gap = min(pool_gap, float((win[..., 3] - win[..., 2]).min()))
        t = _layer_forward(network, i, affine_ordinal, t)
        if layer.is_affine:
            affine_ordinal += 1
    return relu_margin, pool_gap
