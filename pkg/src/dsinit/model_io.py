"""Binary model container.

Layout, all integers little-endian:

    magic "DSIN" | version u32 (=1) | input channels, height, width u32 x3 |
    class_count u32 | layer count u32 | layer records...

Each layer record is: kind tag u8, then the weight shape as ndim u32 +
one u32 per dimension, then the weight payload as float64 little-endian
values in row-major order, then the bias payload (length implied by the
layer). Parameter-free layers store ndim=0 and no payloads.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedVersionError
from .network import LayerSpec, Network, NetworkSpec, bias_length

MAGIC = b"DSIN"
VERSION = 1

KIND_TAGS = {"conv2d": 1, "dense": 2, "relu": 3, "maxpool2x2": 4, "flatten": 5}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def save_model(network: Network, path) -> None:
    spec = network.spec
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<III", *spec.input_shape)
    out += struct.pack("<II", spec.class_count, len(spec.layers))
    affine_ordinal = 0
    for layer in spec.layers:
        out += struct.pack("<B", KIND_TAGS[layer.kind])
        if layer.is_affine:
            w = network.weights[affine_ordinal]
            b = network.biases[affine_ordinal]
            out += struct.pack("<I", w.ndim)
            out += struct.pack(f"<{w.ndim}I", *w.shape)
            out += np.ascontiguousarray(w, dtype="<f8").tobytes()
            out += np.ascontiguousarray(b, dtype="<f8").tobytes()
            affine_ordinal += 1
        else:
            out += struct.pack("<I", 0)
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.path = path
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.buf):
            raise FormatError(f"{self.path}: truncated while reading {what}", offset=len(self.buf))
        chunk = self.buf[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f64_array(self, count: int, what: str) -> np.ndarray:
        start = self.pos
        self.take(8 * count, what)
        return np.frombuffer(self.buf, dtype="<f8", count=count, offset=start).astype(np.float64)


def load_model(path) -> Network:
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} (expected {MAGIC!r})", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported container version {version} (this build reads {VERSION})",
            offset=4,
        )
    input_shape = tuple(r.u32("input shape") for _ in range(3))
    class_count = r.u32("class count")
    layer_count = r.u32("layer count")
    layers = []
    weights = []
    biases = []
    for i in range(layer_count):
        tag_offset = r.pos
        tag = r.u8(f"layer {i} kind")
        kind = TAG_KINDS.get(tag)
        if kind is None:
            raise FormatError(f"{path}: unknown layer kind tag {tag}", offset=tag_offset)
        ndim = r.u32(f"layer {i} ndim")
        dims = tuple(r.u32(f"layer {i} dims") for _ in range(ndim))
        if kind == "conv2d":
            if len(dims) != 4:
                raise FormatError(f"{path}: conv2d layer {i} needs 4 dims, got {len(dims)}", offset=tag_offset)
            n_k, c, m, m2 = dims
            if m != m2:
                raise FormatError(f"{path}: conv2d layer {i} kernel is {m}x{m2}", offset=tag_offset)
            layer = LayerSpec("conv2d", out_channels=n_k, kernel=m, in_channels=c)
        elif kind == "dense":
            if len(dims) != 2:
                raise FormatError(f"{path}: dense layer {i} needs 2 dims, got {len(dims)}", offset=tag_offset)
            layer = LayerSpec("dense", fan_in=dims[1], fan_out=dims[0])
        else:
            if dims:
                raise FormatError(f"{path}: {kind} layer {i} must not carry dims", offset=tag_offset)
            layer = LayerSpec(kind)
        layers.append(layer)
        if layer.is_affine:
            w = r.f64_array(int(np.prod(dims)), f"layer {i} weights").reshape(dims)
            b = r.f64_array(bias_length(layer), f"layer {i} biases")
            weights.append(w)
            biases.append(b)
    if r.pos != len(buf):
        raise FormatError(f"{path}: trailing bytes after last layer", offset=r.pos)
    spec = NetworkSpec(tuple(layers), input_shape, class_count)
    return Network(spec, tuple(weights), tuple(biases))
