import numpy as np
import pytest

from dsinit.network import LayerSpec, NetworkSpec


def tiny_cnn_spec(side=8, channels=1, conv_out=4, classes=3):
    """conv -> relu -> maxpool -> flatten -> dense, sized for fast tests."""
    pooled = (side - 2) // 2
    return NetworkSpec(
        (
            LayerSpec("conv2d", out_channels=conv_out, kernel=3, in_channels=channels),
            LayerSpec("relu"),
            LayerSpec("maxpool2x2"),
            LayerSpec("flatten"),
            LayerSpec("dense", fan_in=conv_out * pooled * pooled, fan_out=classes),
        ),
        (channels, side, side),
        classes,
    )


def dense_only_spec(fan_in=6, classes=3):
    return NetworkSpec(
        (
            LayerSpec("flatten"),
            LayerSpec("dense", fan_in=fan_in, fan_out=classes),
        ),
        (1, 1, fan_in),
        classes,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
