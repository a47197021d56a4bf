"""Input-gradient saliency maps."""

from __future__ import annotations

import numpy as np

from .network import Network, forward, input_gradient


def saliency_map(network: Network, image: np.ndarray) -> np.ndarray:
    """Heatmap of the predicted class logit's sensitivity to each pixel.

    The absolute input gradient is reduced over channels by max, then
    min-max normalized to [0, 1]. When the gradient field is constant
    (e.g. an all-zero network), normalization is undefined and the map is
    all zeros by convention.
    """
    logits = forward(network, image)
    predicted = int(np.argmax(logits))
    grad = input_gradient(network, image, predicted)
    heat = np.abs(grad).max(axis=0)
    lo, hi = float(heat.min()), float(heat.max())
    if hi <= lo:
        return np.zeros_like(heat)
    return (heat - lo) / (hi - lo)
