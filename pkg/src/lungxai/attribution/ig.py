from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..validation import check_images
from ._model import logit_index, resolve_network, target_gradients
from .heatmap import Heatmap

MIN_STEPS = 8


@dataclass
class IGResult:
    attributions: np.ndarray  # input-shaped, signed
    heatmap: Heatmap | None  # channel-summed absolute attributions for image inputs
    delta: float  # F(x) - F(baseline)
    residual: float  # |sum(attributions) - delta|


def integrated_gradients(model, image, target_class=1, steps=64, baseline=None, batch_size=64,
                         dtype=None) -> IGResult:
    """Integrated gradients of the target logit along the straight path from
    ``baseline`` (black by default) to ``image``, using a midpoint Riemann sum
    with ``steps`` points.

    Runs in the network's precision unless ``dtype`` is given; pass float64
    when checking completeness tightly."""
    if steps < MIN_STEPS:
        raise ValueError(f"steps must be at least {MIN_STEPS}, got {steps}")
    net = resolve_network(model)
    if dtype is not None and np.dtype(dtype) != net.dtype:
        net = net.astype(dtype)
    x = _single(net, image)
    base = np.zeros_like(x) if baseline is None else _single(net, baseline)

    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    diff = x - base
    total = np.zeros(x.shape[1:], dtype=np.float64)
    for i in range(0, steps, batch_size):
        a = alphas[i:i + batch_size].astype(net.dtype).reshape((-1,) + (1,) * len(net.input_shape))
        _, grads = target_gradients(net, base + a * diff, target_class)
        total += grads.input.sum(axis=0)
    attributions = diff[0] * (total / steps)

    ends = net.forward(np.concatenate([x, base]), stop=logit_index(net)).output
    delta = float(ends[0, target_class]) - float(ends[1, target_class])
    residual = abs(float(attributions.sum()) - delta)
    hm = Heatmap(np.abs(attributions).sum(axis=0), "ig") if attributions.ndim == 3 else None
    return IGResult(attributions, hm, delta, residual)


def _single(net, arr):
    arr = np.asarray(arr, dtype=net.dtype)
    shape = net.input_shape
    if arr.shape == shape:
        return arr[None]
    if arr.shape == (1,) + shape:
        return arr
    if len(shape) == 3 and shape[0] == 1 and arr.shape == shape[1:]:
        return arr[None, None]
    raise ValueError(f"expected a single input shaped {shape}, got {arr.shape}")


class IntegratedGradients(TransformerMixin, BaseEstimator):
    """Transformer mapping images to absolute integrated-gradient maps."""

    def __init__(self, classifier, target_class=1, steps=64, baseline=None):
        self.classifier = classifier
        self.target_class = target_class
        self.steps = steps
        self.baseline = baseline

    def fit(self, X=None, y=None):
        resolve_network(self.classifier)
        return self

    def explain(self, image) -> IGResult:
        return integrated_gradients(self.classifier, image, self.target_class, self.steps, self.baseline)

    def transform(self, X):
        X = check_images(X)
        return np.stack([self.explain(x).heatmap.values for x in X])
