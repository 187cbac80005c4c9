from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..validation import check_images
from ._model import last_conv_activation, resolve_network, target_gradients
from .heatmap import Heatmap


def cam_from_activations(A, dA):
    """ReLU of the channel-weighted activation sum.

    ``A`` and ``dA`` are ``(..., K, h, w)`` activations and their gradients;
    channel weights are the spatial means of ``dA``.
    """
    alpha = dA.mean(axis=(-2, -1), keepdims=True)
    return np.maximum((alpha * A).sum(axis=-3), 0.0)


def upsample_nearest(maps, side):
    h, w = maps.shape[-2:]
    rows = (np.arange(side) * h) // side
    cols = (np.arange(side) * w) // side
    return maps[..., rows[:, None], cols[None, :]]


def grad_cam_batch(model, X, target_class=1, layer=None, batch_size=64):
    """Raw Grad-CAM maps for a batch, shaped ``(N, H, W)``."""
    net = resolve_network(model)
    X = check_images(X, side=net.input_shape[1], dtype=net.dtype)
    layer = last_conv_activation(net) if layer is None else layer
    out = []
    for i in range(0, len(X), batch_size):
        trace, grads = target_gradients(net, X[i:i + batch_size], target_class)
        cam = cam_from_activations(trace.activations[layer + 1].astype(np.float64),
                                   grads.activations[layer + 1].astype(np.float64))
        out.append(upsample_nearest(cam, X.shape[2]))
    return np.concatenate(out, axis=0)


def grad_cam(model, image, target_class=1, layer=None) -> Heatmap:
    """Grad-CAM heatmap of one image for ``target_class``, targeting the logit."""
    return Heatmap(grad_cam_batch(model, image, target_class, layer)[0], "gradcam")


class GradCAM(TransformerMixin, BaseEstimator):
    """Transformer mapping images to raw Grad-CAM maps of a fitted classifier."""

    def __init__(self, classifier, target_class=1, layer=None):
        self.classifier = classifier
        self.target_class = target_class
        self.layer = layer

    def fit(self, X=None, y=None):
        resolve_network(self.classifier)
        return self

    def transform(self, X):
        return grad_cam_batch(self.classifier, X, self.target_class, self.layer)

    def explain(self, image) -> Heatmap:
        return grad_cam(self.classifier, image, self.target_class, self.layer)
