"""Perturbation-based local surrogate explanations over a regular superpixel grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..nn import Network
from ..validation import check_images

# scores are probabilities, so a weight this small is solver round-off rather than evidence
POSITIVE_TOL = 1e-9


@dataclass
class LimeExplanation:
    mask: np.ndarray  # (H, W) uint8 union of the selected superpixels
    weights: np.ndarray  # (g*g,) surrogate coefficients, one per superpixel
    intercept: float
    segments: np.ndarray  # (H, W) superpixel index map
    selected: list


def grid_segments(side, grid):
    """Label map of a ``grid x grid`` partition of a ``side x side`` image."""
    if side % grid:
        raise ValueError(f"image side {side} is not divisible by the superpixel grid {grid}")
    cell = side // grid
    rows = np.arange(side) // cell
    return rows[:, None] * grid + rows[None, :]


def weighted_ridge(Z, y, w, alpha):
    """Ridge regression with an unpenalized intercept and sample weights.

    Minimizes ``sum_i w_i (y_i - b - z_i . beta)^2 + alpha |beta|^2``.
    """
    sw = w / w.sum()
    zbar = sw @ Z
    ybar = sw @ y
    Zc = Z - zbar
    yc = y - ybar
    A = Zc.T @ (w[:, None] * Zc) + alpha * np.eye(Z.shape[1])
    beta = np.linalg.solve(A, Zc.T @ (w * yc))
    return beta, float(ybar - zbar @ beta)


def _scorer(model):
    if callable(model) and not isinstance(model, Network) and not hasattr(model, "predict_proba"):
        return model
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    return model.predict


def lime_explain(model, image, target_class=1, grid=8, n_perturbations=1000, top_k=2, kernel_width=0.25,
                 ridge=1e-3, seed=0, batch_size=100) -> LimeExplanation:
    """Explain the ``target_class`` probability of one image.

    ``model`` is a fitted classifier, a network, or any callable mapping
    ``(N, 1, H, W)`` images to ``(N, K)`` class scores.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    n_features = grid * grid
    if n_perturbations < 10 * n_features:
        raise ValueError(f"n_perturbations must be at least {10 * n_features} for a {grid}x{grid} grid")
    x = check_images(image)[:1]
    segments = grid_segments(x.shape[2], grid)
    score = _scorer(model)

    rng = np.random.default_rng(seed)
    Z = (rng.random((n_perturbations, n_features)) < 0.5).astype(np.float64)
    y = np.empty(n_perturbations)
    for i in range(0, n_perturbations, batch_size):
        on = Z[i:i + batch_size][:, segments][:, None].astype(x.dtype)
        y[i:i + batch_size] = np.asarray(score(x * on))[:, target_class]

    distance = (n_features - Z.sum(axis=1)) / n_features
    weights = np.exp(-(distance**2) / kernel_width**2)
    beta, intercept = weighted_ridge(Z, y, weights, ridge)

    order = np.argsort(-beta, kind="stable")
    selected = [int(j) for j in order[:top_k] if beta[j] > POSITIVE_TOL]
    mask = np.isin(segments, selected).astype(np.uint8)
    return LimeExplanation(mask, beta, intercept, segments, selected)


class LimeExplainer(TransformerMixin, BaseEstimator):
    """Transformer mapping images to LIME region masks."""

    def __init__(self, classifier, target_class=1, grid=8, n_perturbations=1000, top_k=2, kernel_width=0.25,
                 ridge=1e-3, seed=0):
        self.classifier = classifier
        self.target_class = target_class
        self.grid = grid
        self.n_perturbations = n_perturbations
        self.top_k = top_k
        self.kernel_width = kernel_width
        self.ridge = ridge
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def explain(self, image) -> LimeExplanation:
        return lime_explain(self.classifier, image, self.target_class, self.grid, self.n_perturbations,
                            self.top_k, self.kernel_width, self.ridge, self.seed)

    def transform(self, X):
        X = check_images(X)
        return np.stack([self.explain(x).mask for x in X])
