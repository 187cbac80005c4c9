"""U-Net-lite lung segmentation and the Dice overlap metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .nn import ConcatSkip, Conv2D, MaxPool2, Network, ReLU, ShapeError, Sigmoid, TrainConfig, Upsample2
from .nn import checkpoint, fit_network
from .validation import check_images, check_masks


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 8
    side: int = 64

    def __post_init__(self):
        if self.depth < 2:
            raise ShapeError("U-Net depth must be at least 2")
        if self.side % (2**self.depth):
            raise ShapeError(f"side {self.side} is not divisible by 2**depth = {2**self.depth}")


def build_unet(cfg: UNetConfig, seed=0, dtype=np.float32) -> Network:
    """Encoder of ``depth`` double-conv blocks with channel doubling and pooling,
    a bottleneck block, and a decoder of nearest upsampling, skip concatenation
    and double-conv blocks, ending in a 1x1 conv with sigmoid."""
    layers = []
    skips = []
    cin = 1
    for level in range(cfg.depth):
        ch = cfg.base_channels * 2**level
        layers += [Conv2D(cin, ch), ReLU(), Conv2D(ch, ch), ReLU()]
        skips.append((len(layers) - 1, ch))
        layers.append(MaxPool2())
        cin = ch
    ch = cfg.base_channels * 2**cfg.depth
    layers += [Conv2D(cin, ch), ReLU(), Conv2D(ch, ch), ReLU()]
    cin = ch
    for source, skip_ch in reversed(skips):
        layers += [Upsample2(), ConcatSkip(source),
                   Conv2D(cin + skip_ch, skip_ch), ReLU(), Conv2D(skip_ch, skip_ch), ReLU()]
        cin = skip_ch
    layers += [Conv2D(cin, 1, kernel_size=1), Sigmoid()]
    return Network(layers, (1, cfg.side, cfg.side), seed=seed, dtype=dtype)


def binarize(prob, threshold=0.5):
    return (np.asarray(prob) > threshold).astype(np.uint8)


def _counts(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    axes = tuple(range(-2, 0))
    tp = (a & b).sum(axis=axes)
    fp = (a & ~b).sum(axis=axes)
    fn = (~a & b).sum(axis=axes)
    return tp, fp, fn


def dice_scores(A, B):
    """Per-mask Dice over the trailing two axes; empty-vs-empty scores 1."""
    tp, fp, fn = _counts(A, B)
    denom = 2 * tp + fp + fn
    return np.where(denom == 0, 1.0, 2 * tp / np.maximum(denom, 1))


def dice_coefficient(A, B) -> float:
    """``2 TP / (2 TP + FP + FN)`` for two binary masks of equal shape."""
    tp, fp, fn = (int(np.sum(c)) for c in _counts(A, B))
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def apply_lung_mask(image, lung_mask):
    image = np.asarray(image)
    lung_mask = np.asarray(lung_mask)
    if image.shape[-2:] != lung_mask.shape[-2:]:
        raise ValueError(f"image {image.shape} and mask {lung_mask.shape} differ in size")
    if image.ndim == 4 and lung_mask.ndim == 3:
        lung_mask = lung_mask[:, None]
    return image * lung_mask.astype(image.dtype)


class LungSegmenter(BaseEstimator):
    """Lung-mask segmenter: a U-Net-lite trained with BCE + soft-Dice loss.

    Defaults follow the reference training schedule (batch 32, 100 epochs,
    learning rate 5e-4, Adam); pass fewer epochs for desk-scale runs.
    """

    def __init__(self, depth=3, base_channels=8, epochs=100, batch_size=32, learning_rate=5e-4,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, threshold=0.5, seed=0):
        self.depth = depth
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.threshold = threshold
        self.seed = seed

    def _train_config(self):
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
                           beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon, loss="bce-dice",
                           seed=self.seed)

    def fit(self, X, y, validation_data=None):
        """Train on images ``X`` and lung masks ``y``.

        ``history_`` holds one row per epoch with the mean loss, the running
        training Dice accumulated over the epoch's batches and, if
        ``validation_data=(X_val, y_val)`` is given, the held-out Dice after
        the epoch.
        """
        X = check_images(X)
        y = check_masks(y, n=len(X), side=X.shape[2])
        cfg = UNetConfig(self.depth, self.base_channels, X.shape[2])
        self.network_ = build_unet(cfg, seed=self.seed)
        target = y[:, None].astype(np.float32)
        if validation_data is not None:
            Xv = check_images(validation_data[0], side=X.shape[2])
            yv = check_masks(validation_data[1], n=len(Xv), side=X.shape[2])

        def on_epoch(epoch, loss):
            if validation_data is not None:
                return {"val_dice": float(self._mean_dice(Xv, yv))}

        def batch_dice(out, tgt):
            return dice_scores(binarize(out[:, 0], self.threshold), tgt[:, 0])

        history = fit_network(self.network_, X, target, self._train_config(), on_epoch=on_epoch,
                              batch_metric=batch_dice)
        for row in history:
            row["train_dice"] = row.pop("train_metric")
        self.history_ = history
        return self

    def _mean_dice(self, X, y):
        return dice_scores(binarize(self.network_.predict(X)[:, 0], self.threshold), y).mean()

    def predict_proba(self, X):
        """Per-pixel lung probability, shaped ``(N, H, W)``."""
        check_is_fitted(self, "network_")
        X = check_images(X, side=self.network_.input_shape[1])
        return self.network_.predict(X)[:, 0]

    def predict(self, X):
        return binarize(self.predict_proba(X), self.threshold)

    def score(self, X, y):
        """Mean Dice of the predicted masks against ``y``."""
        return float(dice_scores(self.predict(X), check_masks(y)).mean())

    def save(self, path):
        check_is_fitted(self, "network_")
        checkpoint.save(path, self.network_, meta={"task": "segmentation", "params": self.get_params()})

    @classmethod
    def load(cls, path):
        net, meta = checkpoint.load(path)
        if meta.get("task") != "segmentation":
            raise checkpoint.CheckpointError(f"{path} is not a segmentation checkpoint")
        est = cls(**meta["params"])
        est.network_ = net
        return est
