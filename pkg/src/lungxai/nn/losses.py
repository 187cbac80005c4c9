"""Loss functions returning ``(value, gradient w.r.t. the prediction)``."""

from __future__ import annotations

import numpy as np

LOG_FLOOR = 1e-12
DICE_SMOOTH = 1.0


def _check_onehot(onehot):
    onehot = np.asarray(onehot)
    if not (np.isin(onehot, (0, 1)).all() and (onehot.sum(axis=-1) == 1).all()):
        raise ValueError("targets must be one-hot rows with exactly one entry equal to 1")
    return onehot


def cce_loss(probs, onehot):
    """Categorical cross-entropy, averaged over the batch.

    ``probs`` and ``onehot`` are ``(K,)`` or ``(N, K)``; the true-class
    probability is floored at 1e-12 before taking the log.
    """
    probs = np.asarray(probs)
    out_dtype = probs.dtype if probs.dtype.kind == "f" else np.float64
    probs = probs.astype(np.float64)
    onehot = _check_onehot(onehot)
    if probs.shape != onehot.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {onehot.shape}")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("probabilities must sum to 1 within 1e-6")
    single = probs.ndim == 1
    p2 = probs[None] if single else probs
    t2 = onehot[None] if single else onehot
    n = p2.shape[0]
    p_true = np.maximum((p2 * t2).sum(axis=-1), LOG_FLOOR)
    loss = float(-np.log(p_true).mean())
    grad = -t2 / np.maximum(p2, LOG_FLOOR) / n
    grad = grad.astype(out_dtype, copy=False)
    return loss, (grad[0] if single else grad)


def soft_dice(pred, target, smooth=DICE_SMOOTH):
    """Per-image soft Dice over the trailing two axes."""
    axes = (-2, -1)
    inter = (pred * target).sum(axis=axes)
    return (2.0 * inter + smooth) / (pred.sum(axis=axes) + target.sum(axis=axes) + smooth)


def bce_dice_loss(pred, target, smooth=DICE_SMOOTH):
    """Mean binary cross-entropy plus ``1 - soft Dice``, weighted 1:1.

    Accepts ``(H, W)`` or any batch-leading shape ending in ``(H, W)``; the
    loss is computed per image and averaged.
    """
    pred = np.asarray(pred)
    out_dtype = pred.dtype
    pred = pred.astype(np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    h, w = pred.shape[-2:]
    n_img = pred.size // (h * w)
    npix = h * w

    p = np.clip(pred, LOG_FLOOR, 1.0 - LOG_FLOOR)
    bce = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    bce_img = bce.mean(axis=(-2, -1))
    g_bce = (-target / p + (1.0 - target) / (1.0 - p)) / npix

    axes = (-2, -1)
    inter = (pred * target).sum(axis=axes, keepdims=True)
    denom = pred.sum(axis=axes, keepdims=True) + target.sum(axis=axes, keepdims=True) + smooth
    dice = (2.0 * inter + smooth) / denom
    g_dice = -(2.0 * target * denom - (2.0 * inter + smooth)) / denom**2

    loss = float((bce_img + 1.0 - dice[..., 0, 0]).mean())
    grad = ((g_bce + g_dice) / n_img).astype(out_dtype, copy=False)
    return loss, grad
