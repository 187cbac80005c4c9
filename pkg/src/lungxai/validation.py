"""Input validation shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_images(X, side=None, dtype=np.float32):
    """Coerce ``(H, W)``, ``(N, H, W)`` or ``(N, 1, H, W)`` input to ``(N, 1, H, W)``."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=[np.float64, np.float32])
    if X.ndim == 2:
        X = X[None, None]
    elif X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4 or X.shape[1] != 1:
        raise ValueError(f"expected grayscale images shaped (N, 1, H, W), got {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise ValueError(f"images must be square, got {X.shape[2]}x{X.shape[3]}")
    if side is not None and X.shape[2] != side:
        raise ValueError(f"expected {side}x{side} images, got {X.shape[2]}x{X.shape[3]}")
    return X.astype(dtype, copy=False)


def check_masks(M, n=None, side=None):
    """Coerce binary masks to ``(N, H, W)`` uint8, rejecting non-binary values."""
    M = np.asarray(M)
    if M.ndim == 2:
        M = M[None]
    elif M.ndim == 4 and M.shape[1] == 1:
        M = M[:, 0]
    if M.ndim != 3:
        raise ValueError(f"expected masks shaped (N, H, W), got {M.shape}")
    if not np.isin(M, (0, 1)).all():
        raise ValueError("masks must contain only 0 and 1")
    if n is not None and len(M) != n:
        raise ValueError(f"expected {n} masks, got {len(M)}")
    if side is not None and M.shape[1:] != (side, side):
        raise ValueError(f"expected {side}x{side} masks, got {M.shape[1:]}")
    return M.astype(np.uint8, copy=False)


def check_labels(y, n=None):
    y = np.asarray(y).astype(int).ravel()
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (normal) or 1 (covid)")
    if n is not None and len(y) != n:
        raise ValueError(f"expected {n} labels, got {len(y)}")
    return y
