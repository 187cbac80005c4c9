from __future__ import annotations

import numpy as np
from scipy import ndimage

MAX_ANGLE = 15.0


def hflip(arr):
    return np.ascontiguousarray(arr[..., ::-1])


def rotate(arr, angle, order):
    if angle == 0:
        return np.array(arr, copy=True)
    axes = (arr.ndim - 1, arr.ndim - 2)
    return ndimage.rotate(arr, angle, axes=axes, reshape=False, order=order, mode="constant", cval=0.0)


def augment(image, mask=None, op="hflip", angle=None, seed=None):
    """Apply the same geometric transform to an image and an optional mask.

    ``op`` is ``"hflip"`` or ``"rotate"``. Rotation uses bilinear
    interpolation for the image and nearest for the mask, filling
    out-of-frame pixels with 0; without an explicit ``angle`` one is drawn
    uniformly from [-15, 15] degrees using ``seed``.
    """
    image = np.asarray(image)
    if op == "hflip":
        return hflip(image), (None if mask is None else hflip(np.asarray(mask)))
    if op != "rotate":
        raise ValueError(f"unknown augmentation {op!r}")
    if angle is None:
        angle = float(np.random.default_rng(seed).uniform(-MAX_ANGLE, MAX_ANGLE))
    if abs(angle) > MAX_ANGLE:
        raise ValueError(f"rotation angle must lie in [-{MAX_ANGLE}, {MAX_ANGLE}], got {angle}")
    out = np.clip(rotate(image.astype(np.float64), angle, order=1), 0.0, 1.0).astype(image.dtype)
    if mask is None:
        return out, None
    mask = np.asarray(mask)
    return out, rotate(mask, angle, order=0).astype(mask.dtype)


def augment_dataset(images, masks, copies, seed=0):
    """Append ``copies`` randomly flipped or rotated variants of every pair.

    ``masks`` may be ``None`` or an array (or a tuple of arrays) aligned with
    ``images``; each extra copy reuses the source index, returned alongside.
    """
    rng = np.random.default_rng(seed)
    masks = () if masks is None else (masks if isinstance(masks, tuple) else (masks,))
    out_img = [images]
    out_masks = [[m] for m in masks]
    index = [np.arange(len(images))]
    for _ in range(copies):
        new_img = np.empty_like(images)
        new_masks = [np.empty_like(m) for m in masks]
        for i in range(len(images)):
            op = "hflip" if rng.random() < 0.5 else "rotate"
            angle = float(rng.uniform(-MAX_ANGLE, MAX_ANGLE)) if op == "rotate" else None
            new_img[i], _ = augment(images[i], None, op, angle)
            for src, dst in zip(masks, new_masks):
                dst[i] = hflip(src[i]) if op == "hflip" else rotate(src[i], angle, order=0)
        out_img.append(new_img)
        for acc, m in zip(out_masks, new_masks):
            acc.append(m)
        index.append(np.arange(len(images)))
    result = [np.concatenate(out_img)] + [np.concatenate(acc) for acc in out_masks]
    return tuple(result) + (np.concatenate(index),)
