from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .manifest import DatasetManifest, IngestionError


def _read_gray(path):
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format != "PNG" or img.mode != "L":
                raise IngestionError(f"{path}: expected an 8-bit grayscale PNG, got {img.format} {img.mode}")
            return np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"{path}: unreadable image ({exc})") from None


def _resize(arr, side, resample):
    if arr.shape == (side, side):
        return arr
    return np.asarray(Image.fromarray(arr.astype(np.float32), mode="F").resize((side, side), resample))


def load_slice(path, side) -> np.ndarray:
    """Load an 8-bit grayscale PNG as a ``(1, side, side)`` float array in [0, 1]."""
    values = _read_gray(path).astype(np.float32) / 255.0
    values = _resize(values, side, Image.BILINEAR)
    return np.clip(values, 0.0, 1.0)[None]


def load_mask(path, side) -> np.ndarray:
    """Load a 0/255 mask PNG, nearest-resize, and threshold at 0.5 into {0, 1}."""
    values = _read_gray(path).astype(np.float32) / 255.0
    values = _resize(values, side, Image.NEAREST)
    return (values > 0.5).astype(np.uint8)


def save_gray(path, values):
    """Write a [0, 1] float array (or a {0, 1} mask) as an 8-bit PNG."""
    arr = np.asarray(values)
    if arr.dtype == np.uint8 and arr.max(initial=0) <= 1:
        data = arr * 255
    else:
        data = np.round(np.clip(arr, 0.0, 1.0) * 255.0)
    Image.fromarray(data.astype(np.uint8), mode="L").save(path, format="PNG")


def load_dataset(manifest: DatasetManifest, side=None, require=()):
    """Load every record of a manifest into arrays.

    Returns a dict with ``images`` ``(N, 1, S, S)``, ``lung`` and
    ``infection`` ``(N, S, S)`` uint8 masks (zeros where absent), ``labels``
    and ``patients``. ``require`` names masks that must be present
    (``"lung"``, ``"infection"``).
    """
    side = side or manifest.resolution
    n = len(manifest)
    images = np.zeros((n, 1, side, side), dtype=np.float32)
    lung = np.zeros((n, side, side), dtype=np.uint8)
    infection = np.zeros((n, side, side), dtype=np.uint8)
    for i, rec in enumerate(manifest.records):
        images[i] = load_slice(manifest.resolve(rec.image_path), side)
        if rec.lung_mask_path is not None:
            lung[i] = load_mask(manifest.resolve(rec.lung_mask_path), side)
        elif "lung" in require:
            raise IngestionError(f"{rec.image_path}: record has no lung mask")
        if rec.infection_mask_path is not None:
            infection[i] = load_mask(manifest.resolve(rec.infection_mask_path), side)
        elif "infection" in require and rec.label == "covid":
            raise IngestionError(f"{rec.image_path}: covid record has no infection mask")
    return {
        "images": images,
        "lung": lung,
        "infection": infection,
        "labels": np.array([r.target for r in manifest.records], dtype=int),
        "patients": np.array([r.patient_id for r in manifest.records]),
    }
