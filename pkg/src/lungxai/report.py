"""Infection-degree text explanations and colour overlays."""

from __future__ import annotations

import re
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .attribution import Heatmap

SENTENCE = ("Total degree of infection in both lungs: {total:.2f} %, {left:.2f} % in the left lung "
            "and {right:.2f} % in the right lung")
_PATTERN = re.compile(r"both lungs: (?P<total>[0-9.]+) %, (?P<left>[0-9.]+) % in the left lung "
                      r"and (?P<right>[0-9.]+) % in the right lung")


@dataclass(frozen=True)
class InfectionDegree:
    total_pct: float
    left_pct: float
    right_pct: float
    lung_pixels: int
    left_pixels: int
    right_pixels: int
    single_component: bool = False

    def as_dict(self):
        return {"total_pct": self.total_pct, "left_pct": self.left_pct, "right_pct": self.right_pct,
                "lung_pixels": self.lung_pixels, "left_pixels": self.left_pixels,
                "right_pixels": self.right_pixels, "single_component": self.single_component}


def split_lungs(lung_mask):
    """Partition a lung mask into image-left and image-right halves.

    Connected components are assigned by centroid column: with two components
    the leftmost one is the left lung, with more they are grouped by the image
    midline. Returns ``(left, right, single_component)``.
    """
    lung = np.asarray(lung_mask).astype(bool)
    if lung.ndim != 2:
        raise ValueError(f"lung mask must be 2-D, got shape {lung.shape}")
    if not lung.any():
        raise ValueError("lung mask is empty; the infection degree is undefined")
    comp, n = ndimage.label(lung)
    if n == 1:
        cx = np.nonzero(lung)[1].mean()
        side = np.zeros_like(lung)
        return (lung, side, True) if cx < lung.shape[1] / 2 else (side, lung, True)
    centroids = [c[1] for c in ndimage.center_of_mass(lung, comp, range(1, n + 1))]
    if n == 2:
        left_ids = [1 + int(np.argmin(centroids))]
    else:
        left_ids = [i + 1 for i, cx in enumerate(centroids) if cx < lung.shape[1] / 2]
    left = np.isin(comp, left_ids)
    return left, lung & ~left, False


def infection_degree(highlight, lung_mask) -> InfectionDegree:
    """Share of lung pixels covered by ``highlight``, overall and per lung.

    Both per-lung shares use the total lung area as denominator, so they add
    up to the overall share.
    """
    highlight = np.asarray(highlight).astype(bool)
    left, right, single = split_lungs(lung_mask)
    if highlight.shape != left.shape:
        raise ValueError(f"highlight shape {highlight.shape} does not match lung mask {left.shape}")
    n_lung = int(left.sum() + right.sum())
    n_left = int((highlight & left).sum())
    n_right = int((highlight & right).sum())
    left_pct = 100.0 * n_left / n_lung
    right_pct = 100.0 * n_right / n_lung
    return InfectionDegree(left_pct + right_pct, left_pct, right_pct, n_lung, n_left, n_right, single)


def render_text(d: InfectionDegree) -> str:
    return SENTENCE.format(total=d.total_pct, left=d.left_pct, right=d.right_pct)


def parse_text(text):
    """Recover ``(total, left, right)`` percentages from a rendered sentence."""
    m = _PATTERN.search(text)
    if m is None:
        raise ValueError("text does not contain an infection-degree sentence")
    return float(m["total"]), float(m["left"]), float(m["right"])


def colormap(values):
    """Dark blue to red ramp for values in [0, 1], returned as float RGB."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)[..., None]
    stops = np.array([[0.0, 0.0, 0.5], [0.0, 0.5, 1.0], [0.5, 1.0, 0.5], [1.0, 0.8, 0.0], [0.8, 0.0, 0.0]])
    pos = v[..., 0] * (len(stops) - 1)
    lo = np.minimum(pos.astype(int), len(stops) - 2)
    frac = (pos - lo)[..., None]
    return stops[lo] * (1 - frac) + stops[lo + 1] * frac


MASK_TINT = np.array([1.0, 0.15, 0.15])


def overlay_rgb(image, overlay, alpha=0.4):
    """Blend a grayscale slice with a heatmap (colormapped) or a binary mask (solid tint)."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    base = np.asarray(image, dtype=np.float64).squeeze()
    is_heatmap = isinstance(overlay, Heatmap)
    ov = overlay.values if is_heatmap else np.asarray(overlay)
    if base.shape != ov.shape:
        raise ValueError(f"image shape {base.shape} does not match overlay shape {ov.shape}")
    gray = np.repeat(np.clip(base, 0.0, 1.0)[..., None], 3, axis=2)
    if is_heatmap:
        vals = ov if overlay.calibrated else ov / max(float(ov.max()), 1e-12)
        return (1 - alpha) * gray + alpha * colormap(vals)
    m = ov.astype(bool)[..., None]
    return np.where(m, (1 - alpha) * gray + alpha * MASK_TINT, gray)


def render_overlay(image, overlay, alpha=0.4) -> bytes:
    """PNG bytes of :func:`overlay_rgb`."""
    rgb = np.round(overlay_rgb(image, overlay, alpha) * 255).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG")
    return buf.getvalue()


def save_overlay(path, image, overlay, alpha=0.4):
    Path(path).write_bytes(render_overlay(image, overlay, alpha))
