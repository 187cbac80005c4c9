"""Synthetic lung phantoms with exact lung and infection masks.

Each slice shows two elliptical "lungs" of medium intensity inside a faint
body outline on a dark background. Positive patients carry one to three
bright lesion blobs that are clipped to the lung area, so the infection mask
is always a subset of the lung mask. Geometry is drawn per patient and
varies smoothly from slice to slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import save_gray
from .manifest import DatasetManifest, IngestionError, SliceRecord

NOISE_SIGMA = 0.02


@dataclass(frozen=True)
class PhantomConfig:
    n_patients_positive: int = 25
    n_patients_negative: int = 50
    slices_per_positive: int = 20
    slices_per_negative: int = 5
    side: int = 64
    seed: int = 7

    def __post_init__(self):
        counts = (self.n_patients_positive, self.n_patients_negative,
                  self.slices_per_positive, self.slices_per_negative)
        if min(counts) < 1:
            raise ValueError("patient and slice counts must be at least 1")
        if self.side < 32:
            raise ValueError(f"side must be at least 32 pixels, got {self.side}")


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return u * u + v * v <= 1.0


def _patient_geometry(rng, side, positive):
    geo = {
        "background": rng.uniform(0.02, 0.09),
        "body": rng.uniform(0.10, 0.15),
        "tissue": rng.uniform(0.30, 0.50),
        "cy": side * rng.uniform(0.47, 0.53),
        "lungs": [],
        "blobs": [],
    }
    for cx_frac in (0.30, 0.70):
        geo["lungs"].append({
            "cx": side * (cx_frac + rng.uniform(-0.02, 0.02)),
            "rx": side * rng.uniform(0.13, 0.17),
            "ry": side * rng.uniform(0.26, 0.32),
            "theta": np.deg2rad(rng.uniform(-8, 8)) * (1 if cx_frac < 0.5 else -1),
        })
    if positive:
        for _ in range(int(rng.integers(1, 4))):
            lung = int(rng.integers(0, 2))
            r = np.sqrt(rng.uniform(0.0, 1.0)) * 0.55
            phi = rng.uniform(0, 2 * np.pi)
            heading = rng.uniform(0, 2 * np.pi)
            geo["blobs"].append({
                "lung": lung,
                "u": r * np.cos(phi),
                "v": r * np.sin(phi),
                "radius": side * rng.uniform(0.045, 0.085),
                "aspect": rng.uniform(0.7, 1.3),
                "theta": rng.uniform(0, np.pi),
                "intensity": rng.uniform(0.70, 0.95),
                "phase": rng.uniform(0, 2 * np.pi),
                # lesions shift between neighbouring slices; offset per unit of slice position
                "drift": rng.uniform(0.3, 0.8) * np.array([np.cos(heading), np.sin(heading)]),
            })
    return geo


def render_slice(geo, side, position, rng):
    """Render one slice; ``position`` in [-0.5, 0.5] is the offset from mid-volume.

    Returns ``(image, lung_mask, infection_mask)``.
    """
    yy, xx = np.mgrid[0:side, 0:side].astype(float) + 0.5
    scale = 1.0 - 0.6 * position**2
    cy = geo["cy"] + side * 0.02 * position
    image = np.full((side, side), geo["background"])
    body = _ellipse(yy, xx, side / 2, side / 2, side * 0.44, side * 0.47, 0.0)
    image[body] = geo["body"]

    lung = np.zeros((side, side), dtype=bool)
    for L in geo["lungs"]:
        lung |= _ellipse(yy, xx, cy, L["cx"], L["ry"] * scale, L["rx"] * scale, L["theta"])
    image[lung] = geo["tissue"]

    infection = np.zeros((side, side), dtype=bool)
    for B in geo["blobs"]:
        L = geo["lungs"][B["lung"]]
        wobble = 0.05 * np.sin(B["phase"] + 4.0 * position)
        u, v = B["u"] + wobble + B["drift"][0] * position, B["v"] - wobble + B["drift"][1] * position
        reach = np.hypot(u, v)
        if reach > 0.7:
            u, v = 0.7 * u / reach, 0.7 * v / reach
        c, s = np.cos(L["theta"]), np.sin(L["theta"])
        dx, dy = u * L["rx"] * scale, v * L["ry"] * scale
        bx = L["cx"] + dx * c - dy * s
        by = cy + dx * s + dy * c
        radius = B["radius"] * (0.8 + 0.2 * np.cos(np.pi * position))
        blob = _ellipse(yy, xx, by, bx, radius * B["aspect"], radius / B["aspect"], B["theta"]) & lung
        image[blob] = B["intensity"]
        infection |= blob

    image = np.clip(image + rng.normal(0.0, NOISE_SIGMA, size=image.shape), 0.0, 1.0)
    return image, lung.astype(np.uint8), infection.astype(np.uint8)


def gen_phantom(cfg: PhantomConfig, out_dir) -> DatasetManifest:
    """Write phantom PNGs plus ``manifest.jsonl`` under ``out_dir``."""
    root = Path(out_dir)
    try:
        for sub in ("images", "lung_masks", "infection_masks"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"cannot create dataset directory {root}: {exc}") from None

    plan = [("covid", i, cfg.slices_per_positive) for i in range(cfg.n_patients_positive)]
    plan += [("normal", i, cfg.slices_per_negative) for i in range(cfg.n_patients_negative)]
    children = np.random.SeedSequence(cfg.seed).spawn(len(plan))

    records = []
    for (label, idx, n_slices), child in zip(plan, children):
        rng = np.random.default_rng(child)
        pid = f"{label}-{idx:03d}"
        geo = _patient_geometry(rng, cfg.side, positive=(label == "covid"))
        for j in range(n_slices):
            position = 0.0 if n_slices == 1 else (j / (n_slices - 1) - 0.5) * 0.8
            image, lung, infection = render_slice(geo, cfg.side, position, rng)
            name = f"{pid}_s{j:02d}.png"
            paths = {sub: f"{sub}/{name}" for sub in ("images", "lung_masks", "infection_masks")}
            try:
                save_gray(root / paths["images"], image)
                save_gray(root / paths["lung_masks"], lung)
                save_gray(root / paths["infection_masks"], infection)
            except OSError as exc:
                raise IngestionError(f"cannot write phantom slice {name}: {exc}") from None
            records.append(SliceRecord(pid, paths["images"], label, paths["lung_masks"], paths["infection_masks"]))

    manifest = DatasetManifest(records, cfg.side, root)
    manifest.save(root / "manifest.jsonl")
    return manifest
