from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LXHM"
VERSION = 1


@dataclass
class Heatmap:
    """Nonnegative attribution map at input resolution."""

    values: np.ndarray
    method: str
    calibrated: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or self.values.min(initial=0.0) < 0:
            raise ValueError("heatmap values must be finite and nonnegative")
        if self.calibrated and self.values.max(initial=0.0) > 1.0:
            raise ValueError("calibrated heatmap values must lie in [0, 1]")


def heatmap_bytes(hm: Heatmap) -> bytes:
    side = hm.values.shape[0]
    if hm.values.shape != (side, side):
        raise ValueError("only square heatmaps can be serialized")
    tag = hm.method.encode("ascii")
    header = MAGIC + struct.pack("<BIBB", VERSION, side, int(hm.calibrated), len(tag)) + tag
    return header + hm.values.astype("<f4").tobytes()


def write_heatmap(path, hm: Heatmap):
    Path(path).write_bytes(heatmap_bytes(hm))


def read_heatmap(path) -> Heatmap:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a heatmap file")
    version, side, calibrated, tlen = struct.unpack_from("<BIBB", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported heatmap version {version}")
    pos = 4 + struct.calcsize("<BIBB")
    tag = blob[pos:pos + tlen].decode("ascii")
    pos += tlen
    values = np.frombuffer(blob, dtype="<f4", count=side * side, offset=pos).reshape(side, side)
    return Heatmap(values.astype(np.float64), tag, bool(calibrated))
