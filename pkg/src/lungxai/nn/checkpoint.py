"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"LXNNCKPT"
    version    uint8
    header     uint32 length + UTF-8 JSON {"input_shape", "layers", "meta"}
    n_params   uint32
    per param: uint16 name length, name, uint8 ndim, ndim x uint32 extents,
               raw float32 data ('<f4', C order)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import layer_from_spec
from .network import Network

MAGIC = b"LXNNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(net: Network, meta: dict | None = None) -> bytes:
    header = json.dumps(
        {"input_shape": list(net.input_shape), "layers": net.specs(), "meta": meta or {}},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(header)), header]
    params = list(net.named_params())
    parts.append(struct.pack("<I", len(params)))
    for name, value in params:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes, dtype=np.float32):
    """Parse a checkpoint; returns ``(network, meta)``."""
    if blob[:8] != MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic)")
    version = blob[8]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; this reader knows {VERSION}")
    pos = 9
    try:
        (hlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        header = json.loads(blob[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode()
            pos += nlen
            ndim = blob[pos]
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            if pos + size > len(blob):
                raise CheckpointError(f"truncated data for {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=pos).reshape(shape)
            pos += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    layers = [layer_from_spec(s) for s in header["layers"]]
    net = Network(layers, header["input_shape"], dtype=dtype)
    expected = {name for name, _ in net.named_params()}
    if expected != set(params):
        raise CheckpointError(f"parameter names do not match the architecture: {sorted(expected ^ set(params))}")
    try:
        net.load_params(params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    return net, header.get("meta", {})


def save(path, net: Network, meta: dict | None = None):
    Path(path).write_bytes(dumps(net, meta))


def load(path, dtype=np.float32):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return loads(path.read_bytes(), dtype=dtype)
