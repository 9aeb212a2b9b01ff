"""Versioned, language-neutral checkpoint container.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"ASLECKPT"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header
    16 + H     ...       tensor blobs, back to back

The header holds ``{"config": {...}, "step": int, "meta": {...}, "tensors": [...]}``
where each tensor entry is ``{"name", "dtype", "shape", "offset", "nbytes"}``;
``offset`` counts from the first blob byte and ``dtype`` is a little-endian
numpy type string (``"<f4"`` or ``"<f8"``), stored C-contiguous.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import AsleConfig
from .model import AsleNet

MAGIC = b"ASLECKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: AsleNet, path, step: int = 0, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": model.config.to_dict(), "step": int(step), "meta": meta or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into ``(header, {name: array})`` without building a model."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not an ASLE checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen
    arrays = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        raw = data[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"truncated tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, arrays


def load_checkpoint(path) -> tuple[AsleNet, int, dict]:
    header, arrays = read_checkpoint(path)
    model = AsleNet(AsleConfig.from_dict(header["config"]))
    dtype = next(iter(arrays.values())).dtype if arrays else np.float32
    if dtype == np.float64:
        model = model.double()
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    return model, int(header["step"]), header.get("meta", {})
