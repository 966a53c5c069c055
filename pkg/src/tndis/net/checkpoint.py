"""Model checkpoints: a JSON manifest beside a raw float64 parameter blob.

Blob layout: ``b"TNDW"``, uint32 version, uint64 value count, then the
values as little-endian doubles. The manifest lists the layer configs and,
for each stored array, its layer, key, shape and offset into the blob.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .arch import build_model
from .model import Model

MAGIC = b"TNDW"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def _entries(model: Model):
    for layer in model.layers:
        for key, value in layer.params.items():
            yield layer, "param", key, value
        for key, value in layer.buffers().items():
            yield layer, "buffer", key, value


def save(model: Model, path, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.bin``; returns both paths."""
    model.sync()
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    arrays, index, offset = [], [], 0
    for layer, role, key, value in _entries(model):
        flat = np.ascontiguousarray(value, dtype="<f8").ravel()
        index.append({"layer": layer.name, "role": role, "key": key, "shape": list(value.shape), "offset": offset})
        arrays.append(flat)
        offset += flat.size
    blob = np.concatenate(arrays) if arrays else np.zeros(0, dtype="<f8")
    manifest = {
        "format": "tndis-checkpoint",
        "version": VERSION,
        "layers": [layer.config() for layer in model.layers],
        "arrays": index,
        "blob": base.with_suffix(".bin").name,
        **({"extra": extra} if extra else {}),
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path, bin_path = base.with_suffix(".json"), base.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    with open(bin_path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, blob.size))
        fh.write(blob.astype("<f8").tobytes())
    return json_path, bin_path


def load(path) -> tuple[Model, dict]:
    """Rebuild a model from a manifest path (with or without ``.json``)."""
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    json_path = base.with_suffix(".json")
    try:
        manifest = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{json_path}: not JSON ({exc})") from exc
    if manifest.get("format") != "tndis-checkpoint":
        raise FormatError(f"{json_path}: not a checkpoint manifest")
    if manifest.get("version") != VERSION:
        raise FormatError(f"{json_path}: unsupported version {manifest.get('version')}")
    raw = (json_path.parent / manifest["blob"]).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("parameter blob is truncated")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise FormatError("bad parameter blob header")
    if len(raw) != _HEADER.size + 8 * count:
        raise FormatError(f"blob holds {(len(raw) - _HEADER.size) // 8} values, header says {count}")
    blob = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    try:
        model = build_model(manifest["layers"])
        for entry in manifest["arrays"]:
            layer = model.layer(entry["layer"])
            size = int(np.prod(entry["shape"], dtype=np.int64))
            value = blob[entry["offset"] : entry["offset"] + size].reshape(entry["shape"]).copy()
            if entry["role"] == "param":
                layer.params[entry["key"]] = value
            else:
                setattr(layer, entry["key"], value)
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"checkpoint does not match its layers: {exc}") from exc
    model.sync()
    model.zero_grad()
    return model, manifest.get("extra", {})
