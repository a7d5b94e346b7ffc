"""Tensor blob files and checkpoint directories.

Blob layout (little-endian)::

    0   4s  magic "TNS1"
    4   u32 dtype code (1 = float32, 2 = float64)
    8   u32 rank (0..4)
    12  u32 reserved (0)
    16  4×u32 dims, unused trailing dims are 0
    32  payload, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .base import Layer, ShapeError

MAGIC = b"TNS1"
_HEADER = struct.Struct("<4sIII")
_DIMS = struct.Struct("<4I")
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_DTYPES = {v: k for k, v in _CODES.items()}

MANIFEST = "manifest.json"


def encode_blob(array: np.ndarray) -> bytes:
    dtype = np.dtype(array.dtype)
    if dtype not in _CODES:
        raise ValueError(f"Unsupported blob dtype: {dtype}")
    if array.ndim > 4:
        raise ShapeError(f"Blob rank must be <= 4, got shape {array.shape}")
    dims = list(array.shape) + [0] * (4 - array.ndim)
    payload = np.ascontiguousarray(array, dtype=dtype.newbyteorder("<")).tobytes()
    return _HEADER.pack(MAGIC, _CODES[dtype], array.ndim, 0) + _DIMS.pack(*dims) + payload


def decode_blob(raw: bytes) -> np.ndarray:
    if len(raw) < _HEADER.size + _DIMS.size:
        raise ValueError("Blob truncated before header end")
    magic, code, rank, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"Bad blob magic: {magic!r}")
    if code not in _DTYPES or rank > 4:
        raise ValueError(f"Bad blob header: dtype code {code}, rank {rank}")
    shape = _DIMS.unpack_from(raw, _HEADER.size)[:rank]
    dtype = _DTYPES[code]
    data = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), offset=_HEADER.size + _DIMS.size)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"Blob payload has {data.size} scalars, header says {shape}")
    return data.astype(dtype).reshape(shape)


def save_blob(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_blob(array))


def load_blob(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Blob not found: {path.resolve()}")
    return decode_blob(path.read_bytes())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _blob_name(name: str) -> str:
    return name.replace("/", "_") + ".tns"


def save_checkpoint(model: Layer, out_dir: Path, config: dict | None = None) -> Path:
    """Write a JSON manifest plus one blob per parameter and buffer."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for kind, items in (("param", model.named_parameters()), ("buffer", model.named_buffers())):
        for name, item in items:
            array = item.value if kind == "param" else item
            filename = _blob_name(name)
            save_blob(out_dir / filename, array)
            entries.append({
                "name": name, "kind": kind, "shape": list(array.shape),
                "dtype": str(array.dtype), "file": filename,
            })
    manifest = {"format": "posekit-checkpoint", "config": config or {}, "tensors": entries}
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(ckpt_dir: Path) -> dict:
    path = Path(ckpt_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint manifest not found: {path.resolve()}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_checkpoint(model: Layer, ckpt_dir: Path) -> dict:
    """Copy checkpoint tensors into *model*; reject any name or shape mismatch."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    stored = {e["name"]: e for e in manifest["tensors"]}
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = {n: p.value.shape for n, p in params.items()}
    expected.update({n: b.shape for n, b in buffers.items()})

    diff = []
    for name, shape in expected.items():
        if name not in stored:
            diff.append(f"missing {name} {tuple(shape)}")
        elif tuple(stored[name]["shape"]) != tuple(shape):
            diff.append(f"{name}: checkpoint {tuple(stored[name]['shape'])} != model {tuple(shape)}")
    for name in stored.keys() - expected.keys():
        diff.append(f"unexpected {name} {tuple(stored[name]['shape'])}")
    if diff:
        raise ShapeError("Checkpoint does not match model config:\n  " + "\n  ".join(sorted(diff)))

    for name, entry in stored.items():
        array = load_blob(ckpt_dir / entry["file"])
        if name in params:
            params[name].value[...] = array
        else:
            buffers[name][...] = array
    return manifest
