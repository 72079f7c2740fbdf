"""NNCK tensor checkpoints with JSON sidecars."""

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Dict

import numpy as np

from src.errors import FormatError

CHECKPOINT_MAGIC = b"NNCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: Dict[str, np.ndarray]) -> Path:
    """Write named float64 tensors, row-major, little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, value in tensors.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(value, dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))
    return path


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"truncated {what}", pos)
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad magic", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)

    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("tensor name is not UTF-8", pos - name_len) from e
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims)) if rank else 1
        payload = take(8 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes", pos)
    return tensors


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_sidecar(path, meta: Dict[str, Any]) -> Path:
    out = sidecar_path(path)
    out.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out


def read_sidecar(path) -> Dict[str, Any]:
    return json.loads(sidecar_path(path).read_text())


def parameter_checksum(params: Dict[str, np.ndarray]) -> str:
    """SHA-256 over parameter names and float64 payloads."""
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return digest.hexdigest()
