"""Binary parameter checkpoints (``XCKP``) with a JSON manifest alongside."""
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"XCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _atomic_write(path, data):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def manifest_path(path):
    return Path(str(path) + ".json")


def save_checkpoint(path, state, meta=None):
    """Write named arrays as little-endian f32 blocks plus ``<path>.json``."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    blocks = []
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
        blocks.append({"name": name, "shape": list(arr.shape)})
    _atomic_write(path, b"".join(parts))
    manifest = {"format": "XCKP", "version": VERSION, "blocks": blocks, "meta": meta or {}}
    _atomic_write(manifest_path(path), json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"))


def load_checkpoint(path):
    """Return (state dict of float32 arrays, manifest meta)."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an XCKP checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    meta = {}
    mp = manifest_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text()).get("meta", {})
    return state, meta
