"""On-disk formats: XRFC datacubes, XEMB embedded images, PNG, spectra sets."""
import io
import json
import os
import struct
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

XRFC_MAGIC = b"XRFC"
XEMB_MAGIC = b"XEMB"
VERSION = 1
_DTYPES = {0: np.dtype("<u4"), 1: np.dtype("<f4")}
_XRFC_HEADER = 4 + struct.calcsize("<IIIIB") + 7  # 28 bytes


class FormatError(ValueError):
    """File does not match the expected binary layout."""


@dataclass
class DataCube:
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.counts.shape


@dataclass
class EmbeddedImage:
    data: np.ndarray
    meta: dict = field(default_factory=dict)


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta_blob(meta):
    raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _read_meta(buf, off, path):
    if off + 4 > len(buf):
        raise FormatError(f"{path}: truncated before metadata")
    (n,) = struct.unpack_from("<I", buf, off)
    if off + 4 + n != len(buf):
        raise FormatError(f"{path}: metadata length {n} does not match file size")
    return json.loads(buf[off + 4:off + 4 + n].decode("utf-8"))


def write_datacube(path, cube):
    counts = np.asarray(cube.counts)
    if counts.ndim != 3:
        raise FormatError(f"datacube must be H x W x E, got shape {counts.shape}")
    code = 0 if np.issubdtype(counts.dtype, np.integer) else 1
    payload = np.ascontiguousarray(counts, dtype=_DTYPES[code])
    H, W, E = payload.shape
    header = XRFC_MAGIC + struct.pack("<IIIIB", VERSION, H, W, E, code) + b"\0" * 7
    atomic_write_bytes(path, header + payload.tobytes() + _meta_blob(cube.meta))


def read_datacube(path):
    buf = Path(path).read_bytes()
    if len(buf) < _XRFC_HEADER or buf[:4] != XRFC_MAGIC:
        raise FormatError(f"{path}: not an XRFC datacube")
    version, H, W, E, code = struct.unpack_from("<IIIIB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported XRFC version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    size = H * W * E * 4
    if _XRFC_HEADER + size > len(buf):
        raise FormatError(f"{path}: payload truncated")
    counts = np.frombuffer(buf, dtype=_DTYPES[code], count=H * W * E, offset=_XRFC_HEADER).reshape(H, W, E)
    counts = counts.astype(np.uint32 if code == 0 else np.float32)
    return DataCube(counts, _read_meta(buf, _XRFC_HEADER + size, path))


def write_embedded(path, emb):
    data = np.ascontiguousarray(emb.data, dtype="<f4")
    if data.ndim != 3:
        raise FormatError(f"embedded image must be H x W x C, got shape {data.shape}")
    H, W, C = data.shape
    atomic_write_bytes(path, XEMB_MAGIC + struct.pack("<IIII", VERSION, H, W, C) + data.tobytes() + _meta_blob(emb.meta))


def read_embedded(path):
    buf = Path(path).read_bytes()
    if len(buf) < 20 or buf[:4] != XEMB_MAGIC:
        raise FormatError(f"{path}: not an XEMB embedded image")
    version, H, W, C = struct.unpack_from("<IIII", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported XEMB version {version}")
    size = H * W * C * 4
    if 20 + size > len(buf):
        raise FormatError(f"{path}: payload truncated")
    data = np.frombuffer(buf, dtype="<f4", count=H * W * C, offset=20).reshape(H, W, C).astype(np.float32)
    return EmbeddedImage(data, _read_meta(buf, 20 + size, path))


def read_png(path, size=None):
    """RGB PNG -> float64 H x W x 3 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            im = im.convert("RGB")
            if size is not None:
                im = im.resize((size[1], size[0]), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from exc
    return arr


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img):
    """Write an H x W x 3 float image in [0, 1] (or uint8) as 8-bit PNG with fixed encoder settings."""
    arr = img if np.asarray(img).dtype == np.uint8 else to_uint8(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bio = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(bio, format="PNG", optimize=False, compress_level=6)
    atomic_write_bytes(path, bio.getvalue())


def write_spectra(path, sets, meta=None):
    """Store train/val/test spectrum count matrices as an ``.npz`` with fixed zip timestamps."""
    arrays = {k: np.asarray(v, dtype=np.uint32) for k, v in sets.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    bio = io.BytesIO()
    with zipfile.ZipFile(bio, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    atomic_write_bytes(path, bio.getvalue())


def read_spectra(path):
    try:
        with np.load(path) as z:
            sets = {k: z[k] for k in z.files if k != "meta"}
            meta = json.loads(bytes(z["meta"]).decode("utf-8")) if "meta" in z.files else {}
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: unreadable spectra set ({exc})") from exc
    return sets, meta
