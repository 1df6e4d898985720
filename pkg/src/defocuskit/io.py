"""File formats: 8-bit PNG via Pillow and the lossless FMAP float map.

FMAP layout: ``b"FMAP1\\n"``, ASCII ``"<width> <height>\\n"``, then
width*height little-endian float32 values in row-major order.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np
from PIL import Image

FMAP_MAGIC = b"FMAP1\n"


class FormatError(ValueError):
    pass


def _atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    _atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def encode_fmap(values) -> bytes:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise FormatError(f"FMAP holds 2-D maps, got shape {arr.shape}")
    h, w = arr.shape
    header = FMAP_MAGIC + f"{w} {h}\n".encode("ascii")
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_fmap(data: bytes) -> np.ndarray:
    if not data.startswith(FMAP_MAGIC):
        raise FormatError("missing FMAP1 magic")
    end = data.find(b"\n", len(FMAP_MAGIC))
    if end < 0:
        raise FormatError("truncated FMAP header")
    try:
        w, h = (int(v) for v in data[len(FMAP_MAGIC):end].decode("ascii").split())
    except ValueError as exc:
        raise FormatError("malformed FMAP header") from exc
    payload = data[end + 1:]
    if w < 1 or h < 1 or len(payload) != 4 * w * h:
        raise FormatError(f"FMAP payload is {len(payload)} bytes, expected {4 * w * h}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()


def write_fmap(path, values):
    _atomic_write_bytes(path, encode_fmap(values))


def read_fmap(path) -> np.ndarray:
    """Read an FMAP file as float32 (exact stored values)."""
    with open(path, "rb") as fh:
        return decode_fmap(fh.read())


def read_image(path) -> np.ndarray:
    """Decode a PNG (or any Pillow-readable file) into [0, 1] floats.

    Gray files give ``(H, W)``, everything else ``(H, W, 3)``.
    """
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(values) -> np.ndarray:
    return np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(values) -> bytes:
    import io as _io

    arr = to_uint8(values)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = _io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, values):
    """Write [0, 1] values as 8-bit gray or RGB PNG."""
    _atomic_write_bytes(path, encode_png(values))


def read_map(path) -> np.ndarray:
    """Read a float map from FMAP, or from a gray PNG scaled to [0, 1]."""
    if str(path).lower().endswith(".fmap"):
        return read_fmap(path).astype(np.float64)
    arr = read_image(path)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return arr
