"""Raster file formats: PFM, KITTI-style 16-bit disparity PNG, masks and colour PNGs.

All writers go through :func:`atomic_write_bytes` so a crashed job never
leaves a half-written file behind.
"""

from __future__ import annotations

import io
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MalformedHeader, TruncatedBody


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


_FILE_MODE = 0o666 & ~_umask()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------- PFM

def encode_pfm(array: np.ndarray, scale: float = 1.0) -> bytes:
    """Encode an (H, W) or (H, W, 3) array as little-endian PFM."""
    a = np.asarray(array)
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM needs an (H, W) or (H, W, 3) array, got shape {a.shape}")
    height, width = a.shape[:2]
    header = tag + b"\n" + f"{width} {height}\n".encode() + f"{-abs(scale)!r}\n".encode()
    body = np.ascontiguousarray(np.flipud(a), dtype="<f4").tobytes()
    return header + body


def decode_pfm(data: bytes):
    """Decode PFM bytes; returns ``(array, scale)`` with rows top-to-bottom."""
    f = io.BytesIO(data)
    lines = []
    for _ in range(3):
        line = f.readline()
        if not line.endswith(b"\n"):
            raise MalformedHeader("PFM header truncated")
        lines.append(line.decode("ascii", errors="replace").strip())
    tag, dims, scale_line = lines
    if tag == "Pf":
        channels = 1
    elif tag == "PF":
        channels = 3
    else:
        raise MalformedHeader(f"not a PFM file (tag {tag!r})")
    m = re.fullmatch(r"(\d+)\s+(\d+)", dims)
    if not m:
        raise MalformedHeader(f"bad PFM dimensions line {dims!r}")
    width, height = int(m.group(1)), int(m.group(2))
    try:
        scale = float(scale_line)
    except ValueError:
        raise MalformedHeader(f"bad PFM scale line {scale_line!r}") from None
    if scale == 0:
        raise MalformedHeader("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    offset = f.tell()
    if len(data) - offset < 4 * count:
        raise TruncatedBody("PFM body shorter than width*height")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(arr.reshape(shape)).astype(np.float32), scale


def write_pfm(path, array: np.ndarray, scale: float = 1.0) -> None:
    atomic_write_bytes(path, encode_pfm(array, scale))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())[0]


# --------------------------------------------------------------------------- PNG

def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def encode_disparity_png16(disparity: np.ndarray, valid: np.ndarray | None = None) -> bytes:
    """KITTI convention: ``round(d * 256)`` as uint16, 0 means invalid."""
    d = np.asarray(disparity, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(d) & (d > 0)
    valid = valid & np.isfinite(d)
    enc = np.zeros(d.shape, dtype=np.uint16)
    enc[valid] = np.clip(np.round(d[valid] * 256.0), 0, 65535).astype(np.uint16)
    return _png_bytes(Image.fromarray(enc))


def decode_disparity_png16(data: bytes):
    """Returns ``(disparity float64, valid bool)``."""
    with Image.open(io.BytesIO(data)) as img:
        raw = np.array(img)
    if raw.dtype not in (np.uint16, np.int32, np.uint8) or raw.ndim != 2:
        raise MalformedHeader(f"expected a single-channel 16-bit PNG, got {raw.dtype} {raw.shape}")
    raw = raw.astype(np.float64)
    return raw / 256.0, raw > 0


def write_disparity_png16(path, disparity, valid=None) -> None:
    atomic_write_bytes(path, encode_disparity_png16(disparity, valid))


def read_disparity_png16(path):
    return decode_disparity_png16(Path(path).read_bytes())


def write_mask_png(path, mask: np.ndarray) -> None:
    """8-bit mask, 255 for true."""
    atomic_write_bytes(path, _png_bytes(Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))))


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("L")) > 127


def write_color_png(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] (H, W) or (H, W, 3) as 8-bit PNG."""
    a = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    atomic_write_bytes(path, _png_bytes(Image.fromarray(np.round(a * 255.0).astype(np.uint8))))


def read_color_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img).astype(np.float64) / 255.0
