"""Lossless image files without external codecs: PNG (8/16-bit gray or RGB)
and PFM (32-bit float grayscale) readers and writers.

The PNG writer emits filter-0 scanlines, which keeps output bytes a pure
function of the pixel data; the reader nevertheless understands all five
standard filters.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    pass


def _chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))


def encode_png(image: np.ndarray) -> bytes:
    """Encode (h, w) or (h, w, 3) arrays of dtype uint8 or uint16."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        depth = 8
    elif image.dtype == np.uint16:
        depth = 16
    else:
        raise ImageFormatError(f"unsupported dtype {image.dtype}")
    if image.ndim == 2:
        color_type = 0
        planes = image[..., None]
    elif image.ndim == 3 and image.shape[2] == 3:
        color_type = 2
        planes = image
    else:
        raise ImageFormatError(f"unsupported shape {image.shape}")
    h, w = planes.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, depth, color_type, 0, 0, 0)
    # PNG stores 16-bit samples big-endian
    raw = planes.astype(">u2" if depth == 16 else "u1").tobytes()
    stride = w * planes.shape[2] * (depth // 8)
    scanlines = b"".join(
        b"\x00" + raw[y * stride : (y + 1) * stride] for y in range(h)
    )
    return _PNG_SIG + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(scanlines, 9)) + _chunk(b"IEND", b"")


def write_png(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(image))


def _unfilter(kind: int, row: bytearray, prev: bytes, bpp: int) -> None:
    n = len(row)
    if kind == 0:
        return
    if kind == 1:
        for i in range(bpp, n):
            row[i] = (row[i] + row[i - bpp]) & 0xFF
    elif kind == 2:
        for i in range(n):
            row[i] = (row[i] + prev[i]) & 0xFF
    elif kind == 3:
        for i in range(n):
            left = row[i - bpp] if i >= bpp else 0
            row[i] = (row[i] + ((left + prev[i]) >> 1)) & 0xFF
    elif kind == 4:
        for i in range(n):
            a = row[i - bpp] if i >= bpp else 0
            b = prev[i]
            c = prev[i - bpp] if i >= bpp else 0
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
            row[i] = (row[i] + pred) & 0xFF
    else:
        raise ImageFormatError(f"unknown PNG filter {kind}")


def read_png(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:8] != _PNG_SIG:
        raise ImageFormatError("not a PNG file")
    pos = 8
    ihdr = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack_from(">I", blob, pos)
        tag = blob[pos + 4 : pos + 8]
        data = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", data)
        elif tag == b"IDAT":
            idat += data
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise ImageFormatError("missing IHDR")
    w, h, depth, color_type, _, _, interlace = ihdr
    if interlace or depth not in (8, 16) or color_type not in (0, 2):
        raise ImageFormatError("unsupported PNG variant")
    channels = 1 if color_type == 0 else 3
    bpp = channels * (depth // 8)
    stride = w * bpp
    raw = zlib.decompress(idat)
    out = bytearray()
    prev = bytes(stride)
    for y in range(h):
        start = y * (stride + 1)
        kind = raw[start]
        row = bytearray(raw[start + 1 : start + 1 + stride])
        _unfilter(kind, row, prev, bpp)
        out += row
        prev = bytes(row)
    dtype = ">u2" if depth == 16 else "u1"
    arr = np.frombuffer(bytes(out), dtype=dtype).reshape(h, w, channels)
    arr = arr.astype(np.uint16 if depth == 16 else np.uint8)
    return arr[..., 0] if channels == 1 else arr


def write_pfm(path, image: np.ndarray) -> None:
    """Grayscale float32 image; stored little-endian, rows bottom-to-top."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ImageFormatError("PFM writer expects (h, w) grayscale")
    h, w = image.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode()
    Path(path).write_bytes(header + image[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf",):
        raise ImageFormatError("not a grayscale PFM file")
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=h * w).reshape(h, w)
    return data[::-1].astype(np.float32)
