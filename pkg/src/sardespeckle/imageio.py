"""Image files.

The native format stores float32 pixels bit-exactly::

    magic    4 bytes  b"S2S1"
    version  u16      1
    domain   u8       0 reflectivity, 1 intensity, 2 amplitude, 3 log-intensity
    dtype    u8       0 = float32
    width    u32
    height   u32
    payload  width * height float32, row-major, little-endian

All header integers are little-endian.  :func:`export_pgm` writes a lossy
8-bit preview for humans and is never read back.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .image import Domain, Image

__all__ = ["ImageFormatError", "write_image", "read_image", "encode_image", "decode_image", "export_pgm"]

MAGIC = b"S2S1"
VERSION = 1
_HEADER = struct.Struct("<4sHBBII")


class ImageFormatError(ValueError):
    pass


def encode_image(img: Image) -> bytes:
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(img.values, dtype="<f4")
    if not np.isfinite(payload).all():
        raise ImageFormatError("values overflow float32")
    return _HEADER.pack(MAGIC, VERSION, int(img.domain), 0, img.width, img.height) + payload.tobytes()


def decode_image(buf: bytes) -> Image:
    if len(buf) < _HEADER.size:
        raise ImageFormatError("truncated header")
    magic, version, domain, dtype, width, height = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ImageFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ImageFormatError(f"unsupported version {version}")
    if domain > 3:
        raise ImageFormatError(f"unknown domain tag {domain}")
    if dtype != 0:
        raise ImageFormatError(f"unsupported dtype code {dtype}")
    expected = width * height * 4
    if len(buf) - _HEADER.size != expected:
        raise ImageFormatError(f"payload is {len(buf) - _HEADER.size} bytes, expected {expected}")
    values = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(height, width)
    return Image(values.astype(np.float32), Domain(domain))


def write_image(path, img: Image) -> Path:
    path = Path(path)
    path.write_bytes(encode_image(img))
    return path


def read_image(path) -> Image:
    return decode_image(Path(path).read_bytes())


def export_pgm(path, img: Image, log_scale: bool = True) -> Path:
    """8-bit binary PGM preview (lossy). Amplitudes are min-max stretched."""
    v = img.values if img.domain == Domain.LOG_INTENSITY else img.amplitude()
    v = np.asarray(v, dtype=np.float64)
    if log_scale and img.domain != Domain.LOG_INTENSITY:
        v = np.log(np.maximum(v, 1e-10))
    lo, hi = np.percentile(v, [0.5, 99.5])
    scaled = np.clip((v - lo) / max(hi - lo, 1e-12), 0, 1)
    data = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{img.width} {img.height}\n255\n".encode() + data.tobytes())
    return path
