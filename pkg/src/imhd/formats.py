"""Binary file formats: raw image tensors and PPM P6.

Raw tensor files carry magic "IMHD", u8 rank, u32 little-endian dims, then
f32 little-endian data. PPM is the human-viewable output of the augmentation
CLI. Byte order is fixed little-endian regardless of host.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

RAW_MAGIC = b"IMHD"


class FormatError(ValueError):
    """Corrupt or mistyped binary file."""


def write_raw_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raw_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != RAW_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    off = 4
    if len(blob) < off + 1:
        raise FormatError(f"{path}: truncated header")
    rank = blob[off]
    off += 1
    if len(blob) < off + 4 * rank:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(blob) != off + 4 * count:
        raise FormatError(f"{path}: expected {4 * count} data bytes, got {len(blob) - off}")
    data = np.frombuffer(blob, dtype="<f4", offset=off, count=count)
    return data.astype(np.float64).reshape(dims)


def write_ppm(path, img: np.ndarray) -> None:
    """[3, h, w] floats in [0, 1] -> binary PPM (P6, maxval 255)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"expected [3, h, w] image, got shape {img.shape}")
    _, h, w = img.shape
    rgb = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P6"):
        raise FormatError(f"{path}: not a P6 PPM")
    fields, off = [], 2
    while len(fields) < 3:
        while off < len(blob) and blob[off] in b" \t\r\n":
            off += 1
        if off < len(blob) and blob[off:off + 1] == b"#":
            while off < len(blob) and blob[off] not in b"\r\n":
                off += 1
            continue
        start = off
        while off < len(blob) and blob[off] not in b" \t\r\n":
            off += 1
        fields.append(int(blob[start:off]))
    off += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=off, count=h * w * 3)
    if raw.size != h * w * 3:
        raise FormatError(f"{path}: truncated pixel data")
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
