"""Binary formats: CMBT tensor containers and 8-bit PGM/PPM images.

CMBT layout (little-endian)::

    b"CMBT" | u8 version=1 | u8 rank | u64 dims[rank] | f64 payload (row-major)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CMBT"
VERSION = 1


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int, path: str | os.PathLike | None = None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (byte offset {offset})")
        self.offset = offset
        self.path = path


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim > 255:
        raise ValueError("rank above 255 cannot be encoded")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def decode_tensor(buf: bytes, path=None) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'CMBT'", 0, path)
    if len(buf) < 6:
        raise FormatError("truncated header", len(buf), path)
    version, rank = buf[4], buf[5]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4, path)
    end = 6 + 8 * rank
    if len(buf) < end:
        raise FormatError(f"truncated dims for rank {rank}", len(buf), path)
    dims = struct.unpack(f"<{rank}Q", buf[6:end])
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != end + 8 * count:
        raise FormatError(f"payload holds {len(buf) - end} bytes, dims {dims} need {8 * count}",
                          min(len(buf), end + 8 * count), path)
    return np.frombuffer(buf, dtype="<f8", offset=end, count=count).reshape(dims).astype(np.float64)


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path, rank: int | None = None) -> np.ndarray:
    arr = decode_tensor(Path(path).read_bytes(), path)
    if rank is not None and arr.ndim != rank:
        raise FormatError(f"expected rank {rank}, found rank {arr.ndim}", 5, path)
    return arr


# -- Netpbm -------------------------------------------------------------------
def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read an 8-bit P5/P6 file to floats in [0, 1]: (H, W) for P5, (3, H, W) for P6."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}", 0, path)
    fields = []
    for _ in range(3):
        start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"bad header field {tok!r}", start, path)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only 8-bit images supported, maxval={maxval}", pos, path)
    pos += 1
    chans = 3 if magic == b"P6" else 1
    need = width * height * chans
    if len(buf) - pos < need:
        raise FormatError(f"pixel data truncated: need {need} bytes", len(buf), path)
    px = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).astype(np.float64) / 255.0
    if chans == 1:
        return px.reshape(height, width)
    return px.reshape(height, width, 3).transpose(2, 0, 1).copy()


def to_bytes_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {gray.shape}")
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + to_bytes_u8(gray).tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"PPM needs a (3, H, W) array, got {rgb.shape}")
    _, h, w = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + to_bytes_u8(rgb.transpose(1, 2, 0)).tobytes())
