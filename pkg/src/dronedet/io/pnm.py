"""Binary PPM (P6) and PGM (P5) images, 8-bit only.

Compressed formats are not read; convert first, e.g. with Pillow:
``Image.open("a.jpg").convert("RGB").save("a.ppm")``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Tuple, Union

import numpy as np


class PnmError(ValueError):
    pass


def _header(data: bytes) -> Tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, payload offset)."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PnmError("truncated header")
        tokens.append(data[start:pos])
        if len(tokens) == 1 and tokens[0] not in (b"P5", b"P6"):
            raise PnmError(f"unsupported image format (magic {tokens[0][:2].decode('latin-1')!r}); "
                           "only binary PPM (P6) and PGM (P5) are read")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError("malformed header") from None
    if width < 1 or height < 1:
        raise PnmError(f"bad image size {width}x{height}")
    if maxval != 255:
        raise PnmError(f"only 8-bit images are supported (maxval {maxval})")
    return tokens[0], width, height, maxval, pos


def decode_pnm(data: bytes) -> np.ndarray:
    """``H x W x 3`` for P6, ``H x W`` for P5, dtype uint8."""
    magic, w, h, _, off = _header(data)
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    payload = data[off:off + need]
    if len(payload) < need:
        raise PnmError("unexpected end of pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(h, w, 3).copy() if channels == 3 else arr.reshape(h, w).copy()


def encode_pnm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise PnmError(f"cannot encode array of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_image(path: Union[str, Path]) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_image(path: Union[str, Path], image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(image))


def image_size(path: Union[str, Path]) -> Tuple[int, int]:
    """(width, height) from the header alone."""
    with open(path, "rb") as f:
        head = f.read(512)
    _, w, h, _, _ = _header(head)
    return w, h
