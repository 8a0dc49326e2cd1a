"""Grayscale image IO (8-bit PGM and PNG) and the bicubic resampler.

All in-memory images are float64 arrays in [0, 1]; files are 8-bit. PGM uses
the binary P5 format. PNG goes through Pillow.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ContractViolation, DataError
from .patches import as_image


def to_uint8(image: np.ndarray) -> np.ndarray:
    image = as_image(image)
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def to_unit_float(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def _read_pgm_token(stream) -> bytes:
    """Next whitespace-delimited token, skipping '#' comment lines."""
    token = b""
    while True:
        ch = stream.read(1)
        if ch == b"":
            raise DataError("unexpected end of PGM header")
        if ch == b"#":
            stream.readline()
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM file into a [0, 1] float image."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(2)
            if magic != b"P5":
                raise DataError(f"{path}: expected P5 PGM, found {magic!r}")
            width = int(_read_pgm_token(fh))
            height = int(_read_pgm_token(fh))
            maxval = int(_read_pgm_token(fh))
            if maxval != 255:
                raise DataError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
            data = fh.read(width * height)
            if len(data) != width * height:
                raise DataError(f"{path}: truncated pixel data")
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    raw = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return to_unit_float(raw)


def write_pgm(path, image: np.ndarray) -> None:
    raw = to_uint8(image)
    h, w = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            raw = np.asarray(img.convert("L"))
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read {path}: {err}") from err
    return to_unit_float(raw)


def write_png(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image), mode="L").save(path, format="PNG")


def read_image(path) -> np.ndarray:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".png":
        return read_png(path)
    raise DataError(f"unsupported image format {ext!r} (use .pgm or .png)")


def write_image(path, image: np.ndarray) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        write_pgm(path, image)
    elif ext == ".png":
        write_png(path, image)
    else:
        raise ContractViolation(f"unsupported image format {ext!r} (use .pgm or .png)")


def bicubic_resize(image: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic resampling by an integer or rational factor (block-aligned)."""
    image = as_image(image)
    out = ndimage.zoom(image, scale, order=3, mode="reflect", grid_mode=True)
    return np.clip(out, 0.0, 1.0)
