"""Binary PGM/PPM image files.

Grayscale images travel as binary PGM (P5, maxval 255). Color PPM (P6)
inputs are converted to luminance at read time. Images are float64
arrays in [0, 255]; the writer rounds to whole intensities.
"""

from __future__ import annotations

import numpy as np

from .codec import round_half_away


def _read_tokens(fh, count: int) -> list[bytes]:
    """Read whitespace-separated header tokens, skipping '#' comments."""
    tokens = []
    while len(tokens) < count:
        ch = fh.read(1)
        if not ch:
            raise ValueError("unexpected end of file in header")
        if ch in b" \t\r\n":
            continue
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        token = ch
        while True:
            ch = fh.read(1)
            if not ch or ch in b" \t\r\n":
                break
            token += ch
        tokens.append(token)
    return tokens


def read_image(path) -> np.ndarray:
    """Read a P5 (grayscale) or P6 (color, converted to luminance) image."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")
        width, height, maxval = (int(t) for t in _read_tokens(fh, 3))
        if maxval < 1 or maxval > 255:
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        channels = 3 if magic == b"P6" else 1
        payload = fh.read(width * height * channels)
        if len(payload) != width * height * channels:
            raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    if maxval != 255:
        data = data * (255.0 / maxval)
    if channels == 3:
        rgb = data.reshape(height, width, 3)
        data = round_half_away(
            0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        )
        return np.clip(data, 0.0, 255.0)
    return data.reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a grayscale image as binary PGM, rounding to 8-bit values."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    pixels = round_half_away(np.clip(image, 0.0, 255.0)).astype(np.uint8)
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_mask(path, units: np.ndarray) -> None:
    """Write a binary unit mask as PGM, 0/1 scaled to 0/255 for viewing."""
    units = np.asarray(units)
    if not np.isin(units, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    write_pgm(path, units.astype(np.float64) * 255.0)


def read_mask(path) -> np.ndarray:
    """Read a mask written by write_mask back to a 0/1 grid."""
    return (read_image(path) > 127.0).astype(np.uint8)
