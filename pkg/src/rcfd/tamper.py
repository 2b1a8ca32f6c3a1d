"""Forged-image synthesis and ground-truth masks.

A forgery replaces one rectangle of a singly compressed image with the
doubly compressed version of the same pixels, leaving a composite whose
tampered region carries double-quantization artifacts. Rectangles are
aligned to the 8x8 JPEG lattice and sized to a requested fraction of the
image, with aspect ratio following the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import compress, double_compress

UNIT = 8


@dataclass(frozen=True)
class TamperRect:
    """Grid-aligned tamper rectangle; x is the column axis, y the row axis."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x0", "y0", "w", "h"):
            v = getattr(self, name)
            if v % UNIT:
                raise ValueError(f"{name}={v} is not a multiple of {UNIT}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("rectangle must have positive size")

    @property
    def area(self) -> int:
        return self.w * self.h


def _round_to_unit(value: float, lo: int, hi: int) -> int:
    stepped = int(round(value / UNIT)) * UNIT
    return max(lo, min(hi, stepped))


def choose_rect(height: int, width: int, fraction: float, rng: np.random.Generator) -> TamperRect:
    """Pick a grid-aligned rectangle covering ~fraction of the image.

    Height/width follow the image aspect ratio, each rounded to the
    nearest 8; placement is uniform over grid positions.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    max_h = (height // UNIT) * UNIT
    max_w = (width // UNIT) * UNIT
    if max_h < UNIT or max_w < UNIT:
        raise ValueError(f"image {height}x{width} too small for a grid-aligned rectangle")
    target = fraction * height * width
    h = _round_to_unit(np.sqrt(target * height / width), UNIT, max_h)
    w = _round_to_unit(target / h, UNIT, max_w)
    if h * w > height * width or abs(h * w - target) > UNIT * max(h, w):
        raise ValueError(
            f"no grid-aligned rectangle approximates fraction {fraction} "
            f"of a {height}x{width} image"
        )
    y0 = UNIT * int(rng.integers(0, (max_h - h) // UNIT + 1))
    x0 = UNIT * int(rng.integers(0, (max_w - w) // UNIT + 1))
    return TamperRect(x0=x0, y0=y0, w=w, h=h)


def rect_mask(height: int, width: int, rect: TamperRect) -> np.ndarray:
    """Per-unit ground truth: 1 where at least half of a unit's pixels are tampered."""
    pixels = np.zeros((height, width), dtype=np.float64)
    pixels[rect.y0 : rect.y0 + rect.h, rect.x0 : rect.x0 + rect.w] = 1.0
    mu = -(-height // UNIT)
    nu = -(-width // UNIT)
    pad_m = mu * UNIT - height
    pad_n = nu * UNIT - width
    padded = np.pad(pixels, ((0, pad_m), (0, pad_n)))
    present = np.pad(np.ones_like(pixels), ((0, pad_m), (0, pad_n)))
    inside = padded.reshape(mu, UNIT, nu, UNIT).sum(axis=(1, 3))
    total = present.reshape(mu, UNIT, nu, UNIT).sum(axis=(1, 3))
    return (inside >= 0.5 * total).astype(np.uint8)


def make_forged(
    source: np.ndarray, q1: int, q2: int, fraction: float, seed: int
) -> tuple[np.ndarray, TamperRect, np.ndarray]:
    """Forge one image: background compressed at q1, rectangle at (q1, q2).

    Returns (forged image, rectangle, per-unit ground-truth mask).
    Placement is a pure function of the seed.
    """
    source = np.asarray(source, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rect = choose_rect(source.shape[0], source.shape[1], fraction, rng)
    background = compress(source, q1)
    tampered = double_compress(source, q1, q2)
    forged = background.copy()
    forged[rect.y0 : rect.y0 + rect.h, rect.x0 : rect.x0 + rect.w] = tampered[
        rect.y0 : rect.y0 + rect.h, rect.x0 : rect.x0 + rect.w
    ]
    return forged, rect, rect_mask(source.shape[0], source.shape[1], rect)


def synth_corpus(
    images: list[np.ndarray], q1: int, q2: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Build the singly and doubly compressed corpora from source images."""
    if not images:
        raise ValueError("synth_corpus requires at least one source image")
    singles = [compress(img, q1) for img in images]
    doubles = [compress(img, q2) for img in singles]
    return singles, doubles


def synth_texture(height: int, width: int, seed: int) -> np.ndarray:
    """Seeded smooth random texture: low-frequency sinusoids plus noise.

    Values are quantized to whole intensities in [0, 255]; stands in for
    a natural-image corpus so the pipeline runs self-contained.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(height)[:, None]
    x = np.arange(width)[None, :]
    img = np.zeros((height, width))
    for _ in range(10):
        fy, fx = rng.uniform(0.005, 0.35, size=2)
        amp = rng.uniform(8.0, 45.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img += amp * np.sin(2.0 * np.pi * (fy * y + fx * x) + phase)
    img += rng.normal(0.0, 5.0, size=(height, width))
    img += 128.0
    return np.clip(np.round(img), 0.0, 255.0)
