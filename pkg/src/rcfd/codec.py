"""Pixel-domain JPEG compression simulator.

Compression is simulated per 8x8 block as DCT -> quantize -> dequantize
-> inverse DCT, which reproduces the quantization artifacts that real
JPEG leaves in an image while skipping entropy coding entirely.

Grayscale images are plain 2-D float64 arrays with values in [0, 255]
(row-major, shape (height, width)). Quantization tables are 8x8 integer
arrays derived from the Annex-K luminance base table by the conventional
quality scaling rule.
"""

from __future__ import annotations

import numpy as np

BLOCK = 8

# ISO/IEC 10918-1 Annex K.1 luminance quantization base table.
BASE_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal 1-D DCT-II basis matrix, D[u, x]."""
    x = np.arange(n)
    u = np.arange(n)[:, None]
    d = np.cos((2 * x + 1) * u * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    d[0, :] /= np.sqrt(2.0)
    return d


_DCT_M = _dct_matrix()


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (codec convention)."""
    return np.trunc(x + np.copysign(0.5, x))


def dct8(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one 8x8 block; (0,0) holds the DC term."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (BLOCK, BLOCK):
        raise ValueError(f"dct8 expects an 8x8 block, got shape {block.shape}")
    return _DCT_M @ block @ _DCT_M.T


def idct8(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct8`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (BLOCK, BLOCK):
        raise ValueError(f"idct8 expects an 8x8 block, got shape {coeffs.shape}")
    return _DCT_M.T @ coeffs @ _DCT_M


def quant_table(quality: int) -> np.ndarray:
    """8x8 quantization table for a quality factor in [1, 100].

    Uses the conventional scaling of the base luminance table:
    scale = 5000/q for q < 50 else 200 - 2q, entries clamped to [1, 255].
    """
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((BASE_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1, 255).astype(np.int64)


def _to_blocks(img: np.ndarray) -> np.ndarray:
    """(M, N) -> (M/8, N/8, 8, 8) view-like block layout."""
    m, n = img.shape
    return img.reshape(m // BLOCK, BLOCK, n // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    mb, nb = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(mb * BLOCK, nb * BLOCK)


def blockwise_dct(img: np.ndarray) -> np.ndarray:
    """DCT of every non-overlapping 8x8 block; returns (M/8, N/8, 8, 8)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] % BLOCK or img.shape[1] % BLOCK:
        raise ValueError(f"image dimensions must be multiples of 8, got {img.shape}")
    blocks = _to_blocks(img)
    return np.einsum("ux,mnxy,vy->mnuv", _DCT_M, blocks, _DCT_M, optimize=True)


def _validate_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 255.0:
        raise ValueError("image intensities must lie in [0, 255]")
    return image


def _pad_to_block_multiple(img: np.ndarray) -> np.ndarray:
    """Edge-replicate so both dimensions are multiples of 8."""
    m, n = img.shape
    pm = (-m) % BLOCK
    pn = (-n) % BLOCK
    if pm == 0 and pn == 0:
        return img
    return np.pad(img, ((0, pm), (0, pn)), mode="edge")


def compress(image: np.ndarray, quality: int) -> np.ndarray:
    """Single JPEG-style compression pass at the given quality factor.

    Per 8x8 block: level shift by -128, DCT, quantize (round coeff/entry,
    halves away from zero), dequantize, inverse DCT, shift back, clamp to
    [0, 255]. Intensities stay real-valued; writing to a PGM file is what
    rounds them to 8-bit samples. Output shape equals input shape.
    """
    image = _validate_image(image)
    m, n = image.shape
    table = quant_table(quality).astype(np.float64)

    padded = _pad_to_block_multiple(image)
    coeffs = blockwise_dct(padded - 128.0)
    quantized = round_half_away(coeffs / table)
    blocks = np.einsum("ux,mnuv,vy->mnxy", _DCT_M, quantized * table, _DCT_M, optimize=True)
    decoded = np.clip(_from_blocks(blocks) + 128.0, 0.0, 255.0)
    return decoded[:m, :n]


def double_compress(image: np.ndarray, q1: int, q2: int) -> np.ndarray:
    """Two sequential compression passes, quality q1 then q2."""
    return compress(compress(image, q1), q2)
