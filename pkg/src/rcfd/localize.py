"""Forgery localization: classify every stride-8 window, map to 8x8 units.

The image is zero-padded at the right and bottom so a 32x32 window
anchors at every 8-pixel grid position; unit (r, c) receives the label
of the window whose top-left corner it is, i.e. the window anchored at
pixel (8r, 8c). That is the fixed point of sliding a window with stride
8 and letting later predictions overwrite all but the top-left 8x8 of
earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import round_half_away
from .features import _window_features_padded
from .net import InvalidModelError, Network, forward

UNIT = 8

AUTHENTIC = "authentic"
FORGED = "forged"


@dataclass(frozen=True)
class UnitMap:
    """Per-unit forgery predictions; units[r, c] is decided by the window
    anchored at pixel (8r, 8c)."""

    units: np.ndarray  # (ceil(M/8), ceil(N/8)) of {0, 1}

    @property
    def shape(self) -> tuple[int, int]:
        return self.units.shape

    def anchor_of(self, r: int, c: int) -> tuple[int, int]:
        """Top-left pixel of the window that decided unit (r, c)."""
        if not (0 <= r < self.units.shape[0] and 0 <= c < self.units.shape[1]):
            raise ValueError(f"unit ({r}, {c}) outside map {self.units.shape}")
        return (UNIT * r, UNIT * c)


def predict_map(net: Network, image: np.ndarray, chunk: int = 4096) -> UnitMap:
    """Classify all windows of an image into an 8x8-unit forgery map."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < UNIT or image.shape[1] < UNIT:
        raise ValueError(f"image must be at least 8x8, got shape {image.shape}")
    if net.norm_mean is None or net.norm_std is None:
        raise InvalidModelError(
            "model carries no feature normalization statistics; train it first"
        )
    m, n = image.shape
    mu = -(-m // UNIT)
    nu = -(-n // UNIT)
    rows = _window_features_padded(image, mu, nu)
    rows = (rows - net.norm_mean) / net.norm_std
    labels = np.empty(len(rows), dtype=np.uint8)
    for s in range(0, len(rows), chunk):
        probs = forward(net, rows[s : s + chunk]).probs
        labels[s : s + chunk] = np.argmax(probs, axis=1)
    return UnitMap(units=labels.reshape(mu, nu))


def image_verdict(unit_map: UnitMap, tau: float = 0.05) -> str:
    """Whole-image call: forged iff the forged-unit fraction reaches tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    fraction = float(unit_map.units.mean())
    return FORGED if fraction >= tau else AUTHENTIC


def overlay(image: np.ndarray, unit_map: UnitMap) -> np.ndarray:
    """Full-resolution view: forged units brightened by 64, clamped."""
    image = np.asarray(image, dtype=np.float64)
    boost = np.kron(unit_map.units.astype(np.float64), np.ones((UNIT, UNIT))) * 64.0
    lifted = image + boost[: image.shape[0], : image.shape[1]]
    return round_half_away(np.clip(lifted, 0.0, 255.0))
