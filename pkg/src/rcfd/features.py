"""Block feature extraction: 19x7 DCT neighborhoods per 32x32 window.

An image is scanned with 32x32 windows at stride 8. Each window holds
sixteen 8x8 sub-blocks (scanned row-major). For every zigzag coefficient
2..20 the sub-block with the maximal value is located and that
coefficient's values over the 7 consecutive sub-blocks centred on the
maximum (window shifted to stay inside 1..16) form one feature row,
giving a 19x7 matrix per window, flattened row-major to 133 values.

Because windows are anchored on the 8-pixel grid, every sub-block lies
on the image's 8x8 lattice, so the per-lattice-block DCTs are computed
once and shared by all overlapping windows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codec import BLOCK, blockwise_dct, dct8

WINDOW = 32
STRIDE = 8
N_COEFFS = 19  # zigzag coefficients 2..20
N_NEIGHBORS = 7
FEATURE_LEN = N_COEFFS * N_NEIGHBORS  # 133
BLOCKS_PER_WINDOW = 16

FEATURE_MAGIC = "RCFD-FEAT"
FEATURE_VERSION = 1


def _zigzag_order() -> list[tuple[int, int]]:
    order = []
    for s in range(2 * BLOCK - 1):
        rows = range(s + 1)
        if s % 2 == 0:
            rows = reversed(rows)
        for r in rows:
            c = s - r
            if r < BLOCK and c < BLOCK:
                order.append((r, c))
    return order


_ZIGZAG = _zigzag_order()
# (row, col) index pair per zigzag position, as arrays for fancy indexing
_ZZ_ROWS = np.array([rc[0] for rc in _ZIGZAG])
_ZZ_COLS = np.array([rc[1] for rc in _ZIGZAG])


def zigzag(index: int) -> tuple[int, int]:
    """(row, col) of the 1-based zigzag position; index 1 is the DC term."""
    if not 1 <= index <= 64:
        raise ValueError(f"zigzag index must be in [1, 64], got {index}")
    return _ZIGZAG[index - 1]


@dataclass(frozen=True)
class BlockGrid:
    """Window anchor geometry for one image."""

    height: int
    width: int
    n_hor: int  # window count along image rows
    n_ver: int  # window count along image columns

    @property
    def anchors(self) -> list[tuple[int, int]]:
        """(row, col) top-left window corners, row-major scan order."""
        return [
            (r * STRIDE, c * STRIDE)
            for r in range(self.n_hor)
            for c in range(self.n_ver)
        ]

    def __len__(self) -> int:
        return self.n_hor * self.n_ver


def block_grid(height: int, width: int) -> BlockGrid:
    """Window grid for an image of the given size (both sides >= 32).

    Window count per axis is ceil((dim - 32) / 8) + 1; when the final
    window overruns the image it reads zero padding (see image_features).
    """
    if height < WINDOW or width < WINDOW:
        raise ValueError(
            f"image must be at least {WINDOW}x{WINDOW}, got {height}x{width}"
        )
    n_hor = -((height - WINDOW) // -STRIDE) + 1
    n_ver = -((width - WINDOW) // -STRIDE) + 1
    return BlockGrid(height=height, width=width, n_hor=n_hor, n_ver=n_ver)


def _neighborhood_rows(coeff_values: np.ndarray) -> np.ndarray:
    """(..., 16, 19) per-sub-block coefficients -> (..., 19, 7) features.

    The first sub-block index attaining the maximum wins ties; the 7-wide
    neighborhood is shifted, never truncated, to stay inside the 16 blocks.
    """
    max_pos = np.argmax(coeff_values, axis=-2)  # (..., 19), 0-based
    start = np.clip(max_pos - 3, 0, BLOCKS_PER_WINDOW - N_NEIGHBORS)
    idx = start[..., None, :] + np.arange(N_NEIGHBORS)[:, None]  # (..., 7, 19)
    gathered = np.take_along_axis(coeff_values, idx, axis=-2)
    return np.swapaxes(gathered, -1, -2)  # (..., 19, 7)


def block_features(window: np.ndarray) -> np.ndarray:
    """19x7 feature matrix of one 32x32 window."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (WINDOW, WINDOW):
        raise ValueError(f"expected a {WINDOW}x{WINDOW} window, got {window.shape}")
    coeff_values = np.empty((BLOCKS_PER_WINDOW, N_COEFFS))
    for p in range(4):
        for q in range(4):
            sub = window[8 * p : 8 * p + 8, 8 * q : 8 * q + 8]
            coeffs = dct8(sub)
            coeff_values[4 * p + q] = coeffs[_ZZ_ROWS[1:20], _ZZ_COLS[1:20]]
    return _neighborhood_rows(coeff_values)


def image_features(image: np.ndarray) -> np.ndarray:
    """Feature rows for every window of an image, row-major anchor order.

    Returns an array of shape (n_hor * n_ver, 133). The image is
    zero-padded at the right and bottom when the last stride-8 windows
    overrun it, so the row count always matches the grid formula.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    grid = block_grid(*image.shape)
    return _window_features_padded(image, grid.n_hor, grid.n_ver)


def _window_features_padded(image: np.ndarray, n_hor: int, n_ver: int) -> np.ndarray:
    """Features for stride-8 windows anchored on the n_hor x n_ver grid.

    Shared by image_features and the localization map (which extends the
    grid to one window per 8x8 unit); pads with zeros as needed.
    """
    m, n = image.shape
    need_m = STRIDE * (n_hor - 1) + WINDOW
    need_n = STRIDE * (n_ver - 1) + WINDOW
    if need_m > m or need_n > n:
        image = np.pad(image, ((0, need_m - m), (0, need_n - n)), mode="constant")

    lattice = blockwise_dct(image[:need_m, :need_n])  # (need_m/8, need_n/8, 8, 8)
    coeff = lattice[:, :, _ZZ_ROWS[1:20], _ZZ_COLS[1:20]]  # (mb, nb, 19)

    # every window gathers a 4x4 patch of lattice blocks, row-major
    win = np.lib.stride_tricks.sliding_window_view(coeff, (4, 4), axis=(0, 1))
    # win: (n_hor, n_ver, 19, 4, 4) -> (n_hor, n_ver, 16, 19)
    values = win.transpose(0, 1, 3, 4, 2).reshape(n_hor, n_ver, 16, N_COEFFS)
    rows = _neighborhood_rows(values)  # (n_hor, n_ver, 19, 7)
    return np.ascontiguousarray(rows.reshape(n_hor * n_ver, FEATURE_LEN))


def write_features(path, rows: np.ndarray, label: int | None = None) -> None:
    """Write a feature file: ASCII header line, then binary rows.

    Header: ``RCFD-FEAT 1 <rows> 133 <label-flag>``. Each record is 133
    little-endian float64 values followed by one label byte when the
    label flag is 1 (the same label applies to every row of the file).
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != FEATURE_LEN:
        raise ValueError(f"feature rows must have shape (n, {FEATURE_LEN})")
    flag = 0 if label is None else 1
    if flag and label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    with open(path, "wb") as fh:
        fh.write(f"{FEATURE_MAGIC} {FEATURE_VERSION} {rows.shape[0]} {FEATURE_LEN} {flag}\n".encode("ascii"))
        if flag:
            label_byte = struct.pack("B", label)
            for row in rows:
                fh.write(row.astype("<f8").tobytes())
                fh.write(label_byte)
        else:
            fh.write(rows.astype("<f8").tobytes())


def read_features(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a feature file; returns (rows, labels) with labels None if unlabeled."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        if len(header) != 5 or header[0] != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file (bad header)")
        version, n_rows, n_cols, flag = (int(v) for v in header[1:])
        if version != FEATURE_VERSION:
            raise ValueError(
                f"{path}: feature format version {version}, expected {FEATURE_VERSION}"
            )
        if n_cols != FEATURE_LEN:
            raise ValueError(f"{path}: expected {FEATURE_LEN} columns, found {n_cols}")
        record = FEATURE_LEN * 8 + (1 if flag else 0)
        payload = fh.read(n_rows * record)
        if len(payload) != n_rows * record:
            raise ValueError(f"{path}: truncated feature payload")
        if flag:
            raw = np.frombuffer(payload, dtype=np.uint8).reshape(n_rows, record)
            rows = raw[:, : FEATURE_LEN * 8].copy().view("<f8")
            labels = raw[:, -1].astype(np.int64)
            return rows.astype(np.float64), labels
        rows = np.frombuffer(payload, dtype="<f8").reshape(n_rows, FEATURE_LEN)
        return rows.astype(np.float64), None
