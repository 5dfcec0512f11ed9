"""Binary PGM (P5, maxval 255) export and image grids."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ContractError, CorruptFileError

SEPARATOR = 255


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to uint8 by rounding; values are clipped first."""
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def export_grid(images: Sequence[np.ndarray], columns: int) -> np.ndarray:
    """Tile equally shaped images row-major with 1-px separators (and border)."""
    if len(images) == 0:
        raise ContractError("grid needs at least one image")
    if columns < 1:
        raise ContractError("grid needs at least one column")
    shapes = {np.shape(im) for im in images}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise ContractError(f"grid images must share one 2-d shape, got {sorted(shapes)}")
    h, w = next(iter(shapes))
    cols = min(columns, len(images))
    rows = -(-len(images) // cols)
    grid = np.full((rows * h + rows + 1, cols * w + cols + 1), SEPARATOR, dtype=np.uint8)
    for k, im in enumerate(images):
        r, c = divmod(k, cols)
        grid[1 + r * (h + 1):1 + r * (h + 1) + h, 1 + c * (w + 1):1 + c * (w + 1) + w] = to_bytes(im)
    return grid


def pgm_bytes(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ContractError("PGM export needs a 2-d uint8 array")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes()


def write_pgm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(pixels))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise CorruptFileError("not a binary PGM with maxval 255")
    w, h = map(int, parts[1].split())
    if len(parts[3]) != w * h:
        raise CorruptFileError("PGM payload size does not match its header")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
