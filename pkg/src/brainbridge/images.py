"""Raster image helpers: lossless I/O, resizing, grayscale conversion.

All images cross module boundaries as uint8 RGB arrays of shape (H, W, 3).
PNG is the on-disk format (lossless, deterministic bytes for fixed pixels).
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def load_image(path: str | Path) -> np.ndarray:
    """Load an image file as a uint8 RGB array."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def decode_image_bytes(blob: bytes) -> np.ndarray:
    """Decode raw encoded image bytes (PNG/JPEG/...) to uint8 RGB."""
    try:
        with Image.open(io.BytesIO(blob)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image bytes: {exc}") from exc


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write a uint8 RGB array as PNG (parent directories created)."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected uint8 (H, W, 3) image, got {arr.dtype} {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def encode_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def resize_image(image: np.ndarray, size: int | tuple[int, int]) -> np.ndarray:
    """Bilinear-resize a uint8 RGB array to (H, W) = size (int means square)."""
    if isinstance(size, int):
        size = (size, size)
    h, w = size
    im = Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB")
    return np.asarray(im.resize((w, h), Image.BILINEAR), dtype=np.uint8)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma conversion to float64 in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr
    return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
