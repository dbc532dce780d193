"""Binary PPM (P6) image export, byte-exact by construction.

Float value v in [-1, 1] maps to round_half_up((clamp(v) + 1) * 127.5); the
round-half-up rule (not banker's rounding) keeps golden-byte tests stable.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptCheckpoint, IoError, ShapeMismatch


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [-1, 1] -> (H, W, 3) uint8."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatch("export_ppm", [image.shape], detail="expected (3, H, W)")
    clamped = np.clip(image.astype(np.float64), -1.0, 1.0)
    scaled = (clamped + 1.0) * 127.5
    return np.floor(scaled + 0.5).astype(np.uint8).transpose(1, 2, 0)


def export_ppm(image: np.ndarray, path) -> None:
    pixels = image_to_bytes(image)
    h, w, _ = pixels.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write image {path}: {exc}") from exc


def load_ppm(path) -> np.ndarray:
    """Inverse of export_ppm up to quantization: returns (3, H, W) float32 in [-1, 1]."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise CorruptCheckpoint(f"{path}: not a P6 PPM written by this package")
    w, h = (int(tok) for tok in parts[1].split())
    pixels = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return (pixels.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)
