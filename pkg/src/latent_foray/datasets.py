"""Procedural datasets: shape classification and layout segmentation.

Images are (3, H, W) float32 in roughly [-1, 1]; values are only clamped at
export time.  Generation is bit-reproducible from (seed, config) and the
metadata stored with each dataset is sufficient to regenerate it.

A small amount of per-pixel texture jitter is baked into every rendered
image.  Without it a generator has no stochastic detail to model, its noise
path would atrophy, and noise-space manipulation would be toothless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .rng import Rng

SHAPE_CLASSES = ("disk", "square", "triangle", "cross")

# Rendering knobs shared by both datasets.  Fixed constants, not config:
# changing them changes the data distribution and therefore every
# downstream checkpoint.
_TEXTURE_SIGMA = 0.06
_CONTRAST_FLOOR = 0.4


@dataclass
class LabeledDataset:
    """Images plus integer labels (per image, or per pixel for layouts)."""

    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray  # (N,) int64 or (N, H, W) int64
    class_count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise InvalidConfig("dataset images must be a nonempty (N,3,H,W) array")
        if self.labels.shape[0] != self.images.shape[0]:
            raise InvalidConfig("labels and images disagree on N")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidConfig("labels outside [0, class_count)")

    @property
    def kind(self) -> str:
        return "segmentation" if self.labels.ndim == 3 else "classification"

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_count, dict(self.metadata))


def _shape_mask(kind: int, res: int, cx: float, cy: float, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64) + 0.5
    dx = xs - cx
    dy = ys - cy
    if kind == 0:  # disk
        return dx * dx + dy * dy <= r * r
    if kind == 1:  # square
        return np.maximum(np.abs(dx), np.abs(dy)) <= r
    if kind == 2:  # triangle, apex up
        inside_rows = (dy >= -r) & (dy <= r)
        halfwidth = (dy + r) / 2.0
        return inside_rows & (np.abs(dx) <= halfwidth)
    if kind == 3:  # cross
        t = 0.35 * r
        horiz = (np.abs(dy) <= t) & (np.abs(dx) <= r)
        vert = (np.abs(dx) <= t) & (np.abs(dy) <= r)
        return horiz | vert
    raise InvalidConfig(f"unknown shape kind {kind}")


def _contrasting_colors(rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    # Rejection-sample until foreground/background L2 contrast clears the floor.
    while True:
        bg = rng.uniform(3) * 2.0 - 1.0
        fg = rng.uniform(3) * 2.0 - 1.0
        if np.linalg.norm(fg - bg) >= _CONTRAST_FLOOR:
            return fg.astype(np.float32), bg.astype(np.float32)


def _render(mask: np.ndarray, fg: np.ndarray, bg: np.ndarray, rng: Rng, res: int) -> np.ndarray:
    img = np.where(mask[None, :, :], fg[:, None, None], bg[:, None, None]).astype(np.float32)
    img += _TEXTURE_SIGMA * rng.normal((3, res, res))
    return img


def make_shape_dataset(
    seed: int,
    n_train: int,
    n_test: int,
    class_count: int = 4,
    resolution: int = 32,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Single centered-jittered shape on a uniform background, one class per shape."""
    if class_count != len(SHAPE_CLASSES):
        raise InvalidConfig(f"class_count must be {len(SHAPE_CLASSES)} ({', '.join(SHAPE_CLASSES)})")
    if resolution < 16:
        raise InvalidConfig("resolution must be at least 16")
    if n_train <= 0 or n_test <= 0:
        raise InvalidConfig("n_train and n_test must be positive")

    def build(split: str, n: int) -> LabeledDataset:
        rng = Rng(seed, f"shape-dataset/{split}")
        images = np.empty((n, 3, resolution, resolution), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            label = int(rng.integers(0, class_count))
            r = (0.18 + 0.17 * float(rng.uniform())) * resolution
            jitter = resolution / 8.0
            cx = resolution / 2.0 + (float(rng.uniform()) * 2.0 - 1.0) * jitter
            cy = resolution / 2.0 + (float(rng.uniform()) * 2.0 - 1.0) * jitter
            fg, bg = _contrasting_colors(rng)
            mask = _shape_mask(label, resolution, cx, cy, r)
            images[i] = _render(mask, fg, bg, rng, resolution)
            labels[i] = label
        meta = {
            "kind": "shapes",
            "split": split,
            "seed": seed,
            "n": n,
            "class_count": class_count,
            "resolution": resolution,
            "classes": list(SHAPE_CLASSES),
        }
        return LabeledDataset(images, labels, class_count, meta)

    return build("train", n_train), build("test", n_test)


# Layout rendering: class 0 is background; classes 1..k are shape classes
# colored with a per-instance jitter around a base color.
_LAYOUT_BASE_COLORS = np.array(
    [[-0.75, -0.75, -0.70], [0.80, 0.10, -0.40], [-0.30, 0.45, 0.85]], dtype=np.float32
)


def make_layout_dataset(
    seed: int,
    n: int,
    class_count: int = 3,
    resolution: int = 32,
) -> LabeledDataset:
    """Per-pixel label maps with 1-2 non-overlapping shapes plus paired renders."""
    if class_count != 3:
        raise InvalidConfig("class_count must be 3 (background + disk + square)")
    if resolution < 16:
        raise InvalidConfig("resolution must be at least 16")
    if n <= 0:
        raise InvalidConfig("n must be positive")

    rng = Rng(seed, "layout-dataset")
    images = np.empty((n, 3, resolution, resolution), dtype=np.float32)
    labels = np.zeros((n, resolution, resolution), dtype=np.int64)
    for i in range(n):
        label_map = np.zeros((resolution, resolution), dtype=np.int64)
        img = np.empty((3, resolution, resolution), dtype=np.float32)
        bg_color = _LAYOUT_BASE_COLORS[0] + (rng.uniform(3).astype(np.float32) * 2 - 1) * 0.10
        img[:] = bg_color[:, None, None]

        count = int(rng.integers(1, 3))
        placed: list[tuple[float, float, float]] = []
        for _ in range(count):
            cls = int(rng.integers(1, class_count))  # 1 = disk, 2 = square
            for _attempt in range(64):
                r = (0.10 + 0.12 * float(rng.uniform())) * resolution
                cx = r + 1 + float(rng.uniform()) * (resolution - 2 * r - 2)
                cy = r + 1 + float(rng.uniform()) * (resolution - 2 * r - 2)
                # Disjointness in the generous sense: bounding circles do not touch.
                if all(np.hypot(cx - px, cy - py) > (r + pr) * 1.45 for px, py, pr in placed):
                    break
            else:
                continue  # crowded map: place fewer shapes rather than overlap
            placed.append((cx, cy, r))
            mask = _shape_mask(0 if cls == 1 else 1, resolution, cx, cy, r)
            label_map[mask] = cls
            color = _LAYOUT_BASE_COLORS[cls] + (rng.uniform(3).astype(np.float32) * 2 - 1) * 0.15
            img[:, mask] = color[:, None]

        img += _TEXTURE_SIGMA * rng.normal((3, resolution, resolution))
        images[i] = img
        labels[i] = label_map

    meta = {
        "kind": "layouts",
        "seed": seed,
        "n": n,
        "class_count": class_count,
        "resolution": resolution,
        "classes": ["background", "disk", "square"],
    }
    return LabeledDataset(images, labels, class_count, meta)
