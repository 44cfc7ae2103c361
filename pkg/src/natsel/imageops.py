"""Spatial stitching of sample groups and bilinear rescaling.

All functions here are pure and operate outside any gradient tape: the
composite-image path is inference-only by design.

Coordinate convention for resizing: output pixel (i, j) samples the source
at half-pixel centers, ``((i + 0.5) * H / H' - 0.5, (j + 0.5) * W / W' - 0.5)``,
clamped to the valid range before the bilinear blend (edge clamping).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

__all__ = [
    "GridLayout",
    "Normalization",
    "stitch",
    "bilinear_resize",
    "channel_normalize",
]

# Layouts exercised by the layout sweep; anything with rows*cols >= 2 works.
STANDARD_LAYOUTS = ((1, 2), (2, 2), (2, 4), (4, 2), (4, 4))


@dataclass(frozen=True)
class GridLayout:
    """An R x C arrangement of group members; group size m = rows * cols."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid layout {self.rows}x{self.cols} is empty")

    @property
    def group_size(self) -> int:
        return self.rows * self.cols

    @classmethod
    def parse(cls, text: str) -> "GridLayout":
        """Parse strings like ``2x2`` or ``4X2``."""
        parts = text.lower().split("x")
        if len(parts) != 2:
            raise ConfigError(f"cannot parse grid layout {text!r}")
        try:
            return cls(int(parts[0]), int(parts[1]))
        except ValueError:
            raise ConfigError(f"cannot parse grid layout {text!r}") from None

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


@dataclass(frozen=True)
class Normalization:
    """Per-channel standardization statistics applied to model inputs."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ConfigError("normalization mean/std lengths differ")
        if any(s <= 0.0 for s in self.std):
            raise ConfigError("normalization std must be positive")

    @classmethod
    def identity(cls, channels: int) -> "Normalization":
        return cls((0.0,) * channels, (1.0,) * channels)


def stitch(images: Sequence[Tensor], layout: GridLayout) -> Tensor:
    """Concatenate m same-shape images into one (R*H) x (C*W) composite.

    Members fill grid cells in row-major order: image k lands at grid row
    ``k // C``, column ``k % C``.
    """
    if len(images) != layout.group_size:
        raise ShapeError(
            f"stitch got {len(images)} images for a {layout} layout "
            f"(needs {layout.group_size})"
        )
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"stitch needs same-shape images, got {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 3:
        raise ShapeError(f"stitch expects HxWxC images, got shape {shape}")
    stacked = np.stack([img.values for img in images])
    return Tensor(_assemble_grid(stacked[np.newaxis], layout)[0])


def _assemble_grid(members: np.ndarray, layout: GridLayout) -> np.ndarray:
    """[N, m, H, W, C] member stack -> [N, R*H, C*W, C] composites."""
    n, m, h, w, c = members.shape
    grid = members.reshape(n, layout.rows, layout.cols, h, w, c)
    grid = grid.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(grid.reshape(n, layout.rows * h, layout.cols * w, c))


def bilinear_resize(img: Tensor, target: tuple[int, int]) -> Tensor:
    """Resize an HxWxC image to target (H', W') with bilinear interpolation."""
    if len(img.shape) != 3:
        raise ShapeError(f"bilinear_resize expects HxWxC, got shape {img.shape}")
    out_h, out_w = int(target[0]), int(target[1])
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize target {target} has a zero dimension")
    return Tensor(_resize_batch(img.values[np.newaxis], (out_h, out_w))[0])


def _resize_batch(images: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an [N, H, W, C] stack to [N, H', W', C]."""
    _, h, w, _ = images.shape
    out_h, out_w = target
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, np.newaxis, np.newaxis]
    fx = (xs - x0)[np.newaxis, :, np.newaxis]

    rows0 = images[:, y0]
    rows1 = images[:, y1]
    top = rows0[:, :, x0] * (1.0 - fx) + rows0[:, :, x1] * fx
    bottom = rows1[:, :, x0] * (1.0 - fx) + rows1[:, :, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def channel_normalize(img: Tensor, norm: Normalization) -> Tensor:
    """Standardize an HxWxC image: (pixel - mean[c]) / std[c] per channel."""
    if len(img.shape) != 3:
        raise ShapeError(f"channel_normalize expects HxWxC, got shape {img.shape}")
    channels = img.shape[2]
    if len(norm.mean) != channels:
        raise ShapeError(
            f"normalization has {len(norm.mean)} channels, image has {channels}"
        )
    mean = np.asarray(norm.mean, dtype=np.float64)
    std = np.asarray(norm.std, dtype=np.float64)
    return Tensor((img.values - mean) / std)


def _normalize_batch(images: np.ndarray, norm: Normalization) -> np.ndarray:
    mean = np.asarray(norm.mean, dtype=np.float64)
    std = np.asarray(norm.std, dtype=np.float64)
    return (images - mean) / std
