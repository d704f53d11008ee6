"""Image standardization and overlapped patch tiling / stitching.

Patch grids use a sliding window with stride ``patch_size - overlap``; starts
that would run past the image edge are clamped to ``dim - patch_size`` so the
full extent is always covered. Stitching averages every patch value covering
a pixel, which makes ``stitch(tile(x))`` an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import ImageTensor


class DegenerateImageError(ValueError):
    """Raised when an image has zero standard deviation."""


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Ordered patches plus their top-left (x, y) offsets in row-major order."""

    patches: list[np.ndarray]
    offsets: list[tuple[int, int]]
    source_size: tuple[int, int]  # (W, H)
    patch_size: int
    overlap: int

    def __post_init__(self):
        if len(self.patches) != len(self.offsets):
            raise ValueError("patch and offset counts differ")
        if not self.patches:
            raise ValueError("empty patch grid")
        w, h = self.source_size
        p = self.patch_size
        for x, y in self.offsets:
            if x < 0 or y < 0 or x + p > w or y + p > h:
                raise ValueError(f"patch at ({x}, {y}) exceeds source bounds {w}x{h}")

    def __len__(self) -> int:
        return len(self.patches)

    def coverage_counts(self) -> np.ndarray:
        """Number of patches covering each pixel, shape (H, W)."""
        w, h = self.source_size
        counts = np.zeros((h, w), dtype=np.int32)
        p = self.patch_size
        for x, y in self.offsets:
            counts[y:y + p, x:x + p] += 1
        return counts


def standardize(image: ImageTensor, per_band: bool = False, epsilon: float | None = None) -> ImageTensor:
    """Shift to zero mean and scale to unit (population) standard deviation.

    Statistics are taken jointly over all bands unless ``per_band`` is set.
    A constant image raises DegenerateImageError unless ``epsilon`` supplies
    a floor for the denominator.
    """
    data = image.data.astype(np.float64)
    axis = (0, 1) if per_band else None
    mean = data.mean(axis=axis, keepdims=per_band)
    std = data.std(axis=axis, keepdims=per_band)
    if np.any(std == 0.0):
        if epsilon is None:
            raise DegenerateImageError("image standard deviation is zero")
        std = np.maximum(std, epsilon)
    out = (data - mean) / std
    return ImageTensor(out.astype(image.data.dtype))


def _axis_starts(dim: int, patch_size: int, stride: int) -> list[int]:
    last = dim - patch_size
    starts: list[int] = []
    pos = 0
    while True:
        starts.append(min(pos, last))
        if pos >= last:
            break
        pos += stride
    # clamping can duplicate the final start
    deduped = sorted(set(starts))
    return deduped


def tile(image: ImageTensor | np.ndarray, patch_size: int, overlap: int) -> PatchGrid:
    """Cut an (H, W[, C]) image into an overlapped grid of square patches."""
    data = image.data if isinstance(image, ImageTensor) else np.asarray(image)
    if data.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D image, got ndim={data.ndim}")
    h, w = data.shape[:2]
    if patch_size > min(w, h):
        raise ValueError(f"patch size {patch_size} exceeds image extent {w}x{h}")
    if patch_size < 1:
        raise ValueError("patch size must be positive")
    if not 0 <= overlap < patch_size:
        raise ValueError(f"overlap must lie in [0, {patch_size}), got {overlap}")

    stride = patch_size - overlap
    xs = _axis_starts(w, patch_size, stride)
    ys = _axis_starts(h, patch_size, stride)
    patches = []
    offsets = []
    for y in ys:
        for x in xs:
            patches.append(data[y:y + patch_size, x:x + patch_size].copy())
            offsets.append((x, y))
    return PatchGrid(patches=patches, offsets=offsets, source_size=(w, h),
                     patch_size=patch_size, overlap=overlap)


def stitch(grid: PatchGrid) -> np.ndarray:
    """Reassemble a patch grid by averaging all patch values covering a pixel.

    Accepts (P, P) mask patches or (P, P, C) image patches; returns (H, W)
    or (H, W, C) accordingly.
    """
    first = np.asarray(grid.patches[0])
    p = grid.patch_size
    if first.shape[:2] != (p, p):
        raise ValueError(f"patch shape {first.shape} does not match patch size {p}")
    w, h = grid.source_size
    out_shape = (h, w) if first.ndim == 2 else (h, w, first.shape[2])
    acc = np.zeros(out_shape, dtype=np.float64)
    counts = np.zeros((h, w), dtype=np.int64)
    for patch, (x, y) in zip(grid.patches, grid.offsets):
        patch = np.asarray(patch)
        if patch.shape != first.shape:
            raise ValueError(f"inconsistent patch shape {patch.shape} vs {first.shape}")
        acc[y:y + p, x:x + p] += patch
        counts[y:y + p, x:x + p] += 1
    if (counts == 0).any():
        raise ValueError("patch grid does not cover the full extent")
    weights = counts if first.ndim == 2 else counts[:, :, np.newaxis]
    return (acc / weights).astype(first.dtype if np.issubdtype(first.dtype, np.floating) else np.float64)
