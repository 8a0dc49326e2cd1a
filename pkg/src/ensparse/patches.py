"""Patch extraction and assembly for the image pipelines.

Images are 2-D float arrays with intensities nominally in [0, 1]. Patches
are vectorized column-wise into an M x P matrix (M = size^2) in row-major
patch order. Mean removal stores the per-patch means so assembly can restore
them; the variance filter is a training-time device and assembled grids must
never have been filtered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

DEFAULT_VARIANCE_FLOOR = 0.002


def as_image(pixels) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or min(pixels.shape) < 1:
        raise ContractViolation(f"image must be 2-D, got shape {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise ContractViolation("image contains non-finite values")
    return pixels


def patch_grid_counts(image_shape, size: int, stride: int) -> tuple[int, int]:
    h, w = image_shape
    return (h - size) // stride + 1, (w - size) // stride + 1


@dataclass(frozen=True)
class PatchGrid:
    """Vectorized patches plus the layout needed to reassemble them."""

    patches: np.ndarray
    patch_size: int
    stride: int
    image_shape: tuple[int, int]
    means: np.ndarray | None = None
    kept: np.ndarray | None = None  # indices into the full row-major grid

    @property
    def n_patches(self) -> int:
        return self.patches.shape[1]


def extract_patches(image, size: int, stride: int, remove_mean: bool = False,
                    variance_floor: float | None = None) -> PatchGrid:
    """Slice an image into vectorized patches in row-major order.

    ``variance_floor`` switches on the training-mode filter that drops
    low-variance patches (measured before mean removal has any effect, the
    variance is mean-invariant); recovery paths must leave it ``None`` so
    every pixel stays covered.
    """
    image = as_image(image)
    h, w = image.shape
    if size > min(h, w):
        raise ContractViolation(f"patch size {size} exceeds image {image.shape}")
    if stride < 1:
        raise ContractViolation("stride must be >= 1")
    rows, cols = patch_grid_counts(image.shape, size, stride)
    patches = np.empty((size * size, rows * cols))
    p = 0
    for r in range(rows):
        for c in range(cols):
            block = image[r * stride : r * stride + size, c * stride : c * stride + size]
            patches[:, p] = block.ravel()
            p += 1
    means = None
    if remove_mean:
        means = patches.mean(axis=0)
        patches = patches - means[None, :]
    kept = None
    if variance_floor is not None:
        variances = patches.var(axis=0)
        kept = np.flatnonzero(variances >= variance_floor)
        patches = patches[:, kept]
        if means is not None:
            means = means[kept]
    return PatchGrid(patches, size, stride, (h, w), means, kept)


def assemble_patches(grid: PatchGrid, estimates: np.ndarray | None = None,
                     clamp: bool = True) -> np.ndarray:
    """Rebuild an image, averaging overlapping pixels by contribution count.

    ``estimates`` defaults to the grid's own patches. Stored means are added
    back, and the result is clamped to [0, 1] unless ``clamp`` is False.
    """
    if grid.kept is not None:
        raise ContractViolation("cannot assemble a variance-filtered grid")
    patches = grid.patches if estimates is None else np.asarray(estimates, dtype=np.float64)
    if patches.shape != grid.patches.shape:
        raise ContractViolation(
            f"estimates shape {patches.shape} != grid shape {grid.patches.shape}"
        )
    if grid.means is not None:
        patches = patches + grid.means[None, :]
    size, stride = grid.patch_size, grid.stride
    rows, cols = patch_grid_counts(grid.image_shape, size, stride)
    acc = np.zeros(grid.image_shape)
    count = np.zeros(grid.image_shape)
    p = 0
    for r in range(rows):
        for c in range(cols):
            sl = (slice(r * stride, r * stride + size),
                  slice(c * stride, c * stride + size))
            acc[sl] += patches[:, p].reshape(size, size)
            count[sl] += 1.0
            p += 1
    if np.any(count == 0.0):
        raise ContractViolation("patch grid does not cover the image")
    out = acc / count
    return np.clip(out, 0.0, 1.0) if clamp else out
