"""Deterministic synthetic data: desk-scale images, patch corpora, subspaces.

The image generators mix sharp cartoon shapes, band-limited gratings, and
smooth shading so that patch statistics resemble natural images (edges and
oriented texture dominate). Everything is a pure function of its seed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .dictionaries import TrainingSet
from .errors import ContractViolation
from .patches import DEFAULT_VARIANCE_FLOOR, extract_patches


def _smooth_field(shape, rng, sigma: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.normal(size=shape), sigma)
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros(shape)


def cartoon_image(shape=(64, 64), seed=0, n_shapes: int = 14) -> np.ndarray:
    """Overlapping rectangles and discs with flat gray levels: edge-rich."""
    rng = np.random.default_rng(seed)
    h, w = shape
    img = np.full(shape, float(rng.uniform(0.2, 0.8)))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_shapes):
        level = float(rng.uniform(0.05, 0.95))
        if rng.uniform() < 0.5:
            r0, c0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
            rh = int(rng.integers(4, max(5, h // 2)))
            cw = int(rng.integers(4, max(5, w // 2)))
            img[r0 : r0 + rh, c0 : c0 + cw] = level
        else:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = float(rng.uniform(3, min(h, w) / 3))
            img[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad] = level
    return img


def grating_image(shape=(64, 64), seed=0, n_waves: int = 3,
                  max_freq: float = 0.16) -> np.ndarray:
    """Sum of oriented sinusoids, band-limited below the 2x-decimation Nyquist."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros(shape)
    for _ in range(n_waves):
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(0.03, max_freq)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img += rng.uniform(0.4, 1.0) * np.sin(
            2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.full(shape, 0.5)


def texture_image(shape=(64, 64), seed=0) -> np.ndarray:
    """Blend of cartoon shapes, gratings, and smooth shading."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31, size=3)
    img = (
        0.55 * cartoon_image(shape, seeds[0])
        + 0.3 * grating_image(shape, seeds[1])
        + 0.15 * _smooth_field(shape, np.random.default_rng(seeds[2]), sigma=6.0)
    )
    return np.clip(img, 0.0, 1.0)


def photo_image(shape=(64, 64), seed=0, n_textons: int = 14,
                n_shapes: int = 7) -> np.ndarray:
    """Photograph-like complexity: local oriented textons under occlusions.

    Orientation, frequency, and phase vary across the image (Gabor-like
    patches on a smooth illumination field, partially covered by flat
    shapes), so small patches drawn from one image span a far wider variety
    than the globally coherent ``texture``/``grating`` generators produce.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    img = 0.35 + 0.4 * _smooth_field(shape, rng, sigma=8.0)
    for _ in range(n_textons):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(3.0, 10.0)
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(0.06, 0.42)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.1, 0.3)
        envelope = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
        carrier = np.sin(
            2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )
        img = img + amp * envelope * carrier
    for _ in range(n_shapes):
        level = float(rng.uniform(0.05, 0.95))
        opacity = float(rng.uniform(0.5, 1.0))
        if rng.uniform() < 0.5:
            r0, c0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
            rh = int(rng.integers(4, max(5, h // 3)))
            cw = int(rng.integers(4, max(5, w // 3)))
            mask = np.zeros(shape, dtype=bool)
            mask[r0 : r0 + rh, c0 : c0 + cw] = True
        else:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = float(rng.uniform(3, min(h, w) / 4))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
        img = np.where(mask, opacity * level + (1.0 - opacity) * img, img)
    return np.clip(img, 0.0, 1.0)


IMAGE_KINDS = ("texture", "cartoon", "grating", "photo", "mixed")

_MAKERS = {"texture": texture_image, "cartoon": cartoon_image,
           "grating": grating_image, "photo": photo_image}


def _make_image(kind: str, shape, seed, index: int = 0) -> np.ndarray:
    if kind == "mixed":
        kind = ("texture", "cartoon", "grating")[index % 3]
    return _MAKERS[kind](shape, seed)


def image_suite(n_images: int, shape=(64, 64), seed=0, kind: str = "texture"):
    """A list of deterministic images; ``mixed`` cycles through the kinds."""
    if kind not in IMAGE_KINDS:
        raise ContractViolation(f"unknown image kind {kind!r}")
    root = np.random.SeedSequence(seed)
    return [_make_image(kind, shape, s, i) for i, s in enumerate(root.spawn(n_images))]


def patch_corpus(n_patches: int, patch_size: int = 8, seed=0, n_images: int = 6,
                 image_shape=(96, 96), stride: int = 2,
                 variance_floor: float = DEFAULT_VARIANCE_FLOOR,
                 kind: str = "texture") -> TrainingSet:
    """Mean-removed, variance-filtered patches from synthetic images."""
    if kind not in IMAGE_KINDS:
        raise ContractViolation(f"unknown image kind {kind!r}")
    root = np.random.SeedSequence(seed)
    image_seeds = root.spawn(n_images)
    pools = []
    for i, s in enumerate(image_seeds):
        img = _make_image(kind, image_shape, s, i)
        grid = extract_patches(img, patch_size, stride, remove_mean=True,
                               variance_floor=variance_floor)
        pools.append(grid.patches)
    pool = np.concatenate(pools, axis=1)
    if pool.shape[1] < n_patches:
        raise ContractViolation(
            f"only {pool.shape[1]} usable patches generated, need {n_patches}"
        )
    rng = np.random.default_rng(root.spawn(1)[0])
    chosen = rng.choice(pool.shape[1], size=n_patches, replace=False)
    return TrainingSet(pool[:, chosen])


def _unit_range(field: np.ndarray) -> np.ndarray:
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.full(field.shape, 0.5)


def motif_bank(n_families: int = 16, variants_per_family: int = 8,
               size: int = 8, seed=0, family_share: tuple = (0.6, 0.8),
               family_seed=None) -> np.ndarray:
    """A hierarchical library of recurring patch motifs.

    Natural-image patches recur across images (self-similarity) and cluster
    into families: many variations of the same local structure. The bank
    models that: ``n_families`` coarse patterns, each spawning
    ``variants_per_family`` variants that blend the family pattern with
    their own fine random detail. Coarse structure is compressible by a
    small learned dictionary; the variant details are not, yet any example
    draw almost surely contains *some* variant of each family, so example
    dictionaries degrade gracefully on unseen variants.

    ``family_seed`` fixes the family patterns independently of ``seed``:
    two banks sharing a family_seed but differing in seed model disjoint
    image sets from one visual world — coarse structure transfers between
    them, fine detail does not, mirroring how unseen natural test images
    relate to a training corpus. Returns an (size*size,
    n_families*variants_per_family) matrix in [0, 1]; variants of family f
    occupy columns f*variants_per_family + (0..variants-1).
    """
    rng = np.random.default_rng(seed)
    family_rng = rng if family_seed is None else np.random.default_rng(family_seed)
    families = []
    for _ in range(n_families):
        families.append(_unit_range(ndimage.gaussian_filter(
            family_rng.normal(size=(size, size)),
            float(family_rng.uniform(1.4, 2.4)), mode="nearest",
        )))
    bank = np.empty((size * size, n_families * variants_per_family))
    for f, family in enumerate(families):
        for v in range(variants_per_family):
            detail = _unit_range(ndimage.gaussian_filter(
                rng.normal(size=(size, size)), float(rng.uniform(0.4, 0.9)),
                mode="nearest",
            ))
            share = rng.uniform(*family_share)
            bank[:, f * variants_per_family + v] = (
                share * family + (1.0 - share) * detail
            ).ravel()
    return bank


def mosaic_image(bank: np.ndarray, shape=(96, 96), seed=0,
                 noise: float = 0.01) -> np.ndarray:
    """Tile an image from motif-bank blocks with varied contrast and offset."""
    size = int(round(np.sqrt(bank.shape[0])))
    if size * size != bank.shape[0]:
        raise ContractViolation("bank rows must be a square patch size")
    h, w = shape
    if h % size or w % size:
        raise ContractViolation(f"shape {shape} not tileable by {size}x{size}")
    rng = np.random.default_rng(seed)
    img = np.empty(shape)
    for r in range(0, h, size):
        for c in range(0, w, size):
            motif = bank[:, rng.integers(0, bank.shape[1])].reshape(size, size)
            amp = rng.uniform(0.5, 1.0)
            dc = rng.uniform(0.0, 1.0 - amp)
            img[r : r + size, c : c + size] = dc + amp * motif
    if noise > 0.0:
        img = img + noise * rng.normal(size=shape)
    return np.clip(img, 0.0, 1.0)


def mosaic_suite(n_images: int, bank: np.ndarray, shape=(96, 96), seed=0):
    """Fresh mosaic images over a shared motif bank."""
    root = np.random.SeedSequence(seed)
    return [mosaic_image(bank, shape, s) for s in root.spawn(n_images)]


def mosaic_corpus(n_patches: int, bank: np.ndarray, n_images: int = 12,
                  shape=(96, 96), seed=0,
                  variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> TrainingSet:
    """Training patches from mosaic images, grid-aligned with the motifs."""
    size = int(round(np.sqrt(bank.shape[0])))
    root = np.random.SeedSequence(seed)
    pools = []
    for s in root.spawn(n_images):
        img = mosaic_image(bank, shape, s)
        grid = extract_patches(img, size, size, remove_mean=True,
                               variance_floor=variance_floor)
        pools.append(grid.patches)
    pool = np.concatenate(pools, axis=1)
    if pool.shape[1] < n_patches:
        raise ContractViolation(
            f"only {pool.shape[1]} usable patches generated, need {n_patches}"
        )
    rng = np.random.default_rng(root.spawn(1)[0])
    chosen = rng.choice(pool.shape[1], size=n_patches, replace=False)
    return TrainingSet(pool[:, chosen])


def union_of_subspaces(t: int, m: int, n_subspaces: int = 2, dim: int = 3,
                       noise: float = 0.01, seed=0):
    """Unit-norm samples from random low-dimensional subspaces, plus labels."""
    if t % n_subspaces:
        raise ContractViolation("t must be divisible by n_subspaces")
    rng = np.random.default_rng(seed)
    per = t // n_subspaces
    samples = np.empty((m, t))
    labels = np.empty(t, dtype=np.int64)
    for c in range(n_subspaces):
        basis, _ = np.linalg.qr(rng.normal(size=(m, dim)))
        coeffs = rng.normal(size=(dim, per))
        block = basis @ coeffs
        block /= np.linalg.norm(block, axis=0)
        if noise > 0.0:
            block = block + noise * rng.normal(size=block.shape)
            block /= np.linalg.norm(block, axis=0)
        samples[:, c * per : (c + 1) * per] = block
        labels[c * per : (c + 1) * per] = c
    return samples, labels
