"""Single-image superresolution with paired example dictionaries.

Training pairs couple gradient features of bicubic-upscaled low-resolution
patches with the corresponding high-resolution detail (high-res patch minus
the bicubic patch mean). Both halves of a pair share one normalization scale
so a sparse code computed on the feature half transfers to the detail half.
Test-time coding is 1-sparse for ensembles (single paired dictionaries use
the l1 solver), and the assembled estimate is refined by the global
reconstruction constraint ``min_Y ||Z - Phi Y||^2 + c ||Y - Y0||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dictionaries import TrainingSet
from .ensemble import (
    WeightVector,
    _sub_seeds,
    betas_from_alphas,
    optimal_alpha,
)
from .errors import ContractViolation
from .images import bicubic_resize
from .kmeans import weighted_kmeans_pp, weighted_lloyd
from .operators import BlurDownsample
from .patches import as_image, assemble_patches, extract_patches, patch_grid_counts, PatchGrid
from .restoration import psnr
from .sparse_coding import Dictionary, code_batch, one_sparse_batch

SISR_PATCH_SIZE = 5
SISR_METHODS = ("randexav", "boostex", "boostkm")

_FEATURE_KERNELS = (
    np.array([[-1.0, 0.0, 1.0]]),                      # horizontal gradient
    np.array([[-1.0], [0.0], [1.0]]),                  # vertical gradient
    np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]),  # Laplacian
)


def gradient_features(image: np.ndarray) -> list[np.ndarray]:
    """First-order gradient and Laplacian response maps of an image."""
    image = as_image(image)
    return [
        ndimage.convolve(image, k, mode="nearest") for k in _FEATURE_KERNELS
    ]


def feature_patches(image: np.ndarray, size: int = SISR_PATCH_SIZE,
                    stride: int = 1) -> np.ndarray:
    """Stacked feature patches (3*size^2 x P) in row-major patch order."""
    maps = gradient_features(image)
    stacks = [extract_patches(m, size, stride).patches for m in maps]
    return np.concatenate(stacks, axis=0)


@dataclass(frozen=True)
class PairedDictionary:
    """Feature-domain atoms with their high-resolution detail counterparts.

    ``lo`` holds unit-norm feature atoms; ``hi_atoms`` holds the matching
    detail patches divided by the same per-pair scale, so a coefficient
    computed against ``lo`` synthesizes detail through ``hi_atoms``.
    """

    lo: Dictionary
    hi_atoms: np.ndarray

    def __post_init__(self):
        hi = np.asarray(self.hi_atoms, dtype=np.float64)
        if hi.ndim != 2 or hi.shape[1] != self.lo.n_atoms:
            raise ContractViolation("hi_atoms must pair one column per lo atom")
        object.__setattr__(self, "hi_atoms", hi)


@dataclass(frozen=True)
class PairedEnsemble:
    """L paired dictionaries plus combination weights (SISR model)."""

    pairs: list
    betas: WeightVector
    alphas: np.ndarray | None
    method: str
    scale: int
    patch_size: int
    lambda_train: float | None = None

    @property
    def n_models(self) -> int:
        return len(self.pairs)


def make_training_pairs(images, scale: int = 2, patch_size: int = SISR_PATCH_SIZE,
                        stride: int = 2, min_feature_norm: float = 1e-3):
    """(features, details) training pair matrices from high-res images.

    Each image is degraded by blur-and-downsample, bicubic-upscaled back, and
    converted to gradient-feature patches; the paired detail is the true
    high-res patch minus the mean of the matching bicubic patch. Pairs whose
    feature energy is negligible (flat regions, nothing to learn) are dropped.
    """
    feats, details = [], []
    for img in images:
        img = as_image(img)
        op = BlurDownsample(img.shape, scale)
        low = op.apply(img)
        bic = bicubic_resize(low, scale)
        f = feature_patches(bic, patch_size, stride)
        hi_grid = extract_patches(img, patch_size, stride)
        bic_grid = extract_patches(bic, patch_size, stride)
        detail = hi_grid.patches - bic_grid.patches.mean(axis=0, keepdims=True)
        keep = np.linalg.norm(f, axis=0) >= min_feature_norm
        feats.append(f[:, keep])
        details.append(detail[:, keep])
    features = np.concatenate(feats, axis=1)
    detail = np.concatenate(details, axis=1)
    if features.shape[1] == 0:
        raise ContractViolation("no usable training pairs (all features flat)")
    return features, detail


def _paired_from_indices(features, details, indices) -> PairedDictionary:
    scales = np.linalg.norm(features[:, indices], axis=0)
    if np.any(scales == 0.0):
        raise ContractViolation("cannot normalize a zero feature pair")
    lo = Dictionary(features[:, indices] / scales, "example_subset",
                    np.asarray(indices, dtype=np.int64))
    return PairedDictionary(lo, details[:, indices] / scales)


def _paired_from_kmeans(features, details, masses, k, seed) -> PairedDictionary:
    """Weighted K-Means centers of the joint (feature, detail) vectors."""
    joint = np.concatenate([features, details], axis=0)
    rng = np.random.default_rng(seed)
    seed_idx = weighted_kmeans_pp(joint, masses, k, rng)
    centers, _, _ = weighted_lloyd(joint, masses, joint[:, seed_idx], max_iter=20)
    lo_part = centers[: features.shape[0]]
    hi_part = centers[features.shape[0] :]
    scales = np.linalg.norm(lo_part, axis=0)
    for j in np.flatnonzero(scales == 0.0):
        src = int(np.argmax(masses))
        lo_part[:, j] = features[:, src]
        hi_part[:, j] = details[:, src]
        scales[j] = np.linalg.norm(lo_part[:, j])
    return PairedDictionary(Dictionary(lo_part / scales, "kmeans_centers"),
                            hi_part / scales)


def hi_estimates(pair: PairedDictionary, features: np.ndarray) -> np.ndarray:
    """1-sparse detail estimates for a batch of feature patches."""
    idx, coeff = one_sparse_batch(pair.lo.atoms, features)
    return pair.hi_atoms[:, idx] * coeff


def train_paired_ensemble(images, method: str, k: int, n_models: int, seed=0,
                          scale: int = 2, patch_size: int = SISR_PATCH_SIZE,
                          stride: int = 2, max_pairs: int | None = 20000):
    """Train a paired SISR ensemble (RandExAv, BoostEx, or BoostKM).

    The boosted variants follow the greedy forward procedure on the detail
    matrices: per-pair errors of the 1-sparse detail estimate drive the mass
    update and the closed-form alpha blends the cumulative detail estimate.
    """
    if method not in SISR_METHODS:
        raise ContractViolation(f"unknown SISR method {method!r}")
    features, details = make_training_pairs(images, scale, patch_size, stride)
    root = np.random.SeedSequence(seed)
    if max_pairs is not None and features.shape[1] > max_pairs:
        rng = np.random.default_rng(root.spawn(1)[0])
        sel = rng.choice(features.shape[1], size=max_pairs, replace=False)
        features, details = features[:, sel], details[:, sel]
    t = features.shape[1]
    if t < k:
        raise ContractViolation(f"need at least K={k} training pairs, have {t}")
    seeds = _sub_seeds(seed, n_models)

    if method == "randexav":
        rngs = [np.random.default_rng(s) for s in seeds]
        pairs = [
            _paired_from_indices(features, details,
                                 r.choice(t, size=k, replace=False))
            for r in rngs
        ]
        betas = WeightVector(np.full(n_models, 1.0 / n_models), "sum_one")
        return PairedEnsemble(pairs, betas, None, method, scale, patch_size)

    masses = np.full(t, 1.0 / t)
    pairs, alphas = [], []
    cumulative = np.zeros_like(details)
    for l in range(n_models):
        if method == "boostex":
            rng = np.random.default_rng(seeds[l])
            remaining = masses.copy()
            indices = np.empty(k, dtype=np.int64)
            for j in range(k):
                indices[j] = rng.choice(t, p=remaining / remaining.sum())
                remaining[indices[j]] = 0.0
            pair = _paired_from_indices(features, details, indices)
        else:
            pair = _paired_from_kmeans(features, details, masses, k, seeds[l])
        approx = hi_estimates(pair, features)
        alpha = 1.0 if l == 0 else optimal_alpha(details, cumulative, approx)
        cumulative = (1.0 - alpha) * cumulative + alpha * approx
        err = np.sum((details - approx) ** 2, axis=0)
        masses = err / err.sum() if err.sum() > 0.0 else np.full(t, 1.0 / t)
        pairs.append(pair)
        alphas.append(alpha)
    alphas_arr = np.asarray(alphas)
    betas = WeightVector(betas_from_alphas(alphas_arr), "sum_one")
    return PairedEnsemble(pairs, betas, alphas_arr, method, scale, patch_size)


def backproject(observed_low: np.ndarray, initial: np.ndarray, operator: BlurDownsample,
                c: float = 1.0, iterations: int = 20):
    """Gradient descent on ``||Z - Phi Y||^2 + c ||Y - Y0||^2``.

    Fixed step 1/Lipschitz keeps the objective non-increasing; returns the
    refined image and the per-iteration objective trace (initial value
    first).
    """
    z = as_image(observed_low)
    y0 = as_image(initial)
    y = y0.copy()
    lip = 2.0 * (operator.operator_norm_sq() + c)
    step = 1.0 / lip

    def objective(img):
        r = z - operator.apply(img)
        d = img - y0
        return float(np.sum(r * r) + c * np.sum(d * d))

    trace = [objective(y)]
    for _ in range(iterations):
        grad = 2.0 * operator.adjoint(operator.apply(y) - z) + 2.0 * c * (y - y0)
        y = y - step * grad
        trace.append(objective(y))
    return y, np.asarray(trace)


def superresolve(low_res: np.ndarray, model, scale: int = 2, lam: float = 0.2,
                 backproject_c: float = 1.0, backproject_iterations: int = 20,
                 max_iter: int = 1000, tol: float = 1e-6) -> np.ndarray:
    """Upscale a low-resolution image with a paired model.

    Per overlapping feature patch of the bicubic upscale, detail is
    synthesized through the paired dictionaries (1-sparse per ensemble
    member, or an l1 code for a single ``PairedDictionary``), added to the
    bicubic patch means, assembled by overlap averaging, and refined by the
    global reconstruction constraint.
    """
    low = as_image(low_res)
    if isinstance(model, PairedEnsemble):
        if scale != model.scale:
            raise ContractViolation(
                f"model trained for scale {model.scale}, requested {scale}"
            )
        patch_size = model.patch_size
    elif isinstance(model, PairedDictionary):
        patch_size = int(round(np.sqrt(model.hi_atoms.shape[0])))
        if patch_size * patch_size != model.hi_atoms.shape[0]:
            raise ContractViolation("paired dictionary detail atoms are not square patches")
    else:
        raise ContractViolation(f"unsupported SISR model type {type(model).__name__}")

    bic = bicubic_resize(low, scale)
    features = feature_patches(bic, patch_size, stride=1)
    bic_grid = extract_patches(bic, patch_size, stride=1)
    means = bic_grid.patches.mean(axis=0)

    if isinstance(model, PairedEnsemble):
        detail = np.zeros((patch_size * patch_size, features.shape[1]))
        for beta, pair in zip(model.betas.betas, model.pairs):
            detail += beta * hi_estimates(pair, features)
    else:
        codes = code_batch(features, model.lo, lam, None, max_iter, tol)
        detail = model.hi_atoms @ codes

    grid = PatchGrid(detail + means[None, :], patch_size, 1, bic.shape)
    y0 = assemble_patches(grid, clamp=False)
    operator = BlurDownsample(bic.shape, scale)
    refined, _ = backproject(low, y0, operator, backproject_c, backproject_iterations)
    return np.clip(refined, 0.0, 1.0)


def sisr_psnr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """PSNR helper re-exported for the CLI (kept next to the pipeline)."""
    return psnr(reference, estimate)
