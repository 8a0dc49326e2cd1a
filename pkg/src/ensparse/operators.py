"""Linear degradation operators: random projections and blur-plus-downsample.

Both model an observation ``z = op(y) + noise`` of clean data ``y``. The
random projection acts on vectorized patches, the blur/downsample operator on
whole 2-D images (used by the superresolution pipeline).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ContractViolation

# 3x3 binomial low-pass, sums to 1
BINOMIAL_3X3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


class RandomProjection:
    """Gaussian random projection of M-dimensional vectors onto N < M dims.

    Entries are i.i.d. N(0, 1/N), drawn once from ``seed``. ``out_dim ==
    in_dim`` is allowed as an identity-matrix sanity mode (used by the
    lossless recovery checks); a Gaussian matrix is only drawn when
    ``out_dim < in_dim``.
    """

    kind = "random_projection"

    def __init__(self, in_dim: int, out_dim: int, seed: int):
        if out_dim > in_dim:
            raise ContractViolation(
                f"projection must not increase dimension: {out_dim} > {in_dim}"
            )
        if out_dim < 1:
            raise ContractViolation("out_dim must be >= 1")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.seed = int(seed)
        if out_dim == in_dim:
            self.matrix = np.eye(in_dim)
        else:
            rng = np.random.default_rng(self.seed)
            self.matrix = rng.normal(0.0, np.sqrt(1.0 / out_dim), size=(out_dim, in_dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Project a vector (M,) or a stack of column vectors (M, T)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.in_dim:
            raise ContractViolation(
                f"operator expects input dim {self.in_dim}, got {x.shape[0]}"
            )
        return self.matrix @ x

    def compose(self, atoms: np.ndarray) -> np.ndarray:
        """Effective (unnormalized) atom matrix: operator applied column-wise."""
        return self.apply(atoms)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "seed": self.seed,
        }


class BlurDownsample:
    """Blur with a normalized kernel, then decimate by an integer factor.

    Operates on 2-D images of a fixed shape so the adjoint is well defined.
    Zero-padding is used at the borders, which makes ``adjoint`` the exact
    transpose of ``apply``.
    """

    kind = "blur_downsample"

    def __init__(self, image_shape: tuple[int, int], scale: int = 2,
                 kernel: np.ndarray | None = None):
        h, w = image_shape
        if h % scale or w % scale:
            raise ContractViolation(
                f"image shape {image_shape} not divisible by scale {scale}"
            )
        kernel = BINOMIAL_3X3 if kernel is None else np.asarray(kernel, dtype=np.float64)
        if abs(kernel.sum() - 1.0) > 1e-12:
            raise ContractViolation("blur kernel must sum to 1")
        self.image_shape = (int(h), int(w))
        self.scale = int(scale)
        self.kernel = kernel
        self.in_dim = h * w
        self.out_dim = (h // scale) * (w // scale)

    def _as_image(self, x, shape):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return x.reshape(shape), True
        if x.shape != shape:
            raise ContractViolation(f"expected image of shape {shape}, got {x.shape}")
        return x, False

    def apply(self, y: np.ndarray) -> np.ndarray:
        img, flat = self._as_image(y, self.image_shape)
        blurred = ndimage.convolve(img, self.kernel, mode="constant", cval=0.0)
        z = blurred[:: self.scale, :: self.scale]
        return z.ravel() if flat else z

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        h, w = self.image_shape
        small_shape = (h // self.scale, w // self.scale)
        img, flat = self._as_image(z, small_shape)
        up = np.zeros(self.image_shape)
        up[:: self.scale, :: self.scale] = img
        # kernel is symmetric under 180-degree flip only if even; correlate
        # is the exact adjoint of convolve under zero padding
        out = ndimage.correlate(up, self.kernel, mode="constant", cval=0.0)
        return out.ravel() if flat else out

    def compose(self, atoms: np.ndarray) -> np.ndarray:
        raise ContractViolation(
            "blur_downsample has no per-atom composition; it degrades whole images"
        )

    def operator_norm_sq(self, iterations: int = 30, seed: int = 0) -> float:
        """Largest squared singular value via power iteration on op^T op."""
        rng = np.random.default_rng(seed)
        v = rng.normal(size=self.image_shape)
        v /= np.linalg.norm(v)
        lam = 1.0
        for _ in range(iterations):
            w = self.adjoint(self.apply(v))
            nrm = np.linalg.norm(w)
            if nrm == 0.0:
                return 0.0
            lam = nrm
            v = w / nrm
        return float(lam)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "image_shape": list(self.image_shape),
            "scale": self.scale,
            "kernel": self.kernel.tolist(),
        }


def operator_from_descriptor(desc: dict | None):
    """Rebuild an operator from its serialized descriptor (or None)."""
    if desc is None:
        return None
    kind = desc.get("kind")
    if kind == RandomProjection.kind:
        return RandomProjection(desc["in_dim"], desc["out_dim"], desc["seed"])
    if kind == BlurDownsample.kind:
        return BlurDownsample(
            tuple(desc["image_shape"]), desc["scale"], np.asarray(desc["kernel"])
        )
    raise ContractViolation(f"unknown operator kind: {kind!r}")
