"""Paired-dictionary superresolution pipeline."""

import numpy as np
import pytest

from ensparse.ensemble import betas_from_alphas
from ensparse.errors import ContractViolation
from ensparse.images import bicubic_resize
from ensparse.operators import BlurDownsample
from ensparse.patches import extract_patches
from ensparse.restoration import psnr
from ensparse.sisr import (
    PairedDictionary,
    PairedEnsemble,
    backproject,
    feature_patches,
    gradient_features,
    hi_estimates,
    make_training_pairs,
    superresolve,
    train_paired_ensemble,
)
from ensparse.sparse_coding import Dictionary, normalize_columns
from ensparse.synthetic import texture_image


def test_gradient_features_on_ramp():
    ramp = np.tile(np.linspace(0.0, 1.0, 11), (9, 1))
    gx, gy, lap = gradient_features(ramp)
    # interior response of a linear ramp: the horizontal kernel sees a
    # constant slope (ndimage.convolve flips the kernel, hence the sign)
    np.testing.assert_allclose(gx[2:-2, 2:-2], -2.0 * 0.1, atol=1e-12)
    np.testing.assert_allclose(gy[2:-2, 2:-2], 0.0, atol=1e-12)
    np.testing.assert_allclose(lap[2:-2, 2:-2], 0.0, atol=1e-12)


def test_feature_patches_stacking():
    img = texture_image((12, 12), seed=0)
    maps = gradient_features(img)
    stacked = feature_patches(img, size=5, stride=1)
    assert stacked.shape[0] == 3 * 25
    for i, m in enumerate(maps):
        np.testing.assert_array_equal(
            stacked[i * 25 : (i + 1) * 25],
            extract_patches(m, 5, 1).patches)


def test_make_training_pairs_shapes():
    imgs = [texture_image((24, 24), seed=s) for s in range(2)]
    feats, details = make_training_pairs(imgs, scale=2, patch_size=5, stride=2)
    assert feats.shape[0] == 3 * 25
    assert details.shape[0] == 25
    assert feats.shape[1] == details.shape[1] > 0
    with pytest.raises(ContractViolation):
        make_training_pairs([np.zeros((24, 24))])


def test_paired_dictionary_validation():
    lo = Dictionary(normalize_columns(np.random.default_rng(0).normal(size=(6, 4))),
                    "example_subset")
    with pytest.raises(ContractViolation):
        PairedDictionary(lo, np.zeros((9, 3)))


def test_hi_estimates_manual():
    lo = Dictionary(np.eye(3), "example_subset")
    hi = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    pair = PairedDictionary(lo, hi)
    feats = np.array([[0.5, 0.0], [0.0, -2.0], [0.2, 0.0]])
    est = hi_estimates(pair, feats)
    # sample 0 picks atom 0 with coeff 0.5; sample 1 picks atom 1 with -2
    np.testing.assert_allclose(est[:, 0], 0.5 * hi[:, 0])
    np.testing.assert_allclose(est[:, 1], -2.0 * hi[:, 1])


def _train_images():
    return [texture_image((48, 48), seed=s) for s in range(3)]


def test_train_randexav_paired():
    model = train_paired_ensemble(_train_images(), "randexav", k=24,
                                  n_models=3, seed=0)
    assert model.n_models == 3
    assert model.alphas is None
    np.testing.assert_allclose(model.betas.betas, 1.0 / 3.0)
    assert model.method == "randexav" and model.scale == 2
    again = train_paired_ensemble(_train_images(), "randexav", k=24,
                                  n_models=3, seed=0)
    for a, b in zip(model.pairs, again.pairs):
        np.testing.assert_array_equal(a.lo.atoms, b.lo.atoms)
        np.testing.assert_array_equal(a.hi_atoms, b.hi_atoms)


@pytest.mark.parametrize("method", ["boostex", "boostkm"])
def test_train_boosted_paired(method):
    model = train_paired_ensemble(_train_images(), method, k=16,
                                  n_models=3, seed=1, max_pairs=600)
    assert model.alphas[0] == 1.0
    np.testing.assert_allclose(model.betas.betas,
                               betas_from_alphas(model.alphas), atol=1e-12)
    assert abs(model.betas.betas.sum() - 1.0) <= 1e-9


def test_train_paired_validation():
    with pytest.raises(ContractViolation):
        train_paired_ensemble(_train_images(), "altopt", k=8, n_models=2)
    with pytest.raises(ContractViolation):
        train_paired_ensemble([texture_image((16, 16), seed=0)], "randexav",
                              k=10**6, n_models=2)


def test_max_pairs_subsampling():
    model = train_paired_ensemble(_train_images(), "randexav", k=16,
                                  n_models=2, seed=0, max_pairs=64)
    assert model.n_models == 2
    for pair in model.pairs:
        assert pair.lo.n_atoms == 16


def test_backproject_trace_non_increasing():
    img = texture_image((32, 32), seed=3)
    op = BlurDownsample(img.shape, 2)
    low = op.apply(img)
    rough = bicubic_resize(low, 2)
    refined, trace = backproject(low, rough, op, c=1.0, iterations=20)
    assert trace.shape == (21,)
    assert np.all(np.diff(trace) <= 1e-12)
    assert trace[-1] <= trace[0]
    assert refined.shape == img.shape


def test_superresolve_beats_bicubic():
    ref = texture_image((48, 48), seed=9)
    op = BlurDownsample(ref.shape, 2)
    low = op.apply(ref)
    model = train_paired_ensemble(_train_images(), "randexav", k=64,
                                  n_models=3, seed=0)
    sr = superresolve(low, model)
    assert sr.shape == ref.shape
    assert sr.min() >= 0.0 and sr.max() <= 1.0
    bic = np.clip(bicubic_resize(low, 2), 0.0, 1.0)
    assert psnr(ref, sr) > psnr(ref, bic)


def test_superresolve_paired_dictionary_path():
    imgs = _train_images()
    feats, details = make_training_pairs(imgs, scale=2, patch_size=5, stride=2)
    sel = np.arange(0, 32)
    scales = np.linalg.norm(feats[:, sel], axis=0)
    pair = PairedDictionary(
        Dictionary(feats[:, sel] / scales, "example_subset"),
        details[:, sel] / scales)
    low = BlurDownsample((32, 32), 2).apply(texture_image((32, 32), seed=4))
    out = superresolve(low, pair, lam=0.2)
    assert out.shape == (32, 32)
    assert np.all(np.isfinite(out))


def test_superresolve_validation():
    model = train_paired_ensemble(_train_images(), "randexav", k=16,
                                  n_models=2, seed=0, max_pairs=400)
    low = np.full((16, 16), 0.5)
    with pytest.raises(ContractViolation):
        superresolve(low, model, scale=3)
    with pytest.raises(ContractViolation):
        superresolve(low, object())
