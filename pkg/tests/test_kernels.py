"""Backend selection and compiled-vs-python kernel parity."""

import os
import subprocess
import sys

import numpy as np
import pytest

from ensparse import kernels
from ensparse.kernels import reference

try:
    from ensparse.kernels import _fista as compiled
except ImportError:  # pragma: no cover - depends on build environment
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None,
                                    reason="compiled kernel not built")


def _prepared(rng, m, k):
    e = rng.normal(size=(m, k))
    x = rng.normal(size=m)
    gram = np.ascontiguousarray(e.T @ e)
    corr = e.T @ x
    smax2 = float(np.linalg.eigvalsh(gram if m >= k else e @ e.T)[-1])
    return gram, corr, float(x @ x), 1.0 / (2.0 * smax2)


def test_backend_reports_selection():
    assert kernels.backend() == kernels.BACKEND
    assert kernels.backend() in ("python", "compiled")


def test_reference_kernel_certifies_kkt():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gram, corr, xtx, step = _prepared(rng, 12, 8)
        coeffs, kkt, n_iter, converged, _ = reference.lasso_kernel(
            gram, corr, xtx, 0.1, step, 20000, 1e-7)
        assert converged
        assert kkt <= 1e-7
        assert 1 <= n_iter <= 20000


def test_reference_trace_is_monotone():
    rng = np.random.default_rng(1)
    gram, corr, xtx, step = _prepared(rng, 20, 15)
    _, _, _, converged, trace = reference.lasso_kernel(
        gram, corr, xtx, 0.05, step, 20000, 1e-7, record_objective=True)
    assert converged
    assert trace is not None and len(trace) >= 1
    assert np.all(np.diff(trace) <= 1e-12)


def test_reference_reports_nonconvergence():
    rng = np.random.default_rng(2)
    gram, corr, xtx, step = _prepared(rng, 30, 25)
    coeffs, kkt, n_iter, converged, _ = reference.lasso_kernel(
        gram, corr, xtx, 1e-4, step, 2, 1e-14)
    assert not converged
    assert kkt > 1e-14
    assert n_iter == 2


@needs_compiled
def test_compiled_matches_reference():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = int(rng.integers(4, 24))
        k = int(rng.integers(2, 20))
        lam = float(rng.uniform(0.01, 0.5))
        gram, corr, xtx, step = _prepared(rng, m, k)
        ref = reference.lasso_kernel(gram, corr, xtx, lam, step, 30000, 1e-6)
        com = compiled.lasso_kernel(gram, corr, xtx, lam, step, 30000, 1e-6)
        assert ref[3] and com[3]
        np.testing.assert_allclose(com[0], ref[0], atol=1e-6)
        assert com[1] <= 1e-6


@needs_compiled
def test_compiled_trace_matches_reference():
    rng = np.random.default_rng(4)
    gram, corr, xtx, step = _prepared(rng, 16, 10)
    ref = reference.lasso_kernel(gram, corr, xtx, 0.1, step, 10000, 1e-7,
                                 record_objective=True)
    com = compiled.lasso_kernel(gram, corr, xtx, 0.1, step, 10000, 1e-7,
                                record_objective=True)
    assert len(ref[4]) == len(com[4])
    np.testing.assert_allclose(com[4], ref[4], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("forced", ["python", "compiled"])
def test_env_var_forces_backend(forced):
    if forced == "compiled" and compiled is None:
        pytest.skip("compiled kernel not built")
    env = dict(os.environ, ENSPARSE_KERNEL=forced)
    out = subprocess.run(
        [sys.executable, "-c",
         "from ensparse import kernels; print(kernels.backend())"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == forced
