import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tndve import _pyimpl, backend

speedups = pytest.importorskip("tndve._speedups")


def _design(seed, n):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.integers(0, 2, n), rng.uniform(0.5, 1, n), rng.integers(0, 2, n)])
    y = (rng.random(n) < np.exp(-1.5 - 0.4 * X[:, 1] + 0.5 * X[:, 2] - 0.5 * X[:, 3])).astype(float)
    return np.ascontiguousarray(X), y


def test_backend_selected():
    assert backend.BACKEND in ("cython", "python")
    assert speedups.CONVERGED == _pyimpl.CONVERGED and speedups.SINGULAR == _pyimpl.SINGULAR


def test_env_forces_python_backend():
    env = {**os.environ, "TNDVE_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from tndve import backend; print(backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@given(seed=st.integers(0, 2**32 - 1), link=st.integers(0, 1))
def test_glm_pass_agrees(seed, link):
    X, y = _design(seed, 300)
    beta = np.array([-1.6, -0.3, 0.4, -0.4])
    a = _pyimpl.glm_pass(X, y, beta, link)
    b = speedups.glm_pass(X, y, beta, link)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert a[1] == pytest.approx(b[1], rel=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(a[3], b[3], rtol=1e-10)


@given(seed=st.integers(0, 2**32 - 1), link=st.integers(0, 1))
def test_irls_agrees(seed, link):
    X, y = _design(seed, 500)
    beta0 = np.zeros(4)
    beta0[0] = np.log(y.mean()) if link else 0.0
    args = (X, y, beta0, link, 100, 1e-8, 1e-10, 50, 4)
    a = _pyimpl.irls(*args)
    b = speedups.irls(*args)
    assert a[2] == b[2]
    np.testing.assert_allclose(a[0], b[0], rtol=1e-9, atol=1e-11)


def test_sandwich_parts_agree():
    X, y = _design(5, 1000)
    beta = np.array([-1.5, -0.4, 0.5, -0.5])
    for link in (0, 1):
        for pa, pb in zip(_pyimpl.glm_sandwich_parts(X, y, beta, link), speedups.glm_sandwich_parts(X, y, beta, link)):
            np.testing.assert_allclose(pa, pb, rtol=1e-11)


@given(seed=st.integers(0, 2**32 - 1), h=st.floats(0.005, 0.5))
def test_kernel_sums_agree(seed, h):
    rng = np.random.default_rng(seed)
    n = 400
    x = rng.uniform(0.5, 1, n)
    i = rng.integers(0, 2, n).astype(float)
    v = rng.integers(0, 2, n).astype(float)
    grid = np.linspace(0.45, 1.05, 17)
    np.testing.assert_allclose(_pyimpl.kernel_sums(x, i, v, grid, h), speedups.kernel_sums(x, i, v, grid, h),
                               rtol=1e-12, atol=1e-300)


def test_fit_identical_under_both_backends(monkeypatch, high_data):
    from tndve import glm
    from tndve.estimators import design_matrix
    rows = high_data.stratum()
    X, _ = design_matrix(rows)
    compiled = glm.fit_glm(X, rows.i, glm.LOG)
    monkeypatch.setattr(backend, "irls", _pyimpl.irls)
    monkeypatch.setattr(backend, "glm_pass", _pyimpl.glm_pass)
    monkeypatch.setattr(backend, "glm_sandwich_parts", _pyimpl.glm_sandwich_parts)
    pure = glm.fit_glm(X, rows.i, glm.LOG)
    np.testing.assert_allclose(pure.coefficients, compiled.coefficients, rtol=1e-10)
    np.testing.assert_allclose(pure.covariance_sandwich, compiled.covariance_sandwich, rtol=1e-8)
