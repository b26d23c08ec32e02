import os
import subprocess
import sys
from itertools import combinations

import numpy as np
import pytest

from ivselect import _kernels
from ivselect._accel import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("k", [1, 2, 3])
def test_solve_subsets_backends_agree(k):
    rng = np.random.default_rng(k)
    Pi = rng.standard_normal((7, k))
    gamma = rng.standard_normal(7)
    subsets = np.array(list(combinations(range(7), k)), dtype=np.int64)
    b1, r1 = _kernels.solve_subsets_numpy(Pi, gamma, subsets, 1e-10)
    b2, r2 = _kernels.solve_subsets_numba(Pi, gamma, subsets, 1e-10)
    np.testing.assert_allclose(b1, b2, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(r1, r2, rtol=1e-8)
    for s, b in zip(subsets, b1):
        np.testing.assert_allclose(b, np.linalg.solve(Pi[s], gamma[s]), rtol=1e-9)


@needs_numba
def test_masked_medians_backends_agree():
    rng = np.random.default_rng(0)
    grid = rng.standard_normal((6, 6, 2))
    mask = rng.random((6, 6)) < 0.6
    mask[:, 0] = True
    np.testing.assert_array_equal(
        _kernels.masked_row_medians_numpy(grid, mask), _kernels.masked_row_medians_numba(grid, mask)
    )


@needs_numba
def test_lars_backends_agree():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((80, 9))
    y = X @ rng.standard_normal(9) + rng.standard_normal(80)
    G, c0 = X.T @ X, X.T @ y
    elig = np.ones(9, dtype=np.bool_)
    out1 = _kernels.lars_gram_numpy(G, c0, elig, 9, 1e-12, 1e-12)
    out2 = _kernels.lars_gram_numba(G, c0, elig, 9, 1e-12, 1e-12)
    for a, b in zip(out1[:3], out2[:3]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-10)


@needs_numba
def test_cd_backends_agree():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((60, 5))
    y = rng.standard_normal(60)
    G, c0 = X.T @ X, X.T @ y
    w = np.ones(5)
    b1, _ = _kernels.lasso_cd_numpy(G, c0, float(y @ y), 3.0, w, 1e-12, 10_000)
    b2, _ = _kernels.lasso_cd_numba(G, c0, float(y @ y), 3.0, w, 1e-12, 10_000)
    np.testing.assert_allclose(b1, b2, atol=1e-10)


def test_env_flag_selects_numpy_backend():
    env = {**os.environ, "IVSELECT_DISABLE_NUMBA": "1"}
    out = subprocess.run(
        [sys.executable, "-c", "import ivselect; print(ivselect.backend_name())"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"
