"""Kernel backends: the compiled and pure implementations must agree."""

import numpy as np
import pytest

from privgnn import kernels
from privgnn.kernels import _pykernels


def _random_csr(rng, n_rows, n_src, density=0.2):
    counts = rng.integers(0, max(1, int(density * n_src)) + 1, size=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = rng.integers(0, n_src, size=int(indptr[-1]), dtype=np.int64)
    return indptr, indices


def test_gather_sum_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(20):
        indptr, indices = _random_csr(rng, 17, 13)
        x = rng.standard_normal((13, 5))
        got = kernels.gather_sum(indptr, indices, x)
        want = np.zeros((17, 5))
        for v in range(17):
            for j in range(indptr[v], indptr[v + 1]):
                want[v] += x[indices[j]]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_gather_sum_empty_segments_are_zero():
    indptr = np.array([0, 0, 2, 2], dtype=np.int64)
    indices = np.array([0, 1], dtype=np.int64)
    x = np.arange(6, dtype=np.float64).reshape(3, 2)
    out = kernels.gather_sum(indptr, indices, x)
    np.testing.assert_array_equal(out[0], 0.0)
    np.testing.assert_array_equal(out[2], 0.0)
    np.testing.assert_array_equal(out[1], x[0] + x[1])


def test_unit_rows_basis_vectors_unchanged():
    x = np.eye(4)[:3].copy()
    np.testing.assert_array_equal(kernels.unit_rows(x), x)


def test_unit_rows_zero_rows_stay_zero():
    x = np.array([[0.0, 0.0], [3.0, 4.0]])
    out = kernels.unit_rows(x)
    np.testing.assert_array_equal(out[0], [0.0, 0.0])
    np.testing.assert_allclose(out[1], [0.6, 0.8], rtol=1e-15)


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
def test_backends_agree():
    from privgnn.kernels import _ckernels

    rng = np.random.default_rng(1)
    for _ in range(10):
        indptr, indices = _random_csr(rng, 31, 31)
        x = np.ascontiguousarray(rng.standard_normal((31, 7)))
        np.testing.assert_allclose(
            _ckernels.gather_sum(indptr, indices, x),
            _pykernels.gather_sum(indptr, indices, x),
            rtol=1e-13,
            atol=1e-13,
        )
        np.testing.assert_allclose(
            _ckernels.unit_rows(x), _pykernels.unit_rows(x), rtol=1e-13, atol=1e-15
        )
