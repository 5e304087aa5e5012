"""Pure-numpy implementations of the hot kernels."""

import numpy as np


def gather_sum(indptr, indices, x):
    """Segment-wise gather-sum: out[v] = sum of x[indices[indptr[v]:indptr[v+1]]].

    Rows with an empty segment come out as zero.
    """
    n_out = indptr.shape[0] - 1
    out = np.zeros((n_out, x.shape[1]), dtype=np.float64)
    counts = np.diff(indptr)
    row_ids = np.repeat(np.arange(n_out, dtype=np.int64), counts)
    np.add.at(out, row_ids, x[indices])
    return out


def unit_rows(x):
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe[:, None]
