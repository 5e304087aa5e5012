"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled Cython module is preferred when it was built; otherwise the
numpy implementation is used transparently. Both expose the same functions
and produce identical results (see tests/test_kernels.py).
"""

from privgnn.kernels import _pykernels

try:
    from privgnn.kernels import _ckernels as _impl

    HAVE_COMPILED = True
except ImportError:
    _impl = _pykernels
    HAVE_COMPILED = False

gather_sum = _impl.gather_sum
unit_rows = _impl.unit_rows

__all__ = ["HAVE_COMPILED", "gather_sum", "unit_rows"]
