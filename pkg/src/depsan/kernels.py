"""Backend selection for the hot kernels.

The compiled extension is used when it imports; setting ``DEPSAN_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names whichever was picked.
"""
import os

if os.environ.get("DEPSAN_PURE_PYTHON"):
    from depsan import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from depsan import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from depsan import _kernels_py as _impl

        BACKEND = "python"

tree_distances = _impl.tree_distances
gauss_matrix = _impl.gauss_matrix

__all__ = ["BACKEND", "tree_distances", "gauss_matrix"]
