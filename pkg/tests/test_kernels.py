"""Both kernel backends against the BFS oracle and each other."""
import importlib
import math

import numpy as np
import pytest

from depsan import _kernels_py, kernels

from conftest import bfs_distances, random_heads

try:
    _compiled = importlib.import_module("depsan._kernels")
except ImportError:  # extension not built
    _compiled = None

BACKENDS = [pytest.param(_kernels_py, id="python"),
            pytest.param(_compiled, id="cython",
                         marks=pytest.mark.skipif(_compiled is None, reason="extension not built"))]


def parents(heads):
    return np.array([h - 1 for h in heads], dtype=np.int64)


@pytest.mark.parametrize("impl", BACKENDS)
def test_tree_distances_match_oracle(impl):
    rng = np.random.default_rng(11)
    for _ in range(300):
        heads = random_heads(rng, int(rng.integers(1, 41)))
        np.testing.assert_array_equal(impl.tree_distances(parents(heads)), bfs_distances(heads))


@pytest.mark.parametrize("impl", BACKENDS)
def test_tree_distances_empty(impl):
    assert impl.tree_distances(np.zeros(0, dtype=np.int64)).shape == (0, 0)


@pytest.mark.parametrize("impl", BACKENDS)
def test_gauss_matrix(impl):
    d = np.array([[0, 1], [2, 6]])
    expected = [[math.exp(-x * x / 2) / math.sqrt(2 * math.pi) for x in row] for row in d]
    np.testing.assert_allclose(impl.gauss_matrix(d, 1.0), expected, rtol=1e-15, atol=0)


def test_backends_agree_on_gauss():
    if _compiled is None:
        pytest.skip("extension not built")
    d = np.random.default_rng(0).integers(0, 40, size=(30, 30))
    for sigma in (0.5, 1.0, 2.0, 32.0):
        np.testing.assert_allclose(_compiled.gauss_matrix(d, sigma), _kernels_py.gauss_matrix(d, sigma),
                                   rtol=1e-14, atol=0)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
