import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depsan.deptree import DepTree, DistanceMatrix, tree_distance_matrix
from depsan.errors import ConfigError, InvalidProbability, NonPositiveSigma
from depsan.scaling import (AttentionMask, ScaledMatrix, SparsingConfig, gauss_dist, make_rng,
                            rs_sparsify, scale_matrix, scale_values, wink_mask)

from conftest import random_heads

# 25-digit mpmath evaluations of the closed form
GAUSS_0_1 = 0.3989422804014326779399461
GAUSS_1_1 = 0.2419707245191433497978302
GAUSS_0_2 = 0.199471140200716338969973
GAUSS_2_1 = 0.0539909665131880519505642
GAUSS_6_1 = 6.075882849823285486996308e-9


class TestGaussDist:
    @pytest.mark.parametrize("d,sigma,expected", [
        (0, 1, GAUSS_0_1), (1, 1, GAUSS_1_1), (0, 2, GAUSS_0_2), (2, 1, GAUSS_2_1),
    ])
    def test_closed_form(self, d, sigma, expected):
        assert abs(gauss_dist(d, sigma) - expected) < 1e-12

    def test_dilution_value(self):
        assert gauss_dist(6, 1) == pytest.approx(GAUSS_6_1, rel=1e-12)
        assert gauss_dist(6, 1) == pytest.approx(6.08e-9, rel=1e-3)

    @pytest.mark.parametrize("sigma", [0, -1.0, float("nan")])
    def test_non_positive_sigma(self, sigma):
        with pytest.raises(NonPositiveSigma):
            gauss_dist(0, sigma)

    @given(st.integers(0, 30), st.floats(0.1, 50))
    def test_strictly_decreasing(self, d, sigma):
        a, b = gauss_dist(d, sigma), gauss_dist(d + 1, sigma)
        assert b < a or (b == 0.0 and a == 0.0)


class TestScaleMatrix:
    def test_example_row(self, example_tree):
        s = scale_matrix(tree_distance_matrix(example_tree), 1.0)
        np.testing.assert_allclose(s.values[1], [GAUSS_1_1, GAUSS_0_1, GAUSS_2_1, GAUSS_2_1, GAUSS_1_1],
                                   rtol=1e-14)
        assert [round(x, 5) for x in s.values[1]] == [0.24197, 0.39894, 0.05399, 0.05399, 0.24197]

    def test_single_token(self):
        s = scale_matrix(DistanceMatrix(1, [[0]]), 1.0)
        assert s.values[0, 0] == pytest.approx(GAUSS_0_1, abs=1e-15)

    def test_large_sigma_flattens(self):
        dist = tree_distance_matrix(DepTree.from_heads([0, 1, 2, 3, 4, 5]))
        ratios = [scale_matrix(dist, s).values.max() / scale_matrix(dist, s).values.min()
                  for s in (1, 10, 100, 1000)]
        assert ratios == sorted(ratios, reverse=True)
        assert ratios[-1] == pytest.approx(1.0, abs=1e-4)
        big = scale_matrix(dist, 1000.0)
        np.testing.assert_allclose(big.values, 1 / math.sqrt(2 * math.pi * 1000.0 ** 2), rtol=1e-4)

    def test_rejects_bad_sigma(self, example_tree):
        with pytest.raises(NonPositiveSigma):
            scale_matrix(tree_distance_matrix(example_tree), 0.0)

    def test_batched_values(self):
        d = np.stack([np.eye(3, dtype=np.int64), 2 * np.ones((3, 3), dtype=np.int64)])
        v = scale_values(d, 1.0)
        assert v.shape == (2, 3, 3)
        assert v[1, 0, 0] == pytest.approx(GAUSS_2_1, rel=1e-14)

    def test_serialization(self, example_tree):
        s = scale_matrix(tree_distance_matrix(example_tree))
        assert s.to_csv().splitlines()[2] == "0.241971,0.398942,0.053991,0.053991,0.241971"
        assert s.to_dict()["values"][1][1] == 0.398942


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31), st.floats(0.25, 40))
def test_scaled_matrix_invariants(n, seed, sigma):
    heads = random_heads(np.random.default_rng(seed), n)
    dist = tree_distance_matrix(DepTree.from_heads(heads))
    s = scale_matrix(dist, sigma).values
    peak = gauss_dist(0, sigma)
    assert (s > 0).all()
    assert (s <= peak).all()
    np.testing.assert_array_equal(s, s.T)
    np.testing.assert_array_equal(np.diag(s), np.full(n, peak))
    # nearer dependency, strictly larger scale
    d = dist.d
    for i in range(n):
        closer = d[i][:, None] < d[i][None, :]
        assert (s[i][:, None] > s[i][None, :])[closer].all()


class TestRsSparsify:
    def dist(self, n=10, seed=0):
        return tree_distance_matrix(DepTree.from_heads(random_heads(np.random.default_rng(seed), n)))

    def test_q_zero_is_identity(self):
        d = self.dist()
        assert rs_sparsify(d, 6, 0.0, seed=5) == d

    def test_q_one_sets_everything(self):
        out = rs_sparsify(self.dist(), 6, 1.0, seed=5)
        assert (out.d == 6).all()

    def test_deterministic(self):
        d = self.dist()
        a = rs_sparsify(d, 6, 0.1, seed=42)
        b = rs_sparsify(d, 6, 0.1, seed=42)
        np.testing.assert_array_equal(a.d, b.d)

    def test_row_major_consumption(self):
        d = self.dist()
        draws = np.random.Generator(np.random.PCG64(9)).random(100).reshape(10, 10)
        expected = np.where(draws < 0.3, 6, d.d)
        np.testing.assert_array_equal(rs_sparsify(d, 6, 0.3, seed=9).d, expected)

    def test_replacement_rate(self):
        # 10,000 seeded trials; mean replaced-cell count within 3 standard errors of q * I^2
        n, q, trials = 10, 0.1, 10_000
        d = DistanceMatrix(n, np.zeros((n, n), dtype=np.int64))
        rng = make_rng(2024)
        counts = np.array([(rs_sparsify(d, 6, q, rng).d == 6).sum() for _ in range(trials)])
        se = math.sqrt(n * n * q * (1 - q) / trials)
        assert abs(counts.mean() - q * n * n) < 3 * se

    def test_not_symmetric_in_general(self):
        d = self.dist(12)
        out = rs_sparsify(d, 6, 0.5, seed=1).d
        assert not (out == out.T).all()

    @pytest.mark.parametrize("q", [-0.1, 1.5])
    def test_bad_probability(self, q):
        with pytest.raises(InvalidProbability):
            rs_sparsify(self.dist(), 6, q, seed=0)

    def test_raw_array_batches(self):
        arr = np.zeros((2, 3, 3), dtype=np.int64)
        out = rs_sparsify(arr, 6, 1.0, seed=0)
        assert isinstance(out, np.ndarray) and (out == 6).all()


class TestWinkMask:
    def test_large_k_is_all_true(self, example_tree):
        m = wink_mask(tree_distance_matrix(example_tree), 4)
        assert m.allowed.all()

    def test_zero_k_is_identity(self, example_tree):
        m = wink_mask(tree_distance_matrix(example_tree), 0)
        np.testing.assert_array_equal(m.allowed, np.eye(5, dtype=bool))

    def test_example_k1(self, example_tree):
        m = wink_mask(tree_distance_matrix(example_tree), 1)
        # The, experiments, are, very, simple
        assert m.allowed[1].tolist() == [True, True, False, False, True]

    def test_csv(self, example_tree):
        m = wink_mask(tree_distance_matrix(example_tree), 0)
        assert m.to_csv().splitlines()[1] == "0,1,0,0,0"

    def test_negative_k(self, example_tree):
        with pytest.raises(ConfigError):
            wink_mask(tree_distance_matrix(example_tree), -1)


class TestTypes:
    def test_sparsing_defaults(self):
        cfg = SparsingConfig()
        assert (cfg.mode, cfg.k, cfg.q) == ("none", 6, 0.1)

    @pytest.mark.parametrize("kwargs", [{"mode": "drop"}, {"k": -1}, {"k": 1.5}])
    def test_sparsing_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SparsingConfig(**kwargs)

    def test_sparsing_invalid_q(self):
        with pytest.raises(InvalidProbability):
            SparsingConfig(q=2.0)

    def test_mask_rows_need_an_entry(self):
        with pytest.raises(ValueError):
            AttentionMask(2, [[True, False], [False, False]])

    def test_scaled_matrix_shape(self):
        with pytest.raises(ValueError):
            ScaledMatrix(2, np.ones((3, 3)), 1.0)
