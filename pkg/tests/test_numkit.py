import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedep.numkit import (
    Rng,
    ensure_matrix,
    log_sum_exp,
    sample_gamma,
    sample_gamma_array,
    softmax,
)


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(123), Rng(123)
        assert np.array_equal(a.uniform(50), b.uniform(50))
        assert np.array_equal(a.normal(50), b.normal(50))

    def test_substreams_are_distinct(self):
        root = Rng(9).uniform(20)
        node0 = Rng.substream(9, 0, "train").uniform(20)
        node1 = Rng.substream(9, 1, "train").uniform(20)
        fit0 = Rng.substream(9, 0, "fit").uniform(20)
        assert not np.array_equal(node0, node1)
        assert not np.array_equal(node0, fit0)
        assert not np.array_equal(root, node0)

    def test_substream_independent_of_creation_order(self):
        first = Rng.substream(5, 3, "train").uniform(10)
        Rng.substream(5, 1, "train").uniform(1000)  # unrelated stream consumption
        second = Rng.substream(5, 3, "train").uniform(10)
        assert np.array_equal(first, second)


class TestSampleGamma:
    def test_shape_one_mean(self):
        rng = Rng(0)
        draws = sample_gamma_array(rng, 1.0, 1_000_000)
        assert abs(draws.mean() - 1.0) < 0.01

    def test_shape_five_moments(self):
        rng = Rng(1)
        draws = sample_gamma_array(rng, 5.0, 1_000_000)
        assert abs(draws.mean() - 5.0) / 5.0 < 0.01
        assert abs(draws.var() - 5.0) / 5.0 < 0.03

    def test_scalar_matches_contract(self):
        rng = Rng(2)
        draws = np.array([sample_gamma(rng, 2.5) for _ in range(200_000)])
        assert abs(draws.mean() - 2.5) / 2.5 < 0.02

    def test_deterministic_first_100(self):
        a = [sample_gamma(Rng(7, i), 1.7) for i in range(100)]
        b = [sample_gamma(Rng(7, i), 1.7) for i in range(100)]
        assert a == b

    def test_small_shape_positive(self):
        rng = Rng(3)
        draws = sample_gamma_array(rng, 0.05, 20_000)
        assert np.all(draws > 0.0)
        assert abs(draws.mean() - 0.05) / 0.05 < 0.1

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
    def test_invalid_shape_rejected(self, bad):
        with pytest.raises(ValueError):
            sample_gamma(Rng(0), bad)
        with pytest.raises(ValueError):
            sample_gamma_array(Rng(0), bad, 5)


class TestLogSumExp:
    def test_two_zeros(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_shifted_pair(self):
        assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000.0 + math.log(2.0))

    def test_singleton_identity(self):
        assert log_sum_exp([3.0]) == 3.0

    def test_no_overflow_deep_negative(self):
        assert np.isfinite(log_sum_exp([-1e6, -1e6 + 1.0]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([])

    @given(
        st.lists(st.floats(min_value=-500, max_value=500), min_size=1, max_size=20),
        st.floats(min_value=-200, max_value=200),
    )
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance(self, values, c):
        v = np.asarray(values)
        lhs = log_sum_exp(v + c)
        rhs = log_sum_exp(v) + c
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)

    def test_axis_reduction(self):
        m = np.array([[0.0, 0.0], [1.0, 1.0]])
        out = log_sum_exp(m, axis=1)
        assert out == pytest.approx([math.log(2.0), 1.0 + math.log(2.0)])


class TestSoftmax:
    @given(st.lists(st.floats(min_value=-700, max_value=700), min_size=1, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_normalized_and_bounded(self, values):
        out = softmax(np.asarray(values))
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_rows_independent(self):
        out = softmax(np.array([[1.0, 2.0], [100.0, 100.0]]), axis=1)
        assert np.allclose(out.sum(axis=1), 1.0)
        assert out[1, 0] == pytest.approx(0.5)


class TestMatrixConventions:
    def test_matmul_associativity(self):
        rng = Rng(42)
        for _ in range(20):
            a = rng.normal((4, 6))
            b = rng.normal((6, 3))
            c = rng.normal((3, 5))
            lhs = (a @ b) @ c
            rhs = a @ (b @ c)
            assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_ensure_matrix_validates(self):
        out = ensure_matrix([[1, 2], [3, 4]])
        assert out.dtype == np.float64 and out.shape == (2, 2)
        with pytest.raises(ValueError):
            ensure_matrix([1.0, 2.0])
        with pytest.raises(ValueError):
            ensure_matrix([[np.nan, 0.0]])
