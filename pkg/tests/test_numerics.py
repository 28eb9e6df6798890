"""Tests for the dense-array kernel."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capground import numerics
from capground.errors import DegenerateVector, InvalidArgument, InvalidRect

import oracles

# softmax([1, 2, 3]) evaluated with mpmath at 50 digits, rounded to float64
SOFTMAX_123 = [0.09003057317038046, 0.2447284710547977, 0.6652409557748219]
# cosine([1, 2], [3, 4]) = 11 / (sqrt(5) * 5)
COSINE_12_34 = 0.9838699100999074


class TestSoftmax:
    def test_two_zeros(self):
        assert np.allclose(numerics.softmax([0.0, 0.0]), [0.5, 0.5])

    @pytest.mark.parametrize("x", [-3.0, 0.0, 1e4, -1e4])
    def test_shift_invariance_constant(self, x):
        assert np.allclose(numerics.softmax([x] * 4), [0.25] * 4)

    def test_high_precision_reference(self):
        out = numerics.softmax([1.0, 2.0, 3.0])
        assert np.allclose(out, SOFTMAX_123, rtol=0, atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(InvalidArgument):
            numerics.softmax([])

    def test_nan_raises(self):
        with pytest.raises(InvalidArgument):
            numerics.softmax([1.0, np.nan])

    def test_order_preserving(self):
        out = numerics.softmax([3.0, -1.0, 2.0])
        assert out[0] > out[2] > out[1]

    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1,
                    max_size=20))
    @settings(max_examples=100, deadline=None)
    def test_probability_vector(self, values):
        out = numerics.softmax(values)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-9

    def test_matches_naive_formula(self):
        v = [0.3, -1.2, 2.5, 0.0]
        assert np.allclose(numerics.softmax(v), oracles.brute_softmax(v))


class TestCosine:
    def test_identity(self):
        assert numerics.cosine([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert numerics.cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_reference_value(self):
        assert abs(numerics.cosine([1, 2], [3, 4]) - COSINE_12_34) < 1e-15

    def test_zero_vector_raises(self):
        with pytest.raises(DegenerateVector):
            numerics.cosine([0.0, 0.0], [1.0, 0.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(InvalidArgument):
            numerics.cosine([1.0, 2.0], [1.0, 2.0, 3.0])

    @given(st.lists(st.floats(min_value=-10, max_value=10), min_size=2,
                    max_size=8),
           st.floats(min_value=0.1, max_value=100),
           st.floats(min_value=0.1, max_value=100))
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_scale_invariant(self, u, a, b):
        v = [x + 0.5 for x in u]       # deterministic second vector
        u = np.array(u) + 1.0          # keep norms away from zero
        v = np.array(v)
        c1 = numerics.cosine(u, v)
        assert abs(c1 - numerics.cosine(v, u)) <= 1e-9
        assert abs(c1 - numerics.cosine(a * u, b * v)) <= 1e-9

    def test_result_clipped_to_unit_interval(self):
        v = np.array([1e-6, 1.0])
        assert -1.0 <= numerics.cosine(v, v) <= 1.0


class TestIntegralImage:
    def test_all_ones_full_rect(self):
        ii = numerics.integral(np.ones((4, 4)))
        assert ii.rect_sum(0, 0, 4, 4) == 16.0

    def test_small_full_sum(self):
        ii = numerics.integral([[1.0, 2.0], [3.0, 4.0]])
        assert ii.rect_sum(0, 0, 2, 2) == 10.0

    def test_zero_border(self):
        ii = numerics.integral(np.arange(6.0).reshape(2, 3))
        assert np.all(ii.table[0, :] == 0)
        assert np.all(ii.table[:, 0] == 0)

    def test_monotone_for_nonnegative_source(self):
        rng = np.random.default_rng(0)
        ii = numerics.integral(rng.uniform(0, 1, (5, 7)))
        assert np.all(np.diff(ii.table, axis=0) >= 0)
        assert np.all(np.diff(ii.table, axis=1) >= 0)

    def test_random_rects_match_brute_force(self):
        rng = np.random.default_rng(1)
        src = rng.normal(size=(16, 16))
        ii = numerics.integral(src)
        for _ in range(500):
            r0, c0 = rng.integers(0, 16, 2)
            r1 = rng.integers(r0 + 1, 17)
            c1 = rng.integers(c0 + 1, 17)
            want = oracles.brute_rect_sum(src, r0, c0, r1, c1)
            got = float(ii.rect_sum(r0, c0, r1, c1))
            assert abs(got - want) <= 1e-6 * max(1.0, abs(want))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidArgument):
            numerics.integral([[1.0, np.inf]])


class TestRectMean:
    def test_constant_map(self):
        ii = numerics.integral(np.full((6, 6), 0.5))
        assert abs(ii.rect_mean(1, 2, 4, 5) - 0.5) < 1e-12

    def test_full_rect_mean(self):
        ii = numerics.integral([[1.0, 2.0], [3.0, 4.0]])
        assert ii.rect_mean(0, 0, 2, 2) == 2.5

    def test_wrapper_function(self):
        ii = numerics.integral([[1.0, 2.0], [3.0, 4.0]])
        assert numerics.rect_mean(ii, (0, 0, 2, 2)) == 2.5

    def test_random_rects_match_brute_force(self):
        rng = np.random.default_rng(2)
        src = rng.normal(size=(9, 11))
        ii = numerics.integral(src)
        for _ in range(200):
            r0 = rng.integers(0, 9)
            c0 = rng.integers(0, 11)
            r1 = rng.integers(r0 + 1, 10)
            c1 = rng.integers(c0 + 1, 12)
            want = oracles.brute_rect_mean(src, r0, c0, r1, c1)
            assert abs(ii.rect_mean(r0, c0, r1, c1) - want) \
                <= 1e-6 * max(1.0, abs(want))

    @pytest.mark.parametrize("rect", [(0, 0, 0, 2), (1, 1, 1, 1),
                                      (0, 0, 3, 2), (-1, 0, 2, 2),
                                      (0, 2, 2, 1)])
    def test_degenerate_rects_raise(self, rect):
        ii = numerics.integral([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(InvalidRect):
            ii.rect_mean(*rect)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        src = rng.normal(size=(8, 8))
        ii = numerics.integral(src)
        r0 = np.array([0, 2, 5])
        c0 = np.array([1, 0, 3])
        r1 = np.array([4, 8, 6])
        c1 = np.array([2, 7, 8])
        batch = ii.rect_mean_batch(r0, c0, r1, c1)
        for k in range(3):
            assert abs(batch[k] - ii.rect_mean(r0[k], c0[k], r1[k], c1[k])) \
                < 1e-12


class TestResizeBilinear:
    def test_constant_preserved(self):
        out = numerics.resize_bilinear(np.full((7, 7), 3.0), 28, 28)
        assert out.shape == (28, 28)
        assert np.allclose(out, 3.0)

    def test_identity_resize(self):
        src = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(numerics.resize_bilinear(src, 2, 2), src)

    def test_linear_ramp(self):
        src = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = numerics.resize_bilinear(src, 4, 4)
        expected_row = np.array([0.0, 1 / 3, 2 / 3, 1.0])
        for r in range(4):
            assert np.allclose(out[r], expected_row)

    def test_corner_alignment(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(5, 6))
        out = numerics.resize_bilinear(src, 13, 17)
        assert out[0, 0] == src[0, 0]
        assert out[0, -1] == src[0, -1]
        assert out[-1, 0] == src[-1, 0]
        assert out[-1, -1] == src[-1, -1]

    def test_zero_target_raises(self):
        with pytest.raises(InvalidArgument):
            numerics.resize_bilinear(np.ones((3, 3)), 0, 4)

    def test_single_output_pixel(self):
        out = numerics.resize_bilinear(np.array([[1.0, 2.0], [3.0, 4.0]]), 1, 1)
        assert out.shape == (1, 1)
        assert out[0, 0] == 1.0   # corner-aligned: maps to the origin corner


class TestGaussianSmooth:
    def test_constant_preserved(self):
        out = numerics.gaussian_smooth(np.full((9, 9), 2.5), 7)
        assert np.allclose(out, 2.5)

    def test_kernel_one_is_identity(self):
        rng = np.random.default_rng(5)
        src = rng.normal(size=(6, 6))
        assert np.allclose(numerics.gaussian_smooth(src, 1), src)

    def test_impulse_reproduces_kernel(self):
        src = np.zeros((15, 15))
        src[7, 7] = 1.0
        k = numerics.gaussian_kernel(5)
        out = numerics.gaussian_smooth(src, 5)
        assert np.allclose(out[5:10, 5:10], np.outer(k, k), atol=1e-12)

    def test_separable_equals_dense_convolution(self):
        rng = np.random.default_rng(6)
        src = rng.normal(size=(10, 12))
        for ksize in (2, 3, 4, 7):
            k = numerics.gaussian_kernel(ksize)
            want = oracles.dense_convolve2d(src, np.outer(k, k))
            got = numerics.gaussian_smooth(src, ksize)
            assert np.allclose(got, want, atol=1e-10), f"kernel {ksize}"

    def test_sum_approximately_preserved(self):
        rng = np.random.default_rng(7)
        src = rng.uniform(0, 1, (20, 20))
        out = numerics.gaussian_smooth(src, 9)
        assert abs(out.sum() - src.sum()) <= 0.01 * abs(src.sum())

    def test_nonnegative_composition(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(0, 5, (6, 6))
        out = numerics.gaussian_smooth(numerics.resize_bilinear(src, 24, 24), 5)
        assert np.all(out >= 0)

    def test_kernel_normalized(self):
        for ksize in range(1, 40):
            assert abs(numerics.gaussian_kernel(ksize).sum() - 1.0) < 1e-12

    def test_bad_kernel_size(self):
        with pytest.raises(InvalidArgument):
            numerics.gaussian_kernel(0)
