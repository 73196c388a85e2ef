import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prism_ood.errors import DimensionError, NeumannGuardError, NonFiniteError, SingularMatrixError
from prism_ood.numerics import (
    blockwise_softmax,
    column_stochastic_backward,
    column_stochastic_from_logits,
    exact_inverse,
    exact_inverse_backward,
    invert,
    neumann_inverse,
    neumann_inverse_backward,
    softmax,
)
from prism_ood.training import central_difference

finite = st.floats(-50, 50, allow_nan=False)


class TestSoftmax:
    def test_examples(self):
        np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(softmax([math.log(2), 0]), [2 / 3, 1 / 3], atol=1e-15)
        np.testing.assert_allclose(softmax([5, 5, 5]), [1 / 3] * 3, atol=1e-15)

    def test_errors(self):
        with pytest.raises(DimensionError):
            softmax([])
        with pytest.raises(NonFiniteError):
            softmax([0.0, np.inf])
        with pytest.raises(NonFiniteError):
            softmax([np.nan, 1.0])

    def test_large_inputs_do_not_overflow(self):
        s = softmax([1000.0, 999.0])
        assert np.all(np.isfinite(s))
        assert abs(s.sum() - 1) < 1e-12

    @given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(-100, 100))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-12, rtol=0)

    @given(arrays(np.float64, st.integers(1, 12), elements=finite))
    def test_on_simplex(self, v):
        s = softmax(v)
        assert np.all(s >= 0)
        assert abs(s.sum() - 1) < 1e-9

    @given(arrays(np.float64, st.integers(2, 8), elements=finite), st.data())
    def test_monotone(self, v, data):
        i = data.draw(st.integers(0, v.size - 1))
        bumped = v.copy()
        bumped[i] += 1.0
        assert softmax(bumped)[i] >= softmax(v)[i]


class TestBlockwiseSoftmax:
    def test_examples(self):
        np.testing.assert_allclose(blockwise_softmax([0, 0, 0, 0], 2, 2), [0.5] * 4)
        np.testing.assert_allclose(blockwise_softmax([math.log(2), 0, 0, 0], 2, 2),
                                   [2 / 3, 1 / 3, 0.5, 0.5], atol=1e-15)
        with pytest.raises(DimensionError):
            blockwise_softmax(np.zeros(5), 2, 3)

    def test_batch_matches_rows(self, rng):
        V = rng.normal(size=(5, 12))
        out = blockwise_softmax(V, 3, 4)
        for row, o in zip(V, out):
            np.testing.assert_array_equal(o, blockwise_softmax(row, 3, 4))
        np.testing.assert_allclose(out.reshape(5, 3, 4).sum(-1), 1.0, atol=1e-12)


class TestColumnStochastic:
    def test_examples(self):
        np.testing.assert_allclose(column_stochastic_from_logits(np.zeros((2, 2))), [[0.5, 0.5], [0.5, 0.5]])
        B = column_stochastic_from_logits([[math.log(3), 0], [0, 0]])
        np.testing.assert_allclose(B[:, 0], [0.75, 0.25], atol=1e-15)

    def test_non_square(self):
        with pytest.raises(DimensionError):
            column_stochastic_from_logits(np.zeros((2, 3)))

    @given(arrays(np.float64, (4, 4), elements=st.floats(-30, 30)))
    def test_columns_sum_to_one(self, theta):
        B = column_stochastic_from_logits(theta)
        # oracle: plain summation of each column
        for j in range(4):
            assert abs(sum(B[i, j] for i in range(4)) - 1.0) < 1e-9
        assert np.all(B > 0)

    def test_backward_matches_finite_differences(self, rng):
        theta = rng.normal(size=(3, 3))
        G = rng.normal(size=(3, 3))
        analytic = column_stochastic_backward(column_stochastic_from_logits(theta), G)
        numeric = central_difference(lambda: float(np.sum(G * column_stochastic_from_logits(theta))), theta)
        np.testing.assert_allclose(analytic.ravel(), numeric, atol=1e-9)


class TestNeumann:
    def test_identity(self):
        for T in (0, 1, 5, 16):
            np.testing.assert_array_equal(neumann_inverse(np.eye(3), T), np.eye(3))

    def test_order_zero(self):
        B = np.array([[0.9, 0.1], [0.1, 0.9]])
        np.testing.assert_array_equal(neumann_inverse(B, 0), np.eye(2))

    def test_two_by_two(self):
        # exact inverse of [[0.9,0.1],[0.1,0.9]], det 0.8
        expected = np.array([[0.9, -0.1], [-0.1, 0.9]]) / 0.8
        np.testing.assert_allclose(expected, [[1.125, -0.125], [-0.125, 1.125]], atol=1e-15)
        B = np.array([[0.9, 0.1], [0.1, 0.9]])
        assert np.max(np.abs(neumann_inverse(B, 30) - expected)) < 1e-6

    def test_guard(self):
        B = np.array([[0.4, 0.6], [0.6, 0.4]])  # ||I - B||_1 = 1.2
        with pytest.raises(NeumannGuardError):
            neumann_inverse(B)
        V, used = invert(B, "neumann")
        assert used == "exact"
        np.testing.assert_allclose(V @ B, np.eye(2), atol=1e-12)

    def test_error_monotone_in_order(self, rng):
        for _ in range(20):
            K = rng.integers(2, 7)
            C = rng.uniform(-1, 1, size=(K, K))
            C *= rng.uniform(0.1, 0.9) / np.abs(C).sum(axis=0).max()
            B = np.eye(K) - C
            errs = [np.abs(neumann_inverse(B, T) @ B - np.eye(K)).max() for T in range(0, 25)]
            assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
            assert errs[-1] < errs[0]

    def test_backward_matches_finite_differences(self, rng):
        B = np.eye(3) - 0.2 * rng.uniform(-1, 1, size=(3, 3))
        G = rng.normal(size=(3, 3))
        for T in (0, 1, 4, 16):
            analytic = neumann_inverse_backward(B, T, G)
            numeric = central_difference(lambda: float(np.sum(G * neumann_inverse(B, T))), B)
            np.testing.assert_allclose(analytic.ravel(), numeric, atol=1e-8)


class TestExactInverse:
    def test_examples(self):
        np.testing.assert_array_equal(exact_inverse(np.eye(4)), np.eye(4))
        np.testing.assert_array_equal(exact_inverse([[2.0, 0], [0, 4.0]]), [[0.5, 0], [0, 0.25]])
        with pytest.raises(SingularMatrixError):
            exact_inverse([[1.0, 1.0], [1.0, 1.0]])

    def test_non_square(self):
        with pytest.raises(DimensionError):
            exact_inverse(np.zeros((2, 3)))

    def test_round_trip_random(self, rng):
        for _ in range(100):
            K = int(rng.integers(1, 11))
            B = rng.normal(size=(K, K)) + K * np.eye(K)
            assert np.abs(B @ exact_inverse(B) - np.eye(K)).max() < 1e-8

    def test_needs_pivoting(self):
        B = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(exact_inverse(B), B)

    def test_backward_matches_finite_differences(self, rng):
        B = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        G = rng.normal(size=(3, 3))
        analytic = exact_inverse_backward(exact_inverse(B), G)
        numeric = central_difference(lambda: float(np.sum(G * exact_inverse(B))), B)
        np.testing.assert_allclose(analytic.ravel(), numeric, atol=1e-8)
