import math

import numpy as np
import pytest

from kvstyle.numerics import DTYPE, additive_mask, as_matrix, masked_softmax, matmul


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=DTYPE)
    assert np.array_equal(matmul(np.eye(2, dtype=DTYPE), m), m)
    assert np.array_equal(matmul(m, np.zeros((2, 1), dtype=DTYPE)), np.zeros((2, 1)))
    assert np.array_equal(matmul(m, np.ones((2, 1), dtype=DTYPE)), np.array([[3.0], [7.0]]))
    assert matmul(m, m).dtype == DTYPE


def test_matmul_rejects_mismatch_and_non_finite():
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        matmul(np.array([[np.nan]]), np.ones((1, 1)))


def test_matmul_is_reproducible():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(7, 5)).astype(DTYPE)
    b = rng.normal(size=(5, 9)).astype(DTYPE)
    assert np.array_equal(matmul(a, b), matmul(a, b))
    # a row alone matches the same row inside the batch
    assert np.array_equal(matmul(a[2], b), matmul(a, b)[2])


def test_masked_softmax_examples():
    np.testing.assert_allclose(masked_softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-6)
    out = masked_softmax(np.array([5.0, -1.0]), np.array([True, False]))
    assert out[0] == 1.0
    assert out[1] == 0.0
    np.testing.assert_allclose(masked_softmax(np.array([math.log(2.0), 0.0])), [2 / 3, 1 / 3], atol=1e-6)


def test_masked_softmax_rows_sum_to_one_and_blocked_are_zero():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(5, 8)) * 10
    allowed = rng.random((5, 8)) > 0.4
    allowed[:, 0] = True
    weights = masked_softmax(scores, allowed)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(weights[~allowed] == 0.0)
    assert np.all(weights[allowed] > 0.0)


def test_masked_softmax_rejects_fully_blocked_row():
    with pytest.raises(ValueError, match="blocks every position"):
        masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))


def test_masked_softmax_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(3), np.ones(2, dtype=bool))


def test_additive_mask_values():
    mask = additive_mask(np.array([True, False]))
    assert mask[0] == 0.0
    assert mask[1] == -np.inf


def test_as_matrix_validates():
    with pytest.raises(ValueError, match="2-D"):
        as_matrix(np.ones(3))
    with pytest.raises(ValueError, match="non-finite"):
        as_matrix([[np.inf]])
