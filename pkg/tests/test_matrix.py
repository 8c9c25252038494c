import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hfac.matrix import (
    as_matrix,
    broadcast_cols,
    broadcast_rows,
    clip_update,
    col_mean,
    col_sum_sq,
    factored_second_moment,
    frobenius,
    outer,
    rms,
    row_mean,
    row_sum_sq,
    sign,
)

G = np.array([[1.0, 3.0], [2.0, 4.0]])

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
matrices = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(lambda s: arrays(np.float64, s, elements=finite))


def test_row_mean():
    np.testing.assert_array_equal(row_mean(G), [2.0, 3.0])
    np.testing.assert_array_equal(row_mean(np.zeros((3, 4))), np.zeros(3))
    np.testing.assert_array_equal(row_mean([[5.0]]), [5.0])


def test_col_mean():
    np.testing.assert_array_equal(col_mean(G), [1.5, 3.5])
    np.testing.assert_array_equal(col_mean(np.zeros((3, 4))), np.zeros(4))
    np.testing.assert_array_equal(col_mean([[5.0]]), [5.0])


def test_row_sum_sq():
    np.testing.assert_array_equal(row_sum_sq(np.ones((2, 2))), [2.0, 2.0])
    np.testing.assert_array_equal(row_sum_sq([[3.0, 4.0]]), [25.0])
    np.testing.assert_allclose(row_sum_sq(np.zeros((2, 3)), 1e-30), [3e-30, 3e-30], rtol=1e-15)


def test_col_sum_sq():
    np.testing.assert_array_equal(col_sum_sq(np.ones((2, 2))), [2.0, 2.0])
    np.testing.assert_array_equal(col_sum_sq([[3.0], [4.0]]), [25.0])
    np.testing.assert_allclose(col_sum_sq(np.zeros((2, 3)), 1e-30), [2e-30] * 3, rtol=1e-15)


def test_negative_eps_rejected():
    with pytest.raises(ValueError):
        row_sum_sq(G, -1.0)
    with pytest.raises(ValueError):
        col_sum_sq(G, -1.0)


def test_rms():
    assert rms([[3.0, 4.0], [0.0, 0.0]]) == 2.5
    assert rms(np.zeros((2, 2))) == 0.0
    assert rms([[-7.0]]) == 7.0


def test_clip_update():
    np.testing.assert_allclose(clip_update([[3.0, 4.0], [0.0, 0.0]], 1.0), [[1.2, 1.6], [0.0, 0.0]], rtol=1e-15)
    np.testing.assert_array_equal(clip_update([[0.5]], 1.0), [[0.5]])
    np.testing.assert_array_equal(clip_update(np.zeros((2, 2)), 1.0), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        clip_update(G, 0.0)


def test_clip_does_not_alias_input():
    U = np.array([[0.1]])
    out = clip_update(U)
    out[0, 0] = 9.0
    assert U[0, 0] == 0.1


def test_sign():
    np.testing.assert_array_equal(sign([[2.0, -3.0], [0.0, 1.0]]), [[1.0, -1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(sign(np.zeros((2, 2))), np.zeros((2, 2)))
    np.testing.assert_array_equal(sign([[-1e-300]]), [[-1.0]])


def test_broadcast_and_outer():
    u, v = np.array([1.0, 2.0]), np.array([3.0, 4.0, 5.0])
    np.testing.assert_array_equal(broadcast_rows(u, 3), np.outer(u, np.ones(3)))
    np.testing.assert_array_equal(broadcast_cols(v, 2), np.outer(np.ones(2), v))
    np.testing.assert_array_equal(outer(u, v), [[3, 4, 5], [6, 8, 10]])
    assert frobenius([[3.0, 4.0]]) == 5.0


def test_factored_second_moment_ones():
    r = row_sum_sq(np.ones((2, 2)))
    s = col_sum_sq(np.ones((2, 2)))
    np.testing.assert_array_equal(factored_second_moment(r, s), np.ones((2, 2)))


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        as_matrix(np.zeros(3))
    with pytest.raises(ValueError):
        as_matrix(np.zeros((0, 2)))


@given(matrices)
def test_mean_conservation(A):
    m, n = A.shape
    scale = max(1.0, np.abs(A).sum())
    assert abs(row_mean(A).sum() * n - A.sum()) <= 1e-12 * scale
    assert abs(col_mean(A).sum() * m - A.sum()) <= 1e-12 * scale


@given(matrices)
def test_sum_sq_symmetry(A):
    fro2 = float(np.sum(A * A))
    tol = 1e-12 * max(1.0, fro2)
    assert abs(row_sum_sq(A).sum() - fro2) <= tol
    assert abs(col_sum_sq(A).sum() - fro2) <= tol


@given(matrices, st.floats(1e-3, 1e3))
def test_clip_bounds_rms(A, d):
    assert rms(clip_update(A, d)) <= d + 1e-12


@settings(max_examples=200)
@given(matrices, st.floats(1e-3, 1e3))
def test_clip_idempotent(A, d):
    once = clip_update(A, d)
    np.testing.assert_array_equal(clip_update(once, d), once)


@given(matrices, st.floats(1e-6, 1e6))
def test_sign_scale_invariant(A, c):
    # c * A may underflow entries to zero; restrict to entries that survive.
    scaled = c * A
    mask = scaled != 0
    np.testing.assert_array_equal(sign(scaled)[mask], sign(A)[mask])
