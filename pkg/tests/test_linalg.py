"""Tests for the rank / null-space / conditioning primitives.

The numerical-rank oracle used here is exact: random integer matrices are
built as products of integer factors with a known inner dimension, and the
exact rank is recomputed independently by fraction-based Gaussian
elimination, so no tolerance juggling is involved in deciding what the right
answer is.
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pempc.errors import InvalidInputError
from pempc.linalg import (
    DEFAULT_RANK_RTOL,
    RankReport,
    as_matrix,
    condition_number,
    left_null_vector,
    numerical_rank,
)


def exact_rank(rows):
    """Rank over the rationals by fraction-pivoted Gaussian elimination."""
    mat = [[Fraction(v) for v in row] for row in rows]
    n_rows = len(mat)
    n_cols = len(mat[0])
    rank = 0
    row = 0
    for col in range(n_cols):
        pivot = next((r for r in range(row, n_rows) if mat[r][col] != 0), None)
        if pivot is None:
            continue
        mat[row], mat[pivot] = mat[pivot], mat[row]
        for r in range(row + 1, n_rows):
            factor = mat[r][col] / mat[row][col]
            mat[r] = [a - factor * b for a, b in zip(mat[r], mat[row])]
        rank += 1
        row += 1
        if row == n_rows:
            break
    return rank


class TestAsMatrix:
    def test_passthrough(self):
        m = as_matrix([[1.0, 2.0], [3.0, 4.0]])
        assert m.shape == (2, 2)
        assert m.dtype == np.float64

    def test_rejects_1d(self):
        with pytest.raises(InvalidInputError):
            as_matrix([1.0, 2.0])

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            as_matrix(np.zeros((0, 3)))

    def test_rejects_nan_and_names_argument(self):
        with pytest.raises(InvalidInputError, match="weights"):
            as_matrix([[np.nan]], name="weights")

    def test_rejects_inf(self):
        with pytest.raises(InvalidInputError):
            as_matrix([[1.0, np.inf]])

    def test_error_is_value_error(self):
        # Validation failures must be catchable as plain ValueError.
        with pytest.raises(ValueError):
            as_matrix([1.0])


class TestNumericalRank:
    def test_identity(self):
        report = numerical_rank(np.eye(2))
        assert report.numerical_rank == 2
        assert np.allclose(report.singular_values, [1.0, 1.0])

    def test_repeated_rows(self):
        report = numerical_rank([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
        assert report.numerical_rank == 1

    def test_full_rank_2x3(self):
        # 2x2 minor determinant 1*3 - 2*2 = -1, so the rank is 2.
        report = numerical_rank([[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]])
        assert report.numerical_rank == 2

    def test_zero_matrix(self):
        report = numerical_rank(np.zeros((3, 2)))
        assert report.numerical_rank == 0
        assert report.tolerance_used == DEFAULT_RANK_RTOL

    def test_report_fields(self):
        report = numerical_rank(np.diag([4.0, 2.0]))
        assert isinstance(report, RankReport)
        assert report.singular_values.shape == (2,)
        assert report.singular_values[0] >= report.singular_values[1]
        assert report.tolerance_used == pytest.approx(4.0 * DEFAULT_RANK_RTOL)

    def test_rel_tol_validated(self):
        with pytest.raises(InvalidInputError):
            numerical_rank(np.eye(2), rel_tol=0.0)
        with pytest.raises(InvalidInputError):
            numerical_rank(np.eye(2), rel_tol=1.5)

    def test_tolerance_moves_the_verdict(self):
        m = np.diag([1.0, 1e-6])
        assert numerical_rank(m, rel_tol=1e-9).numerical_rank == 2
        assert numerical_rank(m, rel_tol=1e-3).numerical_rank == 1

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        m = rng.normal(size=(6, 9))
        a = numerical_rank(m)
        b = numerical_rank(m)
        assert a.numerical_rank == b.numerical_rank
        assert np.array_equal(a.singular_values, b.singular_values)

    @given(
        rows=st.integers(min_value=1, max_value=6),
        cols=st.integers(min_value=1, max_value=6),
        inner=st.integers(min_value=0, max_value=4),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_exact_rank_on_integer_products(self, rows, cols, inner, seed):
        rng = np.random.default_rng(seed)
        if inner == 0:
            m = np.zeros((rows, cols))
        else:
            left = rng.integers(-4, 5, size=(rows, inner))
            right = rng.integers(-4, 5, size=(inner, cols))
            m = (left @ right).astype(float)
        expected = exact_rank(m.tolist())
        assert numerical_rank(m).numerical_rank == expected


class TestLeftNullVector:
    def test_tall_single_column(self):
        # Solving z1 + 2 z2 = 0 gives z prop (-2, 1); the sign convention
        # makes the largest-magnitude entry positive, so z = (2, -1)/sqrt(5).
        z, sigma_min = left_null_vector([[1.0], [2.0]])
        assert sigma_min == 0.0
        assert np.allclose(z, np.array([2.0, -1.0]) / np.sqrt(5.0))

    def test_identity_has_no_null_direction(self):
        z, sigma_min = left_null_vector(np.eye(2))
        assert sigma_min == pytest.approx(1.0)
        assert np.linalg.norm(np.eye(2).T @ z) > 0.5

    def test_zero_row(self):
        z, sigma_min = left_null_vector([[1.0, 0.0], [0.0, 0.0]])
        assert sigma_min == 0.0
        assert np.allclose(z, [0.0, 1.0])

    def test_unit_norm_and_sign(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = rng.normal(size=(5, rng.integers(1, 8)))
            z, _ = left_null_vector(m)
            assert np.linalg.norm(z) == pytest.approx(1.0)
            assert z[int(np.argmax(np.abs(z)))] > 0.0

    def test_annihilates_row_deficient_matrix(self):
        rng = np.random.default_rng(11)
        base = rng.normal(size=(3, 6))
        # Fourth row is a combination of the others: a left null vector exists.
        m = np.vstack([base, base[0] - 2.0 * base[2]])
        z, sigma_min = left_null_vector(m)
        assert sigma_min == pytest.approx(0.0, abs=1e-10)
        assert np.linalg.norm(m.T @ z) < 1e-10

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(5)
        m = rng.normal(size=(7, 4))
        z1, s1 = left_null_vector(m)
        z2, s2 = left_null_vector(m)
        assert np.array_equal(z1, z2)
        assert s1 == s2


class TestConditionNumber:
    def test_identity(self):
        assert condition_number(np.eye(3)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert condition_number(np.diag([10.0, 0.1])) == pytest.approx(100.0)

    def test_singular_is_infinite(self):
        assert condition_number([[1.0, 1.0], [1.0, 1.0]]) == float("inf")

    def test_rejects_nonsquare(self):
        with pytest.raises(InvalidInputError):
            condition_number(np.ones((2, 3)))

    def test_orthogonal_is_one(self):
        theta = 0.3
        q = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        assert condition_number(q) == pytest.approx(1.0)
