from __future__ import annotations

import itertools

import numpy as np
import pytest

from mot_association.solvers import (
    BRUTE_FORCE_LIMIT,
    assignment_from_matrix,
    brute_force,
    greedy,
    hungarian,
    select_solver,
    solve_with_birth_death,
)
from mot_association.tools import EnumerationLimitError, ValidationFailure

SHAPES = list(itertools.product(range(1, 5), range(1, 5)))


@pytest.mark.parametrize("rows,cols", SHAPES)
def test_hungarian_matches_brute_force(rows, cols):
    rng = np.random.default_rng(rows * 10 + cols)
    for _ in range(1000):
        matrix = rng.normal(size=(rows, cols))
        exact = hungarian(matrix)
        reference = brute_force(matrix)
        assert len(exact.pairs) == min(rows, cols)
        assert abs(exact.objective - reference.objective) <= 1e-9


@pytest.mark.parametrize("rows,cols", SHAPES)
def test_hungarian_tie_break_matches_brute_force(rows, cols):
    rng = np.random.default_rng(100 + rows * 10 + cols)
    for _ in range(1000):
        matrix = rng.integers(0, 2, size=(rows, cols)).astype(float)
        assert hungarian(matrix).pairs == brute_force(matrix).pairs


def test_hungarian_prefers_smallest_pair_list_among_optima():
    matrix = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    assert hungarian(matrix).pairs == ((0, 0), (2, 1), (3, 2))
    assert hungarian(np.zeros((2, 2))).pairs == ((0, 0), (1, 1))


@pytest.mark.parametrize("rows,cols", [(1, 1), (2, 3), (3, 3), (3, 4), (4, 4)])
def test_hungarian_ignores_row_constants(rows, cols):
    rng = np.random.default_rng(rows * 7 + cols)
    for _ in range(200):
        matrix = rng.normal(size=(rows, cols))
        shifted = matrix + rng.uniform(-5.0, 5.0, size=(rows, 1))
        assert hungarian(shifted).pairs == hungarian(matrix).pairs == brute_force(shifted).pairs


def test_hungarian_matches_scipy_on_larger_problems():
    optimize = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(0)
    for _ in range(50):
        rows, cols = rng.integers(1, 15, size=2)
        matrix = rng.uniform(-3.0, 3.0, size=(rows, cols))
        row_index, col_index = optimize.linear_sum_assignment(matrix, maximize=True)
        assert hungarian(matrix).objective == pytest.approx(matrix[row_index, col_index].sum(), abs=1e-9)


def test_hungarian_handles_negative_weights():
    matrix = np.array([[-1.0, -5.0], [-5.0, -1.0]])
    assert hungarian(matrix).pairs == ((0, 0), (1, 1))


def test_brute_force_tie_break_is_lexicographic():
    assert brute_force(np.zeros((2, 2))).pairs == ((0, 0), (1, 1))


def test_brute_force_limit():
    with pytest.raises(EnumerationLimitError):
        brute_force(np.zeros((BRUTE_FORCE_LIMIT + 1, BRUTE_FORCE_LIMIT + 1)))


def test_greedy_is_row_order_and_can_be_suboptimal():
    matrix = np.array([[2.0, 1.9], [1.8, 0.0]])
    assert greedy(matrix).pairs == ((0, 0), (1, 1))
    assert greedy(matrix).objective < hungarian(matrix).objective


def test_assignment_from_matrix_reads_indicator():
    indicator = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert assignment_from_matrix(indicator).pairs == ((0, 1),)
    with pytest.raises(ValidationFailure):
        assignment_from_matrix(np.ones((2, 2)))


def test_solvers_reject_non_finite():
    with pytest.raises(ValidationFailure):
        hungarian(np.array([[np.inf]]))


def test_select_solver_accepts_dashes():
    assert select_solver("brute-force").name == "brute_force"
    with pytest.raises(ValidationFailure):
        select_solver("auction")


def test_birth_death_threshold_drops_weak_pairs():
    matrix = np.array([[0.9, 0.1], [0.2, 0.3]])
    result = solve_with_birth_death(matrix, 0.5)
    assert result.matches == {(0, 0)}
    assert result.deaths == {1}
    assert result.births == {1}
    result.validate(2, 2)
