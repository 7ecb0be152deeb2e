from __future__ import annotations

import numpy as np
import pytest

from mot_association.autodiff import Tensor
from mot_association.core import AssociationProblem, interpret_association
from mot_association.gnn import GnnParameters, feature_update, gnn_forward
from mot_association.tools import ValidationFailure

NODE_DIM = 6
WIDTH = 5


def _problem(rng: np.random.Generator, rows: int, cols: int) -> AssociationProblem:
    S = Tensor(rng.normal(size=(rows, cols)))
    return AssociationProblem(
        S=S,
        A=S,
        M=S,
        F_M=Tensor(rng.normal(size=(rows, NODE_DIM))),
        F_N=Tensor(rng.normal(size=(cols, NODE_DIM))),
    )


def _permuted(problem: AssociationProblem, rows: np.ndarray, cols: np.ndarray) -> AssociationProblem:
    S = Tensor(problem.S.data[np.ix_(rows, cols)])
    return AssociationProblem(
        S=S, A=S, M=S, F_M=Tensor(problem.F_M.data[rows]), F_N=Tensor(problem.F_N.data[cols])
    )


def test_output_shape_follows_problem():
    params = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for rows, cols in [(1, 1), (1, 6), (6, 1), (3, 4)]:
        assert gnn_forward(_problem(rng, rows, cols), params).shape == (rows, cols)


def test_permutation_equivariance():
    params = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0))
    rng = np.random.default_rng(42)
    for _ in range(100):
        rows, cols = (int(value) for value in rng.integers(1, 8, size=2))
        problem = _problem(rng, rows, cols)
        row_order, col_order = rng.permutation(rows), rng.permutation(cols)
        base = gnn_forward(problem, params).data
        permuted = gnn_forward(_permuted(problem, row_order, col_order), params).data
        np.testing.assert_allclose(permuted, base[np.ix_(row_order, col_order)], rtol=0, atol=1e-12)

        # all-zero updated features give identical rows, and ties are order dependent
        if np.unique(base).size != base.size:
            continue
        interpreted = interpret_association(base)
        permuted_matches = interpret_association(base[np.ix_(row_order, col_order)]).matches
        inverse_rows, inverse_cols = np.argsort(row_order), np.argsort(col_order)
        assert {(int(inverse_rows[i]), int(inverse_cols[j])) for i, j in interpreted.matches} == set(
            permuted_matches
        )


def test_updates_read_pre_update_features():
    params = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0))
    rng = np.random.default_rng(3)
    problem = _problem(rng, 2, 3)
    updated_m, updated_n = feature_update(problem.S, problem.F_M, problem.F_N, params)
    softmax_t = np.exp(problem.S.data.T) / np.exp(problem.S.data.T).sum(axis=1, keepdims=True)
    expected_n = np.maximum(softmax_t @ problem.F_M.data @ params.weight.data, 0.0)
    np.testing.assert_allclose(updated_n.data, expected_n, atol=1e-12)
    assert updated_m.shape == (2, WIDTH)


def test_shared_weight_is_one_parameter():
    shared = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0))
    separate = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0), shared=False)
    assert shared.detection_weight is shared.weight
    assert "gnn.detection_weight" not in shared.named_parameters()
    assert "gnn.detection_weight" in separate.named_parameters()
    assert len(separate.parameters()) == len(shared.parameters()) + 1


def test_feature_width_mismatch():
    params = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0))
    S = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValidationFailure):
        feature_update(S, Tensor(np.zeros((2, NODE_DIM + 1))), Tensor(np.zeros((2, NODE_DIM + 1))), params)


def test_uniform_affinity_averages_the_other_side():
    params = GnnParameters(NODE_DIM, WIDTH, 7, np.random.default_rng(0))
    rng = np.random.default_rng(8)
    F_M = Tensor(rng.normal(size=(3, NODE_DIM)))
    F_N = Tensor(rng.normal(size=(4, NODE_DIM)))
    updated_m, _ = feature_update(Tensor(np.full((3, 4), 0.7)), F_M, F_N, params)
    expected = np.maximum(F_N.data.mean(axis=0) @ params.weight.data, 0.0)
    for row in updated_m.data:
        np.testing.assert_allclose(row, expected, atol=1e-12)
