from __future__ import annotations

import math

import numpy as np
import pytest

from mot_association.autodiff import Parameter, Tape, Tensor, scale, tanh
from mot_association.core import build_ground_truth
from mot_association.losses import (
    assembled_loss,
    bd_loss,
    bd_mask,
    element_loss,
    matrix_loss,
    o2o_loss,
)
from mot_association.schemas import LossConfig
from mot_association.tools import ValidationFailure

LOG2 = math.log(2.0)


def _naive_element_loss(logits: np.ndarray, target: np.ndarray, weight: float) -> float:
    total = 0.0
    for y, t in zip(logits.ravel(), target.ravel()):
        p = 1.0 / (1.0 + math.exp(-y))
        total += -weight * t * math.log(p) - (1.0 - t) * math.log(1.0 - p)
    return total


class TestUnitValues:
    def test_element_loss_of_negative_cell(self):
        gt = build_ground_truth([], 1, 1)
        assert element_loss(Tensor(np.zeros((1, 1))), gt).item() == pytest.approx(LOG2, abs=1e-9)

    def test_element_loss_of_positive_cell(self):
        gt = build_ground_truth([(0, 0)], 1, 1)
        value = element_loss(Tensor(np.zeros((1, 1))), gt, positive_weight=25.0).item()
        assert value == pytest.approx(25.0 * LOG2, abs=1e-9)

    def test_o2o_on_uniform_row(self):
        gt = build_ground_truth([(0, 0)], 1, 2)
        assert o2o_loss(Tensor(np.zeros((1, 2))), gt).item() == pytest.approx(LOG2, abs=1e-9)

    def test_bd_on_single_death_row(self):
        gt = build_ground_truth([], 1, 1)
        assert bd_loss(Tensor(np.zeros((1, 1))), gt).item() == pytest.approx(0.25, abs=1e-9)


def test_element_loss_matches_naive_formula():
    rng = np.random.default_rng(0)
    for _ in range(20):
        rows, cols = rng.integers(1, 6, size=2)
        logits = rng.normal(scale=3.0, size=(rows, cols))
        k = int(rng.integers(0, min(rows, cols) + 1))
        gt = build_ground_truth(zip(rng.permutation(rows)[:k].tolist(), rng.permutation(cols)[:k].tolist()), rows, cols)
        expected = _naive_element_loss(logits, gt.as_float(), 25.0)
        assert element_loss(Tensor(logits), gt).item() == pytest.approx(expected, rel=1e-9)


def test_element_loss_is_finite_for_extreme_logits():
    gt = build_ground_truth([(0, 0)], 1, 2)
    value = element_loss(Tensor(np.array([[-800.0, 800.0]])), gt).item()
    assert math.isfinite(value)
    assert value == pytest.approx(25.0 * 800.0 + 800.0)


def test_o2o_ignores_unmatched_rows():
    gt = build_ground_truth([(1, 0)], 2, 2)
    logits = np.array([[50.0, -50.0], [0.0, 0.0]])
    assert o2o_loss(Tensor(logits), gt).item() == pytest.approx(LOG2)
    assert o2o_loss(Tensor(logits), build_ground_truth([], 2, 2)).item() == 0.0


def test_o2o_columns_adds_column_term():
    gt = build_ground_truth([(0, 0)], 2, 1)
    logits = Tensor(np.zeros((2, 1)))
    assert o2o_loss(logits, gt).item() == pytest.approx(0.0)
    assert o2o_loss(logits, gt, columns=True).item() == pytest.approx(LOG2)


def test_bd_mask_modes():
    gt = build_ground_truth([(0, 0)], 2, 3)
    np.testing.assert_array_equal(bd_mask(gt, "exclusive"), [[0, 0, 0], [0, 1, 1]])
    np.testing.assert_array_equal(bd_mask(gt, "full"), [[0, 1, 1], [1, 2, 2]])
    with pytest.raises(ValidationFailure):
        bd_mask(gt, "sideways")


def test_bd_loss_is_zero_without_birth_or_death():
    gt = build_ground_truth([(0, 1), (1, 0)], 2, 2)
    assert bd_loss(Tensor(np.ones((2, 2))), gt).item() == 0.0


def test_bd_gradient_at_zero():
    gt = build_ground_truth([], 1, 1)
    y = Parameter("y", np.zeros((1, 1)))
    with Tape() as tape:
        tape.backward(bd_loss(y, gt))
    assert y.grad[0, 0] == pytest.approx(0.25)


def test_matrix_loss_is_sum_of_terms():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(3, 4)))
    gt = build_ground_truth([(0, 1), (2, 3)], 3, 4)
    expected = element_loss(logits, gt).item() + o2o_loss(logits, gt).item() + bd_loss(logits, gt).item()
    assert matrix_loss(logits, gt).item() == pytest.approx(expected, rel=1e-12)


def test_assembled_loss_weights():
    rng = np.random.default_rng(2)
    gt = build_ground_truth([(0, 0)], 2, 2)
    A, M, S, Y = (Tensor(rng.normal(size=(2, 2))) for _ in range(4))
    config = LossConfig(lambda_a=0.5, lambda_m=0.0, lambda_s=2.0, lambda_y=1.0)
    breakdown = assembled_loss(A, M, S, Y, gt, config)
    expected = 0.5 * breakdown.loss_a + 2.0 * breakdown.loss_s + breakdown.loss_y
    assert breakdown.total.item() == pytest.approx(expected, rel=1e-12)
    row = breakdown.as_row()
    assert set(row) == {"loss_total", "loss_A", "loss_M", "loss_S", "loss_Y"}
    assert row["loss_M"] == pytest.approx(element_loss(M, gt).item())


def test_shape_mismatch():
    gt = build_ground_truth([], 2, 2)
    with pytest.raises(ValidationFailure):
        matrix_loss(Tensor(np.zeros((2, 3))), gt)


def test_assembled_gradient_is_the_sum_of_its_terms():
    rng = np.random.default_rng(5)
    gt = build_ground_truth([(0, 2), (2, 0)], 3, 4)
    config = LossConfig(lambda_a=0.5, lambda_m=2.0, lambda_s=1.5, lambda_y=0.75)
    p = Parameter("p", rng.normal(size=(3, 4)))

    def matrices():
        return p, scale(p, -1.5), tanh(p), scale(p, 0.5)

    with Tape() as tape:
        tape.backward(assembled_loss(*matrices(), gt, config).total)
    combined = p.grad.copy()
    p.zero_grad()
    terms = [
        lambda A, M, S, Y: scale(element_loss(A, gt), config.lambda_a),
        lambda A, M, S, Y: scale(element_loss(M, gt), config.lambda_m),
        lambda A, M, S, Y: scale(element_loss(S, gt), config.lambda_s),
        lambda A, M, S, Y: scale(matrix_loss(Y, gt, config), config.lambda_y),
    ]
    for term in terms:
        with Tape() as tape:
            tape.backward(term(*matrices()))
    np.testing.assert_allclose(p.grad, combined, rtol=1e-12, atol=1e-12)


def test_o2o_is_invariant_to_column_order():
    rng = np.random.default_rng(6)
    for _ in range(50):
        rows, cols = rng.integers(1, 7, size=2)
        logits = rng.normal(scale=2.0, size=(rows, cols))
        k = int(rng.integers(0, min(rows, cols) + 1))
        pairs = list(zip(rng.permutation(rows)[:k].tolist(), rng.permutation(cols)[:k].tolist()))
        order = rng.permutation(cols)
        position = np.argsort(order)
        permuted_pairs = [(i, int(position[j])) for i, j in pairs]
        for columns in (False, True):
            original = o2o_loss(Tensor(logits), build_ground_truth(pairs, rows, cols), columns).item()
            permuted = o2o_loss(
                Tensor(logits[:, order]), build_ground_truth(permuted_pairs, rows, cols), columns
            ).item()
            assert permuted == pytest.approx(original, rel=1e-12, abs=1e-12)
