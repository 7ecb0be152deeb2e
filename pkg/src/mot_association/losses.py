"""Multi-level matrix loss and the assembled supervision over A, M, S and Y.

Every loss is a scalar ``Tensor`` so it can be backpropagated directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .autodiff import (
    Tensor,
    add,
    row_log_softmax,
    scale,
    sigmoid,
    softplus,
    square,
    take_rows,
    transpose,
    weighted_total,
)
from .core import GroundTruthMatrix
from .schemas import LossConfig
from .tools import ValidationFailure


def _zero() -> Tensor:
    return Tensor(np.asarray(0.0))


def _check_shape(logits: Tensor, ground_truth: GroundTruthMatrix, name: str = "Y") -> None:
    if logits.shape != ground_truth.shape:
        raise ValidationFailure(f"{name} has shape {logits.shape}, ground truth {ground_truth.shape}")


def element_loss(logits: Tensor, ground_truth: GroundTruthMatrix, positive_weight: float = 25.0) -> Tensor:
    """Positive-weighted binary cross-entropy over every cell, on logits.

    -log(sigmoid(y)) = softplus(-y) and -log(1 - sigmoid(y)) = softplus(y).
    """

    _check_shape(logits, ground_truth)
    target = ground_truth.as_float()
    positive = weighted_total(softplus(scale(logits, -1.0)), positive_weight * target)
    negative = weighted_total(softplus(logits), 1.0 - target)
    return add(positive, negative)


def o2o_loss(logits: Tensor, ground_truth: GroundTruthMatrix, columns: bool = False) -> Tensor:
    """Softmax cross-entropy on each matched row; ``columns=True`` adds the same over matched columns."""

    _check_shape(logits, ground_truth)
    loss = _row_cross_entropy(logits, ground_truth.as_float(), ground_truth.matched_rows)
    if columns:
        loss = add(
            loss,
            _row_cross_entropy(transpose(logits), ground_truth.as_float().T, ground_truth.matched_columns),
        )
    return loss


def _row_cross_entropy(logits: Tensor, target: np.ndarray, rows: np.ndarray) -> Tensor:
    if rows.size == 0:
        return _zero()
    log_probabilities = row_log_softmax(take_rows(logits, rows))
    return scale(weighted_total(log_probabilities, target[rows]), -1.0)


def bd_mask(ground_truth: GroundTruthMatrix, mode: str = "exclusive") -> np.ndarray:
    """Cell weights of the birth/death penalty.

    ``exclusive`` counts each cell lying in an unmatched row and an unmatched
    column once. ``full`` counts the whole death rows and birth columns, so a
    cell on both is counted twice.
    """

    rows, cols = ground_truth.shape
    death = np.zeros(rows)
    death[ground_truth.death_rows] = 1.0
    birth = np.zeros(cols)
    birth[ground_truth.birth_columns] = 1.0
    if mode == "exclusive":
        return np.outer(death, birth)
    if mode == "full":
        return death[:, None] + birth[None, :]
    raise ValidationFailure(f"unknown birth/death mode '{mode}'")


def bd_loss(logits: Tensor, ground_truth: GroundTruthMatrix, mode: str = "exclusive") -> Tensor:
    """Squared sigmoid over birth/death cells; pushes them toward -inf."""

    _check_shape(logits, ground_truth)
    mask = bd_mask(ground_truth, mode)
    if not mask.any():
        return _zero()
    return weighted_total(square(sigmoid(logits)), mask)


def matrix_loss(logits: Tensor, ground_truth: GroundTruthMatrix, config: LossConfig | None = None) -> Tensor:
    config = config or LossConfig()
    return add(
        add(
            element_loss(logits, ground_truth, config.positive_weight),
            o2o_loss(logits, ground_truth, config.o2o_columns),
        ),
        bd_loss(logits, ground_truth, config.bd_mode),
    )


@dataclass(frozen=True)
class LossBreakdown:
    """Assembled loss plus the unweighted value of each term."""

    total: Tensor
    loss_a: float
    loss_m: float
    loss_s: float
    loss_y: float

    def as_row(self) -> Dict[str, float]:
        return {
            "loss_total": self.total.item(),
            "loss_A": self.loss_a,
            "loss_M": self.loss_m,
            "loss_S": self.loss_s,
            "loss_Y": self.loss_y,
        }


def assembled_loss(
    A: Tensor,
    M: Tensor,
    S: Tensor,
    Y: Tensor,
    ground_truth: GroundTruthMatrix,
    config: LossConfig | None = None,
) -> LossBreakdown:
    """lambda_A*L_e(A) + lambda_M*L_e(M) + lambda_S*L_e(S) + lambda_Y*L_matrix(Y)."""

    config = config or LossConfig()
    for name, matrix in (("A", A), ("M", M), ("S", S), ("Y", Y)):
        _check_shape(matrix, ground_truth, name)
    loss_a = element_loss(A, ground_truth, config.positive_weight)
    loss_m = element_loss(M, ground_truth, config.positive_weight)
    loss_s = element_loss(S, ground_truth, config.positive_weight)
    loss_y = matrix_loss(Y, ground_truth, config)
    total = add(
        add(scale(loss_a, config.lambda_a), scale(loss_m, config.lambda_m)),
        add(scale(loss_s, config.lambda_s), scale(loss_y, config.lambda_y)),
    )
    return LossBreakdown(total, loss_a.item(), loss_m.item(), loss_s.item(), loss_y.item())


def affinity_loss(
    A: Tensor,
    M: Tensor,
    S: Tensor,
    ground_truth: GroundTruthMatrix,
    config: LossConfig | None = None,
) -> LossBreakdown:
    """Supervision for a model without the GNN: element losses on A, M and S only.

    There is no Y, so lambda_Y and the O2O and birth/death terms play no part.
    """

    config = config or LossConfig()
    for name, matrix in (("A", A), ("M", M), ("S", S)):
        _check_shape(matrix, ground_truth, name)
    loss_a = element_loss(A, ground_truth, config.positive_weight)
    loss_m = element_loss(M, ground_truth, config.positive_weight)
    loss_s = element_loss(S, ground_truth, config.positive_weight)
    total = add(
        add(scale(loss_a, config.lambda_a), scale(loss_m, config.lambda_m)), scale(loss_s, config.lambda_s)
    )
    return LossBreakdown(total, loss_a.item(), loss_m.item(), loss_s.item(), 0.0)


__all__ = [
    "LossBreakdown",
    "affinity_loss",
    "assembled_loss",
    "bd_loss",
    "bd_mask",
    "element_loss",
    "matrix_loss",
    "o2o_loss",
]
