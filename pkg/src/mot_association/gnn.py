"""One round of bipartite message passing followed by pairwise relation scoring.

Nodes are trajectories (rows) and detections (columns); the affinity matrix S
weights the messages. Feature update and relation scoring both treat every
node and every pair identically, so the module is indifferent to I and J and
equivariant under any reordering of either side.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np

from .autodiff import (
    MLP,
    Module,
    Parameter,
    Tensor,
    glorot_uniform,
    matmul,
    pairwise_subtract,
    relu,
    reshape,
    row_softmax,
    transpose,
)
from .core import AssociationProblem
from .tools import ValidationFailure


class GnnParameters(Module):
    """Embedding weight W (D x C) and the relation MLP (C -> hidden -> 1).

    With ``shared=False`` the detection-side update gets its own weight.
    """

    def __init__(
        self,
        node_dim: int,
        width: int,
        relation_hidden: int,
        rng: np.random.Generator,
        shared: bool = True,
    ) -> None:
        self.shared = shared
        self.weight = Parameter("gnn.weight", glorot_uniform(rng, node_dim, width))
        self.detection_weight = (
            self.weight if shared else Parameter("gnn.detection_weight", glorot_uniform(rng, node_dim, width))
        )
        self.relation = MLP("gnn.relation", [width, relation_hidden, 1], rng)

    @property
    def node_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def width(self) -> int:
        return self.weight.shape[1]


def feature_update(S: Tensor, F_M: Tensor, F_N: Tensor, params: GnnParameters) -> Tuple[Tensor, Tensor]:
    """Both sides aggregate the other's pre-update features, weighted by softmax(S)."""

    rows, cols = S.shape
    if F_M.shape != (rows, params.node_dim) or F_N.shape != (cols, params.node_dim):
        raise ValidationFailure(
            f"feature shapes {F_M.shape}, {F_N.shape} do not fit S {S.shape} and D={params.node_dim}"
        )
    updated_m = relu(matmul(matmul(row_softmax(S), F_N), params.weight))
    updated_n = relu(matmul(matmul(row_softmax(transpose(S)), F_M), params.detection_weight))
    return updated_m, updated_n


def relation_update(updated_m: Tensor, updated_n: Tensor, params: GnnParameters) -> Tensor:
    """x_ij = MLP(F'_M[i] - F'_N[j])."""

    if updated_m.shape[1] != params.width or updated_n.shape[1] != params.width:
        raise ValidationFailure(
            f"relation input widths {updated_m.shape[1]}, {updated_n.shape[1]} != C={params.width}"
        )
    rows, cols = updated_m.shape[0], updated_n.shape[0]
    return reshape(params.relation(pairwise_subtract(updated_m, updated_n)), (rows, cols))


def gnn_forward(problem: AssociationProblem, params: GnnParameters) -> Tensor:
    updated_m, updated_n = feature_update(problem.S, problem.F_M, problem.F_N, params)
    return relation_update(updated_m, updated_n, params)


__all__ = ["GnnParameters", "feature_update", "gnn_forward", "relation_update"]
