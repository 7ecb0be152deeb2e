"""The full learned association model: affinity network, then the GNN optimisation module."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .affinity import AffinityNetwork, DetectionObservation, ProblemInputs, TrajectoryView
from .autodiff import Module, Tensor, parameter_arrays
from .checkpoint import load_checkpoint, save_checkpoint
from .core import AssociationProblem
from .gnn import GnnParameters, gnn_forward
from .schemas import ModelConfig
from .tools import CheckpointMissingError, LOGGER, ValidationFailure


@dataclass(frozen=True)
class ModelOutput:
    """``association`` is X when the GNN ran, otherwise S."""

    problem: AssociationProblem
    association: Tensor
    used_gnn: bool


class AssociationModel(Module):
    def __init__(self, config: ModelConfig | None = None, arena: Tuple[float, float] = (1.0, 1.0)) -> None:
        self.config = config or ModelConfig()
        rng = np.random.default_rng(self.config.init_seed)
        self.affinity = AffinityNetwork(self.config, rng, arena)
        self.gnn = GnnParameters(
            self.config.node_dim,
            self.config.gnn_width,
            self.config.relation_hidden,
            rng,
            shared=self.config.shared_weight,
        )

    def forward(
        self,
        trajectories: Sequence[TrajectoryView] | ProblemInputs,
        detections: Optional[Sequence[DetectionObservation]] = None,
        use_gnn: bool = True,
    ) -> ModelOutput:
        if isinstance(trajectories, ProblemInputs):
            trajectories, detections = trajectories.trajectories, trajectories.detections
        problem = self.affinity.build_problem(trajectories, detections or ())
        if not use_gnn:
            return ModelOutput(problem, problem.S, used_gnn=False)
        return ModelOutput(problem, gnn_forward(problem, self.gnn), used_gnn=True)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return parameter_arrays(self.parameters())

    def load_state_dict(self, tensors: Mapping[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = sorted(set(named) - set(tensors))
        unexpected = sorted(set(tensors) - set(named))
        if missing or unexpected:
            raise ValidationFailure(f"checkpoint mismatch | missing={missing} | unexpected={unexpected}")
        for name, parameter in named.items():
            value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != parameter.shape:
                raise ValidationFailure(f"{name}: checkpoint shape {value.shape} != model shape {parameter.shape}")
            parameter.data = value.copy()
            parameter.zero_grad()

    def save(self, path: Path | str) -> Path:
        return save_checkpoint(path, self.state_dict())

    @classmethod
    def load(
        cls,
        path: Path | str | None,
        config: ModelConfig | None = None,
        arena: Tuple[float, float] = (1.0, 1.0),
    ) -> "AssociationModel":
        if path is None or not Path(path).exists():
            raise CheckpointMissingError(f"Checkpoint '{path}' is required for the learned solver.")
        model = cls(config, arena)
        model.load_state_dict(load_checkpoint(path))
        LOGGER.info("[Model] loaded | path=%s | parameters=%s", path, model.parameter_count())
        return model


__all__ = ["AssociationModel", "ModelOutput"]
