from __future__ import annotations

import numpy as np
import pytest

from mot_association.affinity import DetectionObservation, ProblemInputs, TrajectoryObservation
from mot_association.core import BoundingBox, Tracklet
from mot_association.schemas import ModelConfig, ScenarioConfig


@pytest.fixture
def small_model_config() -> ModelConfig:
    return ModelConfig(
        appearance_dim=4,
        motion_dim=4,
        descriptor_dim=6,
        tracklet_length=3,
        head_hidden=8,
        encoder_hidden=6,
        gnn_width=8,
        relation_hidden=8,
        init_seed=3,
    )


@pytest.fixture
def quiet_scenario() -> ScenarioConfig:
    """Objects that never move, die or get missed; detections equal the true boxes."""

    return ScenarioConfig(
        min_objects=3,
        max_objects=3,
        velocity_scale=0.0,
        motion_noise=0.0,
        birth_probability=0.0,
        death_probability=0.0,
        detection_jitter=0.0,
        clutter_rate=0.0,
        miss_rate=0.0,
        descriptor_dim=6,
        sequence_length=20,
        seed=11,
    )


def make_inputs(rng: np.random.Generator, rows: int, cols: int, length: int = 3, dim: int = 6) -> ProblemInputs:
    def box() -> BoundingBox:
        x, y = rng.uniform(0.0, 0.8, size=2)
        w, h = rng.uniform(0.05, 0.15, size=2)
        return BoundingBox(float(x), float(y), float(w), float(h))

    trajectories = tuple(
        TrajectoryObservation(Tracklet.from_history([box() for _ in range(length)], length), rng.normal(size=dim))
        for _ in range(rows)
    )
    detections = tuple(DetectionObservation(box(), rng.normal(size=dim)) for _ in range(cols))
    return ProblemInputs(trajectories, detections)


@pytest.fixture
def inputs_factory():
    return make_inputs
