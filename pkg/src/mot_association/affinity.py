"""Two-stream affinity network: motion and appearance encoders fused by learned metric heads.

The motion stream runs an LSTM over each trajectory's tracklet and a small
fully-connected encoder over each detection box. The appearance stream is a
Siamese encoder over identity descriptors. Three heads turn feature pairs into
the logit matrices ``A`` (appearance), ``M`` (motion) and ``S`` (fused).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, Tuple

import numpy as np

from .autodiff import (
    MLP,
    Linear,
    Module,
    Tensor,
    add,
    concat,
    multiply,
    pairwise_concat,
    reshape,
    sigmoid,
    slice_columns,
    tanh,
)
from .core import AssociationProblem, BoundingBox, Tracklet
from .schemas import ModelConfig
from .tools import EmptyProblemError, ValidationFailure


class TrajectoryView(Protocol):
    """What the network reads from a live or training trajectory."""

    @property
    def tracklet(self) -> Tracklet: ...

    @property
    def descriptor(self) -> np.ndarray: ...


@dataclass(frozen=True)
class TrajectoryObservation:
    tracklet: Tracklet
    descriptor: np.ndarray


@dataclass(frozen=True)
class DetectionObservation:
    """A detection as seen by the network; ``gt_id`` is carried for the oracle solver only."""

    box: BoundingBox
    descriptor: np.ndarray
    gt_id: int | None = None


@dataclass(frozen=True)
class ProblemInputs:
    trajectories: Tuple[TrajectoryView, ...]
    detections: Tuple[DetectionObservation, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return (len(self.trajectories), len(self.detections))


class LSTMCell(Module):
    """Standard LSTM cell; gates are laid out input, forget, cell, output."""

    def __init__(self, name: str, input_size: int, hidden_size: int, rng: np.random.Generator) -> None:
        self.hidden_size = hidden_size
        self.gates = Linear(name, input_size + hidden_size, 4 * hidden_size, rng)
        self.gates.bias.data[:, hidden_size:2 * hidden_size] = 1.0

    def __call__(self, inputs: np.ndarray) -> Tensor:
        """Unroll over ``inputs`` of shape (batch, steps, features); returns the last hidden state."""

        batch, steps, _ = inputs.shape
        size = self.hidden_size
        hidden = Tensor(np.zeros((batch, size)))
        cell = Tensor(np.zeros((batch, size)))
        for step in range(steps):
            z = self.gates(concat([Tensor(inputs[:, step, :]), hidden], axis=1))
            input_gate = sigmoid(slice_columns(z, 0, size))
            forget_gate = sigmoid(slice_columns(z, size, 2 * size))
            candidate = tanh(slice_columns(z, 2 * size, 3 * size))
            output_gate = sigmoid(slice_columns(z, 3 * size, 4 * size))
            cell = add(multiply(forget_gate, cell), multiply(input_gate, candidate))
            hidden = multiply(output_gate, tanh(cell))
        return hidden


class MotionEncoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, arena: Tuple[float, float]) -> None:
        self.arena = np.array([arena[0], arena[1], arena[0], arena[1]], dtype=np.float64)
        self.length = config.tracklet_length
        self.lstm = LSTMCell("affinity.motion.lstm", 4, config.motion_dim, rng)
        self.box_encoder = MLP(
            "affinity.motion.box", [4, config.encoder_hidden, config.motion_dim], rng
        )

    def encode_tracklets(self, tracklets: Sequence[Tracklet]) -> Tensor:
        for tracklet in tracklets:
            if len(tracklet) != self.length:
                raise ValidationFailure(f"tracklet length {len(tracklet)} != {self.length}")
        batch = np.stack([tracklet.as_array() for tracklet in tracklets]) / self.arena
        return self.lstm(batch)

    def encode_boxes(self, boxes: Sequence[BoundingBox]) -> Tensor:
        batch = np.stack([box.as_array() for box in boxes]) / self.arena
        return self.box_encoder(Tensor(batch))


class AppearanceEncoder(Module):
    """One encoder applied to trajectory-side and detection-side descriptors alike."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        self.descriptor_dim = config.descriptor_dim
        self.network = MLP(
            "affinity.appearance", [config.descriptor_dim, config.encoder_hidden, config.appearance_dim], rng
        )

    def __call__(self, descriptors: Sequence[np.ndarray]) -> Tensor:
        batch = np.stack([np.asarray(value, dtype=np.float64) for value in descriptors])
        if batch.ndim != 2 or batch.shape[1] != self.descriptor_dim:
            raise ValidationFailure(f"descriptors must have length {self.descriptor_dim}, got shape {batch.shape}")
        if not np.isfinite(batch).all():
            raise ValidationFailure("descriptors must be finite")
        return self.network(Tensor(batch))


class MetricHeads(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        hidden = config.head_hidden
        self.appearance = MLP("affinity.phi_a", [2 * config.appearance_dim, hidden, 1], rng)
        self.motion = MLP("affinity.phi_m", [2 * config.motion_dim, hidden, 1], rng)
        self.fusion = MLP("affinity.phi_s", [2, hidden, 1], rng)


def pairwise_affinity(left: Tensor, right: Tensor, head: MLP) -> Tensor:
    """Score every (row of ``left``, row of ``right``) pair with ``head``; returns an I x J logit matrix."""

    if left.shape[1] + right.shape[1] != head.in_features:
        raise ValidationFailure(
            f"feature widths {left.shape[1]} + {right.shape[1]} do not match head input {head.in_features}"
        )
    rows, cols = left.shape[0], right.shape[0]
    return reshape(head(pairwise_concat(left, right)), (rows, cols))


def fuse(appearance: Tensor, motion: Tensor, head: MLP) -> Tensor:
    """s_ij = phi_S(a_ij, m_ij) applied elementwise over two I x J matrices."""

    if appearance.shape != motion.shape:
        raise ValidationFailure(f"A {appearance.shape} and M {motion.shape} differ in shape")
    rows, cols = appearance.shape
    pairs = concat([reshape(appearance, (rows * cols, 1)), reshape(motion, (rows * cols, 1))], axis=1)
    return reshape(head(pairs), (rows, cols))


class AffinityNetwork(Module):
    """Builds the association problem between live trajectories and the current detections."""

    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator,
        arena: Tuple[float, float] = (1.0, 1.0),
    ) -> None:
        self.config = config
        self.motion = MotionEncoder(config, rng, arena)
        self.appearance = AppearanceEncoder(config, rng)
        self.heads = MetricHeads(config, rng)

    def encode_motion(self, tracklets: Tracklet | Sequence[Tracklet]) -> Tensor:
        batch = [tracklets] if isinstance(tracklets, Tracklet) else list(tracklets)
        return self.motion.encode_tracklets(batch)

    def encode_detection_box(self, boxes: BoundingBox | Sequence[BoundingBox]) -> Tensor:
        batch = [boxes] if isinstance(boxes, BoundingBox) else list(boxes)
        return self.motion.encode_boxes(batch)

    def encode_appearance(self, descriptors: np.ndarray | Sequence[np.ndarray]) -> Tensor:
        values = np.asarray(descriptors, dtype=np.float64)
        batch = [values] if values.ndim == 1 else list(values)
        return self.appearance(batch)

    def build_problem(
        self,
        trajectories: Sequence[TrajectoryView],
        detections: Sequence[DetectionObservation],
    ) -> AssociationProblem:
        if not trajectories or not detections:
            raise EmptyProblemError(
                f"no association problem for {len(trajectories)} trajectories and {len(detections)} detections"
            )
        appearance_m = self.encode_appearance([trajectory.descriptor for trajectory in trajectories])
        appearance_n = self.encode_appearance([detection.descriptor for detection in detections])
        motion_m = self.encode_motion([trajectory.tracklet for trajectory in trajectories])
        motion_n = self.encode_detection_box([detection.box for detection in detections])
        A = pairwise_affinity(appearance_m, appearance_n, self.heads.appearance)
        M = pairwise_affinity(motion_m, motion_n, self.heads.motion)
        S = fuse(A, M, self.heads.fusion)
        return AssociationProblem(
            S=S,
            A=A,
            M=M,
            F_M=concat([appearance_m, motion_m], axis=1),
            F_N=concat([appearance_n, motion_n], axis=1),
        )


__all__ = [
    "AffinityNetwork",
    "AppearanceEncoder",
    "DetectionObservation",
    "LSTMCell",
    "MetricHeads",
    "MotionEncoder",
    "ProblemInputs",
    "TrajectoryObservation",
    "TrajectoryView",
    "fuse",
    "pairwise_affinity",
]
