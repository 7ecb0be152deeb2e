"""Online frame-by-frame tracker with birth confirmation and dummy-propagated deaths.

A new detection starts a pending trajectory; it is confirmed once it has been
matched in the next T_b frames in a row and discarded on any miss before
that. A confirmed trajectory that loses its detection becomes a dummy whose
box keeps moving with the trajectory's velocity; a dummy that is not matched
again within T_d frames is terminated. Identities are never reused.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .affinity import DetectionObservation
from .autodiff import sigmoid
from .core import AssociationResult, BoundingBox, Tracklet, interpret_association
from .pipeline import AssociationModel
from .scenario import SyntheticSequence, detections_for_frame
from .schemas import TrackerConfig
from .solvers import solve_with_birth_death
from .tools import CheckpointMissingError, LOGGER, OperationTracker, ValidationFailure

TRACK_COLUMNS = ["frame", "id", "x", "y", "w", "h"]


class TrackStatus(str, Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    DUMMY = "dummy"


@dataclass(frozen=True, eq=False)
class TrajectoryState:
    """One live trajectory.

    ``count`` is the number of confirming matches while pending and the
    number of consecutive missed frames while a dummy. ``history_length`` counts the
    real or propagated boxes in the tracklet (the rest is padding).
    """

    identity: int
    tracklet: Tracklet
    descriptor: np.ndarray
    status: TrackStatus = TrackStatus.PENDING
    count: int = 0
    velocity: Tuple[float, float] = (0.0, 0.0)
    history_length: int = 1
    source_id: Optional[int] = None
    pending_boxes: Tuple[Tuple[int, BoundingBox], ...] = ()

    @property
    def box(self) -> BoundingBox:
        return self.tracklet.last


@dataclass(frozen=True)
class Emission:
    frame: int
    identity: int
    box: BoundingBox

    def as_row(self) -> Dict[str, float]:
        x, y, w, h = self.box.as_tuple()
        return {"frame": self.frame, "id": self.identity, "x": x, "y": y, "w": w, "h": h}


@dataclass(frozen=True)
class TrackerState:
    trajectories: Tuple[TrajectoryState, ...] = ()
    next_identity: int = 0


def estimate_velocity(boxes: Sequence[BoundingBox]) -> Tuple[float, float]:
    """Least-squares slope of the top-left corner against frame index."""

    if len(boxes) < 2:
        return (0.0, 0.0)
    coords = np.array([(box.x, box.y) for box in boxes])
    t = np.arange(len(boxes), dtype=np.float64)
    centred = t - t.mean()
    slope = centred @ (coords - coords.mean(axis=0)) / (centred @ centred)
    return (float(slope[0]), float(slope[1]))


def _recent(trajectory: TrajectoryState) -> Tuple[BoundingBox, ...]:
    return trajectory.tracklet.boxes[-min(trajectory.history_length, len(trajectory.tracklet)):]


def observe(trajectory: TrajectoryState, detection: DetectionObservation) -> TrajectoryState:
    """Append a matched detection; refresh descriptor and velocity."""

    tracklet = trajectory.tracklet.appended(detection.box)
    updated = replace(
        trajectory,
        tracklet=tracklet,
        descriptor=np.asarray(detection.descriptor, dtype=np.float64),
        history_length=min(trajectory.history_length + 1, len(tracklet)),
        source_id=detection.gt_id,
    )
    return replace(updated, velocity=estimate_velocity(_recent(updated)))


def confirm_birth(trajectory: TrajectoryState, birth_window: int) -> TrajectoryState:
    """A pending trajectory matched once more; confirmed when its count reaches ``birth_window``."""

    if trajectory.status is not TrackStatus.PENDING:
        return trajectory
    count = trajectory.count + 1
    if count >= birth_window:
        return replace(trajectory, status=TrackStatus.CONFIRMED, count=0)
    return replace(trajectory, count=count)


def handle_death(trajectory: TrajectoryState, death_window: int) -> Optional[TrajectoryState]:
    """A trajectory got no detection this frame. Returns None when it ends.

    ``count`` is the number of consecutive misses; the trajectory ends on the
    ``death_window``-th one.
    """

    if trajectory.status is TrackStatus.PENDING:
        return None
    count = 1 if trajectory.status is TrackStatus.CONFIRMED else trajectory.count + 1
    if count >= death_window:
        return None
    dummy = trajectory.box.shifted(*trajectory.velocity)
    tracklet = trajectory.tracklet.appended(dummy)
    return replace(
        trajectory,
        status=TrackStatus.DUMMY,
        count=count,
        tracklet=tracklet,
        history_length=min(trajectory.history_length + 1, len(tracklet)),
    )


class AssociationStrategy(ABC):
    """Turns live trajectories and current detections into O, B and D."""

    name: str

    @abstractmethod
    def associate(
        self, trajectories: Sequence[TrajectoryState], detections: Sequence[DetectionObservation]
    ) -> AssociationResult:
        """Both sequences are non-empty."""


class LearnedAssociation(AssociationStrategy):
    name = "learned"
    use_gnn = True

    def __init__(self, model: AssociationModel) -> None:
        self.model = model

    def associate(self, trajectories, detections) -> AssociationResult:
        output = self.model.forward(trajectories, detections, use_gnn=self.use_gnn)
        return interpret_association(output.association)


class AffinityAssociation(LearnedAssociation):
    """Interprets S directly, skipping the GNN."""

    name = "affinity"
    use_gnn = False


class HungarianBaselineAssociation(AssociationStrategy):
    """Hungarian on sigmoid(S) with a birth/death threshold."""

    name = "hungarian-baseline"

    def __init__(self, model: AssociationModel, threshold: float = 0.5) -> None:
        self.model = model
        self.threshold = threshold

    def associate(self, trajectories, detections) -> AssociationResult:
        problem = self.model.forward(trajectories, detections, use_gnn=False).problem
        return solve_with_birth_death(sigmoid(problem.S).data, self.threshold)


class OracleAssociation(AssociationStrategy):
    """Matches on ground-truth identity; clutter always becomes a birth."""

    name = "oracle"

    def associate(self, trajectories, detections) -> AssociationResult:
        by_identity = {
            detection.gt_id: column for column, detection in enumerate(detections) if detection.gt_id is not None
        }
        matches = set()
        used = set()
        for row, trajectory in enumerate(trajectories):
            column = by_identity.get(trajectory.source_id) if trajectory.source_id is not None else None
            if column is not None and column not in used:
                used.add(column)
                matches.add((row, column))
        matched_rows = {row for row, _ in matches}
        return AssociationResult(
            matches=frozenset(matches),
            births=frozenset(column for column in range(len(detections)) if column not in used),
            deaths=frozenset(row for row in range(len(trajectories)) if row not in matched_rows),
        )


def select_strategy(config: TrackerConfig, model: Optional[AssociationModel] = None) -> AssociationStrategy:
    if config.solver == "oracle":
        return OracleAssociation()
    if model is None:
        raise CheckpointMissingError(f"solver '{config.solver}' needs a trained checkpoint")
    if config.solver == "learned":
        return LearnedAssociation(model)
    if config.solver == "affinity":
        return AffinityAssociation(model)
    return HungarianBaselineAssociation(model, config.birth_death_threshold)


@dataclass
class OnlineTracker:
    strategy: AssociationStrategy
    config: TrackerConfig = field(default_factory=TrackerConfig)
    tracklet_length: int = 5

    def step(
        self,
        state: TrackerState,
        detections: Sequence[DetectionObservation],
        frame: int,
    ) -> Tuple[TrackerState, List[Emission]]:
        trajectories = state.trajectories
        rows, cols = len(trajectories), len(detections)
        if rows and cols:
            result = self.strategy.associate(trajectories, detections).validate(rows, cols)
        else:
            result = AssociationResult(births=frozenset(range(cols)), deaths=frozenset(range(rows)))
        assignment = result.row_assignment()
        emissions: List[Emission] = []
        survivors: List[TrajectoryState] = []
        for row, trajectory in enumerate(trajectories):
            if row not in assignment:
                ended = handle_death(trajectory, self.config.death_window)
                if ended is not None:
                    survivors.append(ended)
                continue
            detection = detections[assignment[row]]
            updated = observe(trajectory, detection)
            if updated.status is TrackStatus.PENDING:
                updated = confirm_birth(
                    replace(updated, pending_boxes=updated.pending_boxes + ((frame, detection.box),)),
                    self.config.birth_window,
                )
                if updated.status is TrackStatus.CONFIRMED:
                    window = updated.pending_boxes if self.config.backfill_births else updated.pending_boxes[-1:]
                    emissions.extend(Emission(when, updated.identity, box) for when, box in window)
                    updated = replace(updated, pending_boxes=())
            else:
                updated = replace(updated, status=TrackStatus.CONFIRMED, count=0)
                emissions.append(Emission(frame, updated.identity, detection.box))
            survivors.append(updated)
        next_identity = state.next_identity
        for column in sorted(result.births):
            detection = detections[column]
            survivors.append(
                TrajectoryState(
                    identity=next_identity,
                    tracklet=Tracklet.from_history([detection.box], self.tracklet_length),
                    descriptor=np.asarray(detection.descriptor, dtype=np.float64),
                    source_id=detection.gt_id,
                    pending_boxes=((frame, detection.box),),
                )
            )
            next_identity += 1
        return TrackerState(tuple(survivors), next_identity), emissions

    def run(self, sequence: SyntheticSequence) -> List[Emission]:
        state = TrackerState()
        emissions: List[Emission] = []
        for record in sequence.frames:
            state, emitted = self.step(state, detections_for_frame(record), record.frame)
            emissions.extend(emitted)
        emissions.sort(key=lambda emission: (emission.frame, emission.identity))
        LOGGER.info(
            "[Tracker] finished | solver=%s | frames=%s | identities=%s | emissions=%s",
            self.strategy.name,
            len(sequence.frames),
            len({emission.identity for emission in emissions}),
            len(emissions),
        )
        return emissions


def tracks_frame(emissions: Sequence[Emission]) -> pd.DataFrame:
    frame = pd.DataFrame([emission.as_row() for emission in emissions], columns=TRACK_COLUMNS)
    return frame.astype({"frame": "int64", "id": "int64"})


def write_tracks_csv(path: Path | str, emissions: Sequence[Emission]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    table = tracks_frame(emissions)
    if table.duplicated(subset=["frame", "id"]).any():
        raise ValidationFailure("an identity was emitted twice in one frame")
    table.to_csv(target, index=False)
    return target


def run(
    sequence: SyntheticSequence,
    config: TrackerConfig,
    model: Optional[AssociationModel] = None,
    output_path: Path | str | None = None,
    tracklet_length: int = 5,
    tracker: Optional[OperationTracker] = None,
) -> List[Emission]:
    """Track a whole sequence and optionally write the track CSV."""

    tracker = tracker or OperationTracker()
    online = OnlineTracker(select_strategy(config, model), config, tracklet_length)
    with tracker.span(
        "Tracker",
        "run",
        config.solver,
        lambda: {"frames": len(sequence.frames), "T_b": config.birth_window, "T_d": config.death_window},
    ):
        emissions = online.run(sequence)
    if output_path is not None:
        write_tracks_csv(output_path, emissions)
    return emissions


__all__ = [
    "AffinityAssociation",
    "AssociationStrategy",
    "Emission",
    "HungarianBaselineAssociation",
    "LearnedAssociation",
    "OnlineTracker",
    "OracleAssociation",
    "TRACK_COLUMNS",
    "TrackStatus",
    "TrackerState",
    "TrajectoryState",
    "confirm_birth",
    "estimate_velocity",
    "handle_death",
    "observe",
    "run",
    "select_strategy",
    "tracks_frame",
    "write_tracks_csv",
]
