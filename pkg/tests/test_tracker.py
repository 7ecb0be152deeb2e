from __future__ import annotations

from dataclasses import replace
from typing import Dict, List

import numpy as np
import pandas as pd
import pytest

from mot_association.affinity import DetectionObservation
from mot_association.core import BoundingBox, Tracklet
from mot_association.metrics import evaluate, ground_truth_frame, read_tracks_csv
from mot_association.pipeline import AssociationModel
from mot_association.scenario import generate_sequence
from mot_association.schemas import ScenarioConfig, TrackerConfig
from mot_association.tools import CheckpointMissingError
from mot_association.tracker import (
    Emission,
    OnlineTracker,
    OracleAssociation,
    TrackerState,
    TrackStatus,
    TrajectoryState,
    confirm_birth,
    estimate_velocity,
    handle_death,
    run,
    select_strategy,
    tracks_frame,
)

LIFECYCLE = TrackerConfig(birth_window_override=2, death_window_override=4)


def _detection(gt_id: int, x: float) -> DetectionObservation:
    return DetectionObservation(BoundingBox(x, 0.1, 0.1, 0.2), np.zeros(6), gt_id)


def _replay(config: TrackerConfig, frames: List[List[DetectionObservation]]) -> List[Emission]:
    tracker = OnlineTracker(OracleAssociation(), config, tracklet_length=3)
    state = TrackerState()
    emissions: List[Emission] = []
    for frame, detections in enumerate(frames):
        state, emitted = tracker.step(state, detections, frame)
        emissions.extend(emitted)
    return emissions


def _identities_by_frame(emissions: List[Emission]) -> Dict[int, List[int]]:
    table: Dict[int, List[int]] = {}
    for emission in emissions:
        table.setdefault(emission.frame, []).append(emission.identity)
    return table


def test_windows_derive_from_fps():
    config = TrackerConfig(fps=30)
    assert (config.birth_window, config.death_window) == (15, 5)
    assert (TrackerConfig(fps=1).birth_window, TrackerConfig(fps=1).death_window) == (1, 1)
    assert (LIFECYCLE.birth_window, LIFECYCLE.death_window) == (2, 4)


def test_noiseless_oracle_run_is_perfect(quiet_scenario):
    sequence = generate_sequence(quiet_scenario)
    emissions = run(sequence, TrackerConfig(fps=10, solver="oracle"), tracklet_length=3)
    report = evaluate(tracks_frame(emissions), ground_truth_frame(sequence))
    assert report.id_switches == 0
    assert report.mota == 1.0
    assert report.false_positives == 0
    assert report.false_negatives == 0


def test_short_lived_detection_is_never_confirmed():
    config = TrackerConfig(birth_window_override=4, death_window_override=2)
    frames = [[_detection(0, 0.1)] for _ in range(config.birth_window - 1)] + [[] for _ in range(3)]
    assert _replay(config, frames) == []


def test_confirmation_backfills_pending_frames():
    frames = [[_detection(0, 0.1 + 0.01 * t)] for t in range(LIFECYCLE.birth_window + 1)]
    emissions = _replay(LIFECYCLE, frames)
    assert [emission.frame for emission in emissions] == list(range(LIFECYCLE.birth_window + 1))
    assert {emission.identity for emission in emissions} == {0}


def test_without_backfill_only_confirmed_frames_are_emitted():
    config = LIFECYCLE.model_copy(update={"backfill_births": False})
    frames = [[_detection(0, 0.1)] for _ in range(LIFECYCLE.birth_window + 2)]
    emissions = _replay(config, frames)
    assert [emission.frame for emission in emissions] == [LIFECYCLE.birth_window, LIFECYCLE.birth_window + 1]


def test_occlusion_shorter_than_death_window_keeps_identity():
    visible = [[_detection(0, 0.3)] for _ in range(4)]
    hidden = [[] for _ in range(LIFECYCLE.death_window - 1)]
    emissions = _replay(LIFECYCLE, visible + hidden + [[_detection(0, 0.3)]])
    assert {emission.identity for emission in emissions} == {0}
    last_frame = len(visible) + len(hidden)
    assert _identities_by_frame(emissions)[last_frame] == [0]


def test_long_occlusion_ends_the_trajectory():
    visible = [[_detection(0, 0.3)] for _ in range(4)]
    hidden = [[] for _ in range(LIFECYCLE.death_window + 1)]
    again = [[_detection(0, 0.3)] for _ in range(LIFECYCLE.birth_window + 1)]
    emissions = _replay(LIFECYCLE, visible + hidden + again)
    assert {emission.identity for emission in emissions} == {0, 1}


def test_trajectory_ends_on_the_death_window_th_miss():
    visible = [[_detection(0, 0.3)] for _ in range(4)]
    hidden = [[] for _ in range(LIFECYCLE.death_window)]
    again = [[_detection(0, 0.3)] for _ in range(LIFECYCLE.birth_window + 1)]
    emissions = _replay(LIFECYCLE, visible + hidden + again)
    assert {emission.identity for emission in emissions} == {0, 1}
    assert _identities_by_frame(emissions)[len(visible) + len(hidden)] == [1]


def test_handle_death_counts_consecutive_misses():
    trajectory = TrajectoryState(
        identity=0,
        tracklet=Tracklet((BoundingBox(0.1, 0.1, 0.1, 0.1),)),
        descriptor=np.zeros(6),
        status=TrackStatus.CONFIRMED,
    )
    for misses in range(1, LIFECYCLE.death_window):
        trajectory = handle_death(trajectory, LIFECYCLE.death_window)
        assert (trajectory.status, trajectory.count) == (TrackStatus.DUMMY, misses)
    assert handle_death(trajectory, LIFECYCLE.death_window) is None
    assert handle_death(replace(trajectory, status=TrackStatus.CONFIRMED, count=0), 1) is None


def test_birth_window_of_one_confirms_on_first_match():
    pending = TrajectoryState(identity=0, tracklet=Tracklet((BoundingBox(0, 0, 1, 1),)), descriptor=np.zeros(1))
    assert confirm_birth(pending, 1).status is TrackStatus.CONFIRMED
    config = TrackerConfig(birth_window_override=1, death_window_override=2)
    emissions = _replay(config, [[_detection(0, 0.1)], [_detection(0, 0.11)]])
    assert [(emission.frame, emission.identity) for emission in emissions] == [(0, 0), (1, 0)]


def test_dummies_are_not_emitted():
    visible = [[_detection(0, 0.3)] for _ in range(4)]
    emissions = _replay(LIFECYCLE, visible + [[], []])
    assert max(emission.frame for emission in emissions) == 3


def test_identities_are_never_reused():
    frames = [[_detection(0, 0.1), _detection(1, 0.6)] for _ in range(3)] + [[] for _ in range(6)]
    frames += [[_detection(2, 0.4)] for _ in range(3)]
    emissions = _replay(LIFECYCLE, frames)
    assert sorted({emission.identity for emission in emissions}) == [0, 1, 2]


def test_dummy_moves_with_velocity():
    boxes = [BoundingBox(0.1 + 0.02 * t, 0.2, 0.1, 0.1) for t in range(3)]
    trajectory = TrajectoryState(
        identity=0,
        tracklet=Tracklet(tuple(boxes)),
        descriptor=np.zeros(6),
        status=TrackStatus.CONFIRMED,
        velocity=estimate_velocity(boxes),
        history_length=3,
    )
    dummy = handle_death(trajectory, 4)
    assert dummy.status is TrackStatus.DUMMY
    assert dummy.box.x == pytest.approx(0.16)
    assert dummy.box.y == pytest.approx(0.2)


def test_pending_miss_discards():
    trajectory = TrajectoryState(identity=0, tracklet=Tracklet((BoundingBox(0, 0, 1, 1),)), descriptor=np.zeros(1))
    assert handle_death(trajectory, 4) is None


def test_velocity_of_single_box_is_zero():
    assert estimate_velocity([BoundingBox(0.0, 0.0, 1.0, 1.0)]) == (0.0, 0.0)


def test_learned_strategy_needs_a_model():
    with pytest.raises(CheckpointMissingError):
        select_strategy(TrackerConfig(solver="learned"))


@pytest.mark.parametrize("solver", ["learned", "affinity", "hungarian-baseline"])
def test_model_strategies_write_valid_track_files(tmp_path, small_model_config, solver):
    sequence = generate_sequence(ScenarioConfig(descriptor_dim=6, sequence_length=15, seed=3))
    model = AssociationModel(small_model_config)
    target = tmp_path / "tracks.csv"
    emissions = run(sequence, TrackerConfig(solver=solver, birth_window_override=1), model, target, 3)
    table = read_tracks_csv(target)
    assert len(table) == len(emissions)
    assert not table.duplicated(subset=["frame", "id"]).any()


def test_tracks_frame_columns():
    table = tracks_frame([Emission(0, 3, BoundingBox(0.1, 0.2, 0.3, 0.4))])
    expected = pd.DataFrame([{"frame": 0, "id": 3, "x": 0.1, "y": 0.2, "w": 0.3, "h": 0.4}])
    pd.testing.assert_frame_equal(table, expected)
