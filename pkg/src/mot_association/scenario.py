"""Seeded synthetic multi-object sequences and the training problems cut from them.

Random source: ``numpy.random.Generator(PCG64(seed))``. Draws happen in a
fixed order every frame (motion, deaths, birth, detections, clutter), so a
seed fixes the whole sequence on every platform numpy supports.

Sequence file: newline-delimited JSON. The first line is
``{"header": {...scenario config...}}``; every other line is one frame record
with ``frame``, ``gt``, ``detections`` and ``matches``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np
from pydantic import ValidationError

from .affinity import DetectionObservation, ProblemInputs, TrajectoryObservation
from .core import BoundingBox, GroundTruthMatrix, Tracklet, build_ground_truth
from .schemas import (
    DetectionRecord,
    FrameRecord,
    GroundTruthObject,
    ScenarioConfig,
    SequenceHeader,
)
from .tools import ArtifactParseError, LOGGER


@dataclass
class _Actor:
    identity: int
    position: np.ndarray
    velocity: np.ndarray
    size: np.ndarray
    latent: np.ndarray

    def box(self) -> Tuple[float, float, float, float]:
        return (float(self.position[0]), float(self.position[1]), float(self.size[0]), float(self.size[1]))

    def inside(self, width: float, height: float) -> bool:
        cx, cy = self.position + self.size / 2.0
        return 0.0 <= cx <= width and 0.0 <= cy <= height


@dataclass(frozen=True)
class SyntheticSequence:
    """A generated or loaded sequence: its scenario config and frame records."""

    config: ScenarioConfig
    frames: Tuple[FrameRecord, ...]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def arena(self) -> Tuple[float, float]:
        return (self.config.arena_width, self.config.arena_height)


@dataclass(frozen=True)
class TrainingInstance:
    frame: int
    inputs: ProblemInputs
    ground_truth: GroundTruthMatrix


@dataclass
class TrainingSet:
    instances: List[TrainingInstance] = field(default_factory=list)
    skipped: int = 0


class ScenarioGenerator:
    """Constant-velocity objects with Gaussian perturbation, random births/deaths and a noisy detector."""

    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self._next_identity = 0

    def _spawn(self) -> _Actor:
        config, rng = self.config, self.rng
        width = rng.uniform(*config.box_width_range)
        height = width * rng.uniform(*config.box_aspect_range)
        size = np.array([width, height])
        position = np.array(
            [
                rng.uniform(0.0, max(config.arena_width - width, 1e-9)),
                rng.uniform(0.0, max(config.arena_height - height, 1e-9)),
            ]
        )
        velocity = rng.normal(0.0, config.velocity_scale, size=2)
        latent = rng.normal(0.0, config.latent_spacing, size=config.descriptor_dim)
        actor = _Actor(self._next_identity, position, velocity, size, latent)
        self._next_identity += 1
        return actor

    def _detect(self, actor: _Actor) -> DetectionRecord | None:
        config, rng = self.config, self.rng
        if rng.random() < config.miss_rate:
            return None
        position = actor.position + rng.normal(0.0, config.detection_jitter, size=2)
        size = actor.size * np.exp(rng.normal(0.0, config.detection_jitter, size=2))
        descriptor = actor.latent + rng.normal(0.0, config.descriptor_noise, size=config.descriptor_dim)
        return DetectionRecord(
            box=(float(position[0]), float(position[1]), float(size[0]), float(size[1])),
            descriptor=descriptor.tolist(),
            is_clutter=False,
            gt_id=actor.identity,
        )

    def _clutter(self) -> DetectionRecord:
        config, rng = self.config, self.rng
        width = rng.uniform(*config.box_width_range)
        height = width * rng.uniform(*config.box_aspect_range)
        x = rng.uniform(0.0, max(config.arena_width - width, 1e-9))
        y = rng.uniform(0.0, max(config.arena_height - height, 1e-9))
        descriptor = rng.normal(0.0, config.latent_spacing, size=config.descriptor_dim)
        descriptor = descriptor + rng.normal(0.0, config.descriptor_noise, size=config.descriptor_dim)
        return DetectionRecord(box=(x, y, width, height), descriptor=descriptor.tolist(), is_clutter=True)

    def generate(self) -> SyntheticSequence:
        config, rng = self.config, self.rng
        count = int(rng.integers(config.min_objects, config.max_objects + 1))
        actors = [self._spawn() for _ in range(count)]
        frames: List[FrameRecord] = []
        previous_rows: Dict[int, int] = {}
        births = 0
        for frame in range(config.sequence_length):
            if frame > 0:
                for actor in actors:
                    actor.position = actor.position + actor.velocity + rng.normal(0.0, config.motion_noise, size=2)
                survivors = []
                for actor in actors:
                    dies = rng.random() < config.death_probability
                    if not dies and actor.inside(config.arena_width, config.arena_height):
                        survivors.append(actor)
                actors = survivors
                if rng.random() < config.birth_probability:
                    actors.append(self._spawn())
                    births += 1
            detections: List[DetectionRecord] = []
            for actor in actors:
                detection = self._detect(actor)
                if detection is not None:
                    detections.append(detection)
            for _ in range(int(rng.poisson(config.clutter_rate * max(len(actors), 1)))):
                detections.append(self._clutter())
            matches = [
                (previous_rows[detection.gt_id], column)
                for column, detection in enumerate(detections)
                if detection.gt_id is not None and detection.gt_id in previous_rows
            ]
            gt = [
                GroundTruthObject(id=actor.identity, box=actor.box(), descriptor=actor.latent.tolist())
                for actor in actors
            ]
            frames.append(FrameRecord(frame=frame, gt=gt, detections=detections, matches=matches))
            previous_rows = {actor.identity: row for row, actor in enumerate(actors)}
        LOGGER.info(
            "[Scenario] generated | seed=%s | frames=%s | identities=%s | births=%s",
            config.seed,
            len(frames),
            self._next_identity,
            births,
        )
        return SyntheticSequence(config, tuple(frames))


def generate_sequence(config: ScenarioConfig | None = None) -> SyntheticSequence:
    return ScenarioGenerator(config or ScenarioConfig()).generate()


def count_births(sequence: SyntheticSequence) -> int:
    """Identities that first appear after frame 0."""

    seen = {obj.id for obj in sequence.frames[0].gt} if sequence.frames else set()
    births = 0
    for record in sequence.frames[1:]:
        for obj in record.gt:
            if obj.id not in seen:
                seen.add(obj.id)
                births += 1
    return births


def write_sequence(path: Path | str, sequence: SyntheticSequence) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [SequenceHeader(header=sequence.config).model_dump_json()]
    lines.extend(record.model_dump_json() for record in sequence.frames)
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    LOGGER.info("[Scenario] wrote | path=%s | frames=%s", target, len(sequence.frames))
    return target


def read_sequence(path: Path | str) -> SyntheticSequence:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Sequence file '{source}' was not found.")
    config: ScenarioConfig | None = None
    frames: List[FrameRecord] = []
    with source.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ArtifactParseError(source, line_number, f"invalid JSON: {exc.msg}") from exc
            try:
                if config is None:
                    config = SequenceHeader.model_validate(payload).header
                else:
                    frames.append(FrameRecord.model_validate(payload))
            except ValidationError as exc:
                raise ArtifactParseError(source, line_number, exc.errors()[0].get("msg", "invalid record")) from exc
    if config is None:
        raise ArtifactParseError(source, None, "missing header line")
    for index, record in enumerate(frames):
        if record.frame != index:
            raise ArtifactParseError(source, index + 2, f"expected frame {index}, found {record.frame}")
    return SyntheticSequence(config, tuple(frames))


def to_training_problems(sequence: SyntheticSequence, tracklet_length: int = 5) -> TrainingSet:
    """One instance per consecutive frame pair whose sides are both non-empty.

    Row i of an instance is the i-th ground-truth object of the earlier frame;
    its tracklet holds the detected box where one exists and the true box
    otherwise, and its descriptor is the latest detection descriptor.
    """

    histories: Dict[int, List[BoundingBox]] = {}
    descriptors: Dict[int, np.ndarray] = {}
    result = TrainingSet()
    previous: FrameRecord | None = None
    for record in sequence.frames:
        if previous is not None:
            rows, cols = len(previous.gt), len(record.detections)
            if rows == 0 or cols == 0:
                result.skipped += 1
            else:
                trajectories = tuple(
                    TrajectoryObservation(
                        Tracklet.from_history(histories[obj.id], tracklet_length), descriptors[obj.id]
                    )
                    for obj in previous.gt
                )
                detections = tuple(
                    DetectionObservation(BoundingBox.from_sequence(det.box), np.asarray(det.descriptor), det.gt_id)
                    for det in record.detections
                )
                result.instances.append(
                    TrainingInstance(
                        frame=record.frame,
                        inputs=ProblemInputs(trajectories, detections),
                        ground_truth=build_ground_truth(record.matches, rows, cols),
                    )
                )
        observed = {det.gt_id: det for det in record.detections if det.gt_id is not None}
        for obj in record.gt:
            detection = observed.get(obj.id)
            box = BoundingBox.from_sequence(detection.box if detection is not None else obj.box)
            histories.setdefault(obj.id, []).append(box)
            del histories[obj.id][:-tracklet_length]
            if detection is not None:
                descriptors[obj.id] = np.asarray(detection.descriptor)
            elif obj.id not in descriptors:
                descriptors[obj.id] = np.asarray(obj.descriptor)
        previous = record
    LOGGER.debug(
        "[Scenario] training problems | instances=%s | skipped=%s", len(result.instances), result.skipped
    )
    return result


def training_problems_from_files(paths: Iterable[Path | str], tracklet_length: int = 5) -> TrainingSet:
    combined = TrainingSet()
    for path in paths:
        chunk = to_training_problems(read_sequence(path), tracklet_length)
        combined.instances.extend(chunk.instances)
        combined.skipped += chunk.skipped
    return combined


def ground_truth_tracks(sequence: SyntheticSequence) -> List[Tuple[int, int, Tuple[float, float, float, float]]]:
    """(frame, id, box) rows of the true trajectories, for evaluation."""

    return [(record.frame, obj.id, obj.box) for record in sequence.frames for obj in record.gt]


def detections_for_frame(record: FrameRecord) -> List[DetectionObservation]:
    return [
        DetectionObservation(BoundingBox.from_sequence(det.box), np.asarray(det.descriptor), det.gt_id)
        for det in record.detections
    ]


__all__ = [
    "ScenarioGenerator",
    "SyntheticSequence",
    "TrainingInstance",
    "TrainingSet",
    "count_births",
    "detections_for_frame",
    "generate_sequence",
    "ground_truth_tracks",
    "read_sequence",
    "to_training_problems",
    "training_problems_from_files",
    "write_sequence",
]
