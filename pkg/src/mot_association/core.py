"""Domain types for frame-to-frame association and interpretation of association matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .tools import ValidationFailure

Pair = Tuple[int, int]


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Axis-aligned box; (x, y) is the top-left corner, in arena units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(value) for value in (self.x, self.y, self.w, self.h)):
            raise ValidationFailure(f"box coordinates must be finite: {self.as_tuple()}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationFailure(f"box extent must be positive: {self.as_tuple()}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise ValidationFailure(f"a box needs 4 values, got {len(values)}")
        return cls(*(float(value) for value in values))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def iou(self, other: "BoundingBox") -> float:
        left = max(self.x, other.x)
        top = max(self.y, other.y)
        right = min(self.x + self.w, other.x + other.w)
        bottom = min(self.y + self.h, other.y + other.h)
        intersection = max(0.0, right - left) * max(0.0, bottom - top)
        union = self.w * self.h + other.w * other.h - intersection
        return intersection / union if union > 0 else 0.0


@dataclass(frozen=True, slots=True)
class Tracklet:
    """The most recent L boxes of a trajectory, oldest first."""

    boxes: Tuple[BoundingBox, ...]

    def __post_init__(self) -> None:
        if not self.boxes:
            raise ValidationFailure("a tracklet needs at least one box")

    @classmethod
    def from_history(cls, history: Sequence[BoundingBox], length: int) -> "Tracklet":
        """Keep the newest ``length`` boxes, padding by repeating the oldest one."""

        if not history:
            raise ValidationFailure("cannot build a tracklet from an empty history")
        recent = list(history[-length:])
        padding = [recent[0]] * (length - len(recent))
        return cls(tuple(padding + recent))

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def last(self) -> BoundingBox:
        return self.boxes[-1]

    def as_array(self) -> np.ndarray:
        return np.stack([box.as_array() for box in self.boxes])

    def appended(self, box: BoundingBox) -> "Tracklet":
        return Tracklet(self.boxes[1:] + (box,))


@dataclass(frozen=True)
class AssociationProblem:
    """One bipartite graph between I trajectories and J detections.

    Matrices are tensors so the same value flows through training and
    inference; ``.data`` exposes the numpy array.
    """

    S: Tensor
    A: Tensor
    M: Tensor
    F_M: Tensor
    F_N: Tensor

    def __post_init__(self) -> None:
        if self.S.data.ndim != 2:
            raise ValidationFailure(f"S must be a matrix, got shape {self.S.shape}")
        rows, cols = self.S.shape
        if rows < 1 or cols < 1:
            raise ValidationFailure(f"problem needs I >= 1 and J >= 1, got {rows}x{cols}")
        for name in ("A", "M"):
            if getattr(self, name).shape != (rows, cols):
                raise ValidationFailure(f"{name} has shape {getattr(self, name).shape}, expected {(rows, cols)}")
        if self.F_M.data.ndim != 2 or self.F_M.shape[0] != rows:
            raise ValidationFailure(f"F_M has shape {self.F_M.shape}, expected ({rows}, D)")
        if self.F_N.data.ndim != 2 or self.F_N.shape[0] != cols:
            raise ValidationFailure(f"F_N has shape {self.F_N.shape}, expected ({cols}, D)")
        if self.F_M.shape[1] != self.F_N.shape[1]:
            raise ValidationFailure("F_M and F_N must share feature width D")

    @property
    def num_trajectories(self) -> int:
        return self.S.shape[0]

    @property
    def num_detections(self) -> int:
        return self.S.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.F_M.shape[1]


@dataclass(frozen=True)
class GroundTruthMatrix:
    """Binary association target with at most one 1 per row and column."""

    entries: np.ndarray
    k: int

    def __post_init__(self) -> None:
        entries = self.entries
        if entries.ndim != 2:
            raise ValidationFailure("ground truth must be a matrix")
        if not np.isin(entries, (0, 1)).all():
            raise ValidationFailure("ground truth entries must be 0 or 1")
        if (entries.sum(axis=1) > 1).any() or (entries.sum(axis=0) > 1).any():
            raise ValidationFailure("ground truth rows and columns may hold at most one match")
        if int(entries.sum()) != self.k or self.k > min(entries.shape):
            raise ValidationFailure(f"k={self.k} disagrees with the matrix")
        entries.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.entries.shape)

    @property
    def matched_rows(self) -> np.ndarray:
        return np.flatnonzero(self.entries.sum(axis=1) == 1)

    @property
    def matched_columns(self) -> np.ndarray:
        return np.flatnonzero(self.entries.sum(axis=0) == 1)

    @property
    def death_rows(self) -> np.ndarray:
        return np.flatnonzero(self.entries.sum(axis=1) == 0)

    @property
    def birth_columns(self) -> np.ndarray:
        return np.flatnonzero(self.entries.sum(axis=0) == 0)

    def as_float(self) -> np.ndarray:
        return self.entries.astype(np.float64)


@dataclass(frozen=True)
class AssociationResult:
    """Interpreted association: one-to-one pairs O, births B (columns), deaths D (rows)."""

    matches: FrozenSet[Pair] = field(default_factory=frozenset)
    births: FrozenSet[int] = field(default_factory=frozenset)
    deaths: FrozenSet[int] = field(default_factory=frozenset)

    def validate(self, rows: int, cols: int) -> "AssociationResult":
        matched_rows = [i for i, _ in self.matches]
        matched_cols = [j for _, j in self.matches]
        if len(set(matched_rows)) != len(matched_rows) or set(matched_rows) & self.deaths:
            raise ValidationFailure("a trajectory appears twice across O and D")
        if len(set(matched_cols)) != len(matched_cols) or set(matched_cols) & self.births:
            raise ValidationFailure("a detection appears twice across O and B")
        if set(matched_rows) | self.deaths != set(range(rows)):
            raise ValidationFailure("O and D do not cover every trajectory")
        if set(matched_cols) | self.births != set(range(cols)):
            raise ValidationFailure("O and B do not cover every detection")
        return self

    def row_assignment(self) -> dict[int, int]:
        return {i: j for i, j in self.matches}


def build_ground_truth(matches: Iterable[Pair], rows: int, cols: int) -> GroundTruthMatrix:
    """One-hot rows/columns for matched pairs; birth and death vectors stay all-zero."""

    if rows < 0 or cols < 0:
        raise ValidationFailure("matrix dimensions must be non-negative")
    entries = np.zeros((rows, cols), dtype=np.int8)
    seen_rows: set[int] = set()
    seen_cols: set[int] = set()
    count = 0
    for i, j in matches:
        if not (0 <= i < rows and 0 <= j < cols):
            raise ValidationFailure(f"match ({i}, {j}) is outside a {rows}x{cols} problem")
        if i in seen_rows or j in seen_cols:
            raise ValidationFailure(f"match ({i}, {j}) repeats a row or column")
        seen_rows.add(i)
        seen_cols.add(j)
        entries[i, j] = 1
        count += 1
    return GroundTruthMatrix(entries, count)


def extract_matches(ground_truth: GroundTruthMatrix) -> List[Pair]:
    rows, cols = np.nonzero(ground_truth.entries)
    return [(int(i), int(j)) for i, j in zip(rows, cols)]


def interpret_association(matrix: np.ndarray | Tensor) -> AssociationResult:
    """Greedy extraction of the largest remaining positive entry.

    Ties pick the smallest row, then the smallest column. Entries <= 0 never
    form a match; leftover rows become deaths and leftover columns births.
    """

    values = np.asarray(matrix.data if isinstance(matrix, Tensor) else matrix, dtype=np.float64)
    if values.ndim != 2:
        raise ValidationFailure(f"association matrix must be 2-D, got shape {values.shape}")
    if np.isnan(values).any():
        raise ValidationFailure("association matrix contains NaN")
    rows, cols = values.shape
    row_index, col_index = np.indices(values.shape)
    order = np.lexsort((col_index.ravel(), row_index.ravel(), -values.ravel()))
    used_rows = np.zeros(rows, dtype=bool)
    used_cols = np.zeros(cols, dtype=bool)
    matches: set[Pair] = set()
    for flat in order:
        i, j = divmod(int(flat), cols)
        if values[i, j] <= 0:
            break
        if used_rows[i] or used_cols[j]:
            continue
        used_rows[i] = used_cols[j] = True
        matches.add((i, j))
        if len(matches) == min(rows, cols):
            break
    return AssociationResult(
        matches=frozenset(matches),
        births=frozenset(int(j) for j in np.flatnonzero(~used_cols)),
        deaths=frozenset(int(i) for i in np.flatnonzero(~used_rows)),
    )


def association_accuracy(result: AssociationResult, ground_truth: GroundTruthMatrix) -> float:
    """Fraction of the I*J cells whose match / non-match label agrees with the ground truth."""

    rows, cols = ground_truth.shape
    if rows * cols == 0:
        return 1.0
    predicted = np.zeros((rows, cols), dtype=np.int8)
    for i, j in result.matches:
        predicted[i, j] = 1
    return float((predicted == ground_truth.entries).mean())


__all__ = [
    "AssociationProblem",
    "AssociationResult",
    "BoundingBox",
    "GroundTruthMatrix",
    "Pair",
    "Tracklet",
    "association_accuracy",
    "build_ground_truth",
    "extract_matches",
    "interpret_association",
]
