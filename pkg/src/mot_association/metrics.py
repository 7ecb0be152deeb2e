"""CLEAR-MOT and identity metrics for track files against ground truth.

Per frame, predictions are matched to ground truth by IoU: a ground-truth
object keeps its previous prediction when their overlap still clears the
threshold, and the rest are matched by the Hungarian solver, most matches
first and highest total IoU second. Identity metrics use a single global
assignment of ground-truth ids to prediction ids.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from .scenario import SyntheticSequence, ground_truth_tracks
from .schemas import EvalConfig, MetricsReport
from .solvers import hungarian
from .tools import ArtifactParseError, LOGGER, ValidationFailure
from .tracker import TRACK_COLUMNS


def iou_matrix(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """IoU of every pair of (x, y, w, h) rows."""

    left = np.asarray(left, dtype=np.float64).reshape(-1, 4)
    right = np.asarray(right, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(left[:, None, 0], right[None, :, 0])
    y1 = np.maximum(left[:, None, 1], right[None, :, 1])
    x2 = np.minimum(left[:, None, 0] + left[:, None, 2], right[None, :, 0] + right[None, :, 2])
    y2 = np.minimum(left[:, None, 1] + left[:, None, 3], right[None, :, 1] + right[None, :, 3])
    intersection = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    union = (left[:, 2] * left[:, 3])[:, None] + (right[:, 2] * right[:, 3])[None, :] - intersection
    return np.divide(intersection, union, out=np.zeros_like(intersection), where=union > 0)


def match_frame(
    gt_ids: Sequence[int],
    gt_boxes: np.ndarray,
    pred_ids: Sequence[int],
    pred_boxes: np.ndarray,
    previous: Mapping[int, int],
    threshold: float = 0.5,
) -> List[Tuple[int, int, float]]:
    """(gt row, prediction row, IoU) triples for one frame."""

    if len(gt_ids) == 0 or len(pred_ids) == 0:
        return []
    overlaps = iou_matrix(gt_boxes, pred_boxes)
    valid = overlaps >= threshold
    pred_row = {int(identity): row for row, identity in enumerate(pred_ids)}
    matches: List[Tuple[int, int, float]] = []
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    for row, identity in enumerate(gt_ids):
        column = pred_row.get(previous.get(int(identity), -1))
        if column is not None and column not in used_pred and valid[row, column]:
            matches.append((row, column, float(overlaps[row, column])))
            used_gt.add(row)
            used_pred.add(column)
    free_rows = [row for row in range(len(gt_ids)) if row not in used_gt]
    free_cols = [column for column in range(len(pred_ids)) if column not in used_pred]
    if free_rows and free_cols:
        sub_valid = valid[np.ix_(free_rows, free_cols)]
        if sub_valid.any():
            bonus = float(max(len(free_rows), len(free_cols)) + 1)
            weights = np.where(sub_valid, bonus + overlaps[np.ix_(free_rows, free_cols)], 0.0)
            for i, j in hungarian(weights).pairs:
                if sub_valid[i, j]:
                    row, column = free_rows[i], free_cols[j]
                    matches.append((row, column, float(overlaps[row, column])))
    return matches


@dataclass
class _TrackCoverage:
    present: int = 0
    tracked: int = 0
    fragmentations: int = 0
    was_tracked: bool = False
    interrupted: bool = False

    def update(self, tracked: bool) -> None:
        self.present += 1
        if tracked:
            self.tracked += 1
            if self.interrupted:
                self.fragmentations += 1
            self.was_tracked = True
            self.interrupted = False
        elif self.was_tracked:
            self.interrupted = True


@dataclass
class _Accumulator:
    matches: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    id_switches: int = 0
    iou_sum: float = 0.0
    gt_count: int = 0
    predictions: int = 0
    last_match: Dict[int, int] = field(default_factory=dict)
    coverage: Dict[int, _TrackCoverage] = field(default_factory=dict)
    identity_overlap: Dict[Tuple[int, int], int] = field(default_factory=dict)


def _frames(table: pd.DataFrame) -> Dict[int, pd.DataFrame]:
    return {int(frame): chunk for frame, chunk in table.groupby("frame", sort=True)}


def evaluate(
    tracks: pd.DataFrame,
    ground_truth: pd.DataFrame,
    config: EvalConfig | float | None = None,
) -> MetricsReport:
    """Score predicted tracks; both tables carry ``frame,id,x,y,w,h`` columns."""

    if isinstance(config, (int, float)):
        config = EvalConfig(iou_threshold=float(config))
    config = config or EvalConfig()
    if config.iou_threshold <= 0:
        raise ValidationFailure("match threshold must be positive")
    predicted = _frames(tracks)
    truth = _frames(ground_truth)
    acc = _Accumulator()
    empty = pd.DataFrame(columns=TRACK_COLUMNS)
    for frame in sorted(set(predicted) | set(truth)):
        gt_chunk = truth.get(frame, empty)
        pred_chunk = predicted.get(frame, empty)
        gt_ids = gt_chunk["id"].astype(int).tolist()
        pred_ids = pred_chunk["id"].astype(int).tolist()
        gt_boxes = gt_chunk[["x", "y", "w", "h"]].to_numpy(dtype=np.float64)
        pred_boxes = pred_chunk[["x", "y", "w", "h"]].to_numpy(dtype=np.float64)
        matches = match_frame(gt_ids, gt_boxes, pred_ids, pred_boxes, acc.last_match, config.iou_threshold)
        matched_gt = {row: column for row, column, _ in matches}
        for row, column, overlap in matches:
            gt_id, pred_id = gt_ids[row], pred_ids[column]
            previous = acc.last_match.get(gt_id)
            if previous is not None and previous != pred_id:
                acc.id_switches += 1
            acc.last_match[gt_id] = pred_id
            acc.iou_sum += overlap
        for row, gt_id in enumerate(gt_ids):
            acc.coverage.setdefault(gt_id, _TrackCoverage()).update(row in matched_gt)
        if gt_ids and pred_ids:
            rows, columns = np.nonzero(iou_matrix(gt_boxes, pred_boxes) >= config.iou_threshold)
            for row, column in zip(rows.tolist(), columns.tolist()):
                key = (gt_ids[row], pred_ids[column])
                acc.identity_overlap[key] = acc.identity_overlap.get(key, 0) + 1
        acc.matches += len(matches)
        acc.false_positives += len(pred_ids) - len(matches)
        acc.false_negatives += len(gt_ids) - len(matches)
        acc.gt_count += len(gt_ids)
        acc.predictions += len(pred_ids)
    return _report(acc, config)


def _identity_true_positives(overlap: Mapping[Tuple[int, int], int]) -> int:
    if not overlap:
        return 0
    gt_index = {identity: row for row, identity in enumerate(sorted({g for g, _ in overlap}))}
    pred_index = {identity: column for column, identity in enumerate(sorted({p for _, p in overlap}))}
    counts = np.zeros((len(gt_index), len(pred_index)))
    for (gt_id, pred_id), value in overlap.items():
        counts[gt_index[gt_id], pred_index[pred_id]] = value
    return int(round(hungarian(counts).objective))


def _report(acc: _Accumulator, config: EvalConfig) -> MetricsReport:
    tracks = list(acc.coverage.values())
    ratios = [track.tracked / track.present for track in tracks if track.present]
    idtp = _identity_true_positives(acc.identity_overlap)
    denominator = acc.gt_count + acc.predictions
    mota = 1.0 - (acc.false_negatives + acc.false_positives + acc.id_switches) / max(acc.gt_count, 1)
    return MetricsReport(
        mota=mota,
        motp=acc.iou_sum / acc.matches if acc.matches else 0.0,
        idf1=2.0 * idtp / denominator if denominator else 1.0,
        idp=idtp / acc.predictions if acc.predictions else 0.0,
        idr=idtp / acc.gt_count if acc.gt_count else 0.0,
        id_switches=acc.id_switches,
        mostly_tracked=sum(ratio >= config.mostly_tracked for ratio in ratios) / len(ratios) if ratios else 0.0,
        mostly_lost=sum(ratio <= config.mostly_lost for ratio in ratios) / len(ratios) if ratios else 0.0,
        fragmentations=sum(track.fragmentations for track in tracks),
        false_positives=acc.false_positives,
        false_negatives=acc.false_negatives,
        gt_count=acc.gt_count,
        matches=acc.matches,
        predictions=acc.predictions,
        gt_tracks=len(tracks),
    )


def read_tracks_csv(path: Path | str) -> pd.DataFrame:
    """Load a ``frame,id,x,y,w,h`` file; malformed rows raise with their line number."""

    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Track file '{source}' was not found.")
    try:
        raw = pd.read_csv(source, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ArtifactParseError(source, None, str(exc)) from exc
    if list(raw.columns) != TRACK_COLUMNS:
        raise ArtifactParseError(source, 1, f"expected header {','.join(TRACK_COLUMNS)}")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) | (numeric["w"] <= 0) | (numeric["h"] <= 0)
    integral = (numeric["frame"] % 1 == 0) & (numeric["id"] % 1 == 0)
    bad |= ~integral.fillna(False)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ArtifactParseError(source, row + 2, f"invalid record {raw.iloc[row].tolist()}")
    table = numeric.astype({"frame": "int64", "id": "int64"})
    if table.duplicated(subset=["frame", "id"]).any():
        row = int(np.flatnonzero(table.duplicated(subset=["frame", "id"]).to_numpy())[0])
        raise ArtifactParseError(source, row + 2, "identity repeated within a frame")
    return table


def ground_truth_frame(sequence: SyntheticSequence) -> pd.DataFrame:
    rows = [
        {"frame": frame, "id": identity, "x": box[0], "y": box[1], "w": box[2], "h": box[3]}
        for frame, identity, box in ground_truth_tracks(sequence)
    ]
    return pd.DataFrame(rows, columns=TRACK_COLUMNS).astype({"frame": "int64", "id": "int64"})


def evaluate_many(
    jobs: Mapping[str, Tuple[pd.DataFrame, pd.DataFrame]],
    config: EvalConfig | None = None,
) -> Dict[str, MetricsReport]:
    """Evaluate several (tracks, ground truth) pairs in parallel."""

    config = config or EvalConfig()
    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        futures = {name: executor.submit(evaluate, tracks, truth, config) for name, (tracks, truth) in jobs.items()}
        reports = {name: future.result() for name, future in futures.items()}
    for name, report in reports.items():
        LOGGER.info(
            "[Metrics] %s | MOTA=%.4f | IDF1=%.4f | IDSW=%s | FP=%s | FN=%s",
            name,
            report.mota,
            report.idf1,
            report.id_switches,
            report.false_positives,
            report.false_negatives,
        )
    return reports


def combine_reports(reports: Sequence[MetricsReport]) -> Dict[str, float]:
    """Pool counts across sequences; ratios are recomputed from the pooled counts."""

    gt = sum(report.gt_count for report in reports)
    errors = sum(report.false_negatives + report.false_positives + report.id_switches for report in reports)
    return {
        "mota": 1.0 - errors / max(gt, 1),
        "id_switches": sum(report.id_switches for report in reports),
        "false_positives": sum(report.false_positives for report in reports),
        "false_negatives": sum(report.false_negatives for report in reports),
        "gt_count": gt,
    }


__all__ = [
    "combine_reports",
    "evaluate",
    "evaluate_many",
    "ground_truth_frame",
    "iou_matrix",
    "match_frame",
    "read_tracks_csv",
]
