"""Loss-curve and per-frame overlay images."""
from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .scenario import SyntheticSequence  # noqa: E402
from .tools import LOGGER, ValidationFailure  # noqa: E402

LOSS_SERIES = ["loss_total", "loss_A", "loss_M", "loss_S", "loss_Y"]


def plot_loss_curve(history: pd.DataFrame, path: Path | str, smoothing: int = 50) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fig, (loss_axis, lr_axis) = plt.subplots(2, 1, figsize=(8, 6), sharex=True, gridspec_kw={"height_ratios": [3, 1]})
    for column in LOSS_SERIES:
        series = history[column].rolling(max(1, smoothing), min_periods=1).mean()
        loss_axis.plot(history["iteration"], series, label=column, linewidth=1.2 if column == "loss_total" else 0.8)
    loss_axis.set_yscale("log")
    loss_axis.set_ylabel("loss")
    loss_axis.legend(loc="upper right", fontsize="small")
    lr_axis.plot(history["iteration"], history["lr"], color="black", linewidth=0.8)
    lr_axis.set_yscale("log")
    lr_axis.set_xlabel("iteration")
    lr_axis.set_ylabel("lr")
    fig.tight_layout()
    fig.savefig(target, dpi=120)
    plt.close(fig)
    LOGGER.info("[Plot] loss curve | path=%s | iterations=%s", target, len(history))
    return target


def _draw_boxes(axis, rows: pd.DataFrame, style: str) -> None:
    colours = plt.get_cmap("tab20")
    for row in rows.itertuples(index=False):
        colour = colours(int(row.id) % 20)
        axis.add_patch(
            Rectangle((row.x, row.y), row.w, row.h, fill=False, edgecolor=colour, linestyle=style, linewidth=1.2)
        )
        axis.text(row.x, row.y, str(int(row.id)), color=colour, fontsize=6, va="bottom")


def plot_frame_overlays(
    sequence: SyntheticSequence,
    output_dir: Path | str,
    tracks: Optional[pd.DataFrame] = None,
    frames: Optional[Sequence[int]] = None,
) -> List[Path]:
    """One image per frame: ground truth dashed, detections grey, tracks solid with ids."""

    target = Path(output_dir)
    target.mkdir(parents=True, exist_ok=True)
    selected = list(frames) if frames is not None else list(range(len(sequence.frames)))
    outside = [index for index in selected if not 0 <= index < len(sequence.frames)]
    if outside:
        raise ValidationFailure(f"frames {outside} are outside the sequence (0..{len(sequence.frames) - 1})")
    width, height = sequence.arena
    written: List[Path] = []
    for index in selected:
        record = sequence.frames[index]
        fig, axis = plt.subplots(figsize=(5, 5 * height / width))
        axis.set_xlim(0, width)
        axis.set_ylim(height, 0)
        axis.set_aspect("equal")
        axis.set_title(f"frame {record.frame}")
        for detection in record.detections:
            x, y, w, h = detection.box
            axis.add_patch(Rectangle((x, y), w, h, fill=False, edgecolor="0.6", linewidth=0.6))
        truth = pd.DataFrame(
            [{"id": obj.id, "x": obj.box[0], "y": obj.box[1], "w": obj.box[2], "h": obj.box[3]} for obj in record.gt],
            columns=["id", "x", "y", "w", "h"],
        )
        _draw_boxes(axis, truth, "--")
        if tracks is not None:
            _draw_boxes(axis, tracks[tracks["frame"] == record.frame], "-")
        path = target / f"frame_{record.frame:05d}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    LOGGER.info("[Plot] overlays | dir=%s | frames=%s", target, len(written))
    return written


__all__ = ["plot_frame_overlays", "plot_loss_curve"]
