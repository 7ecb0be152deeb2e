"""End-to-end training of the association model on synthetic frame pairs."""
from __future__ import annotations

import math
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from .autodiff import AdamState, Tape, adam_step, clip_gradients
from .core import association_accuracy, interpret_association
from .losses import LossBreakdown, affinity_loss, assembled_loss, matrix_loss
from .pipeline import AssociationModel
from .scenario import TrainingInstance, training_problems_from_files
from .schemas import LossConfig, RunConfig, TrainConfig
from .tools import LOGGER, NonFiniteLossError, OperationTracker, ValidationFailure

HISTORY_COLUMNS = ["iteration", "lr", "loss_total", "loss_A", "loss_M", "loss_S", "loss_Y"]


def lr_schedule(iteration: int, config: TrainConfig | None = None) -> float:
    """Step decay: lr0 / factor ** floor(iteration / interval)."""

    config = config or TrainConfig()
    if iteration < 0:
        raise ValidationFailure(f"iteration must be non-negative, got {iteration}")
    return config.learning_rate / config.decay_factor ** (iteration // config.decay_interval)


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    lr: float
    loss_total: float
    loss_A: float
    loss_M: float
    loss_S: float
    loss_Y: float


@dataclass
class TrainResult:
    model: AssociationModel
    history: List[HistoryRow] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    history_path: Optional[Path] = None


class ProblemPrefetcher:
    """Bounded producer/consumer handoff of training instances.

    A background thread draws instance indices from its own seeded generator
    and fills a queue of at most ``capacity`` items; iteration order is the
    draw order, so a seed fixes the sequence of training problems.
    """

    _DONE = object()

    def __init__(self, instances: Sequence[TrainingInstance], iterations: int, seed: int, capacity: int = 8) -> None:
        if not instances:
            raise ValidationFailure("no training problems to sample from")
        self.instances = instances
        self.iterations = iterations
        self.seed = seed
        self._queue: queue.Queue = queue.Queue(maxsize=capacity)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="problem-prefetch", daemon=True)

    def _produce(self) -> None:
        rng = np.random.default_rng(self.seed)
        for _ in range(self.iterations):
            item = self.instances[int(rng.integers(len(self.instances)))]
            while not self._stop.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if self._stop.is_set():
                return
        self._queue.put(self._DONE)

    def __enter__(self) -> "ProblemPrefetcher":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._stop.set()
        while self._thread.is_alive():
            try:
                self._queue.get_nowait()
            except queue.Empty:
                self._thread.join(timeout=0.1)

    def __iter__(self) -> Iterator[TrainingInstance]:
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            yield item


def compute_losses(
    model: AssociationModel,
    instance: TrainingInstance,
    loss_config: LossConfig,
    use_gnn: bool = True,
) -> LossBreakdown:
    """Forward one instance; without the GNN only A, M and S are supervised."""

    output = model.forward(instance.inputs, use_gnn=use_gnn)
    problem = output.problem
    if not use_gnn:
        return affinity_loss(problem.A, problem.M, problem.S, instance.ground_truth, loss_config)
    return assembled_loss(problem.A, problem.M, problem.S, output.association, instance.ground_truth, loss_config)


def train_model(
    model: AssociationModel,
    instances: Sequence[TrainingInstance],
    train_config: TrainConfig,
    loss_config: LossConfig,
    iterations: Optional[int] = None,
) -> List[HistoryRow]:
    total_iterations = iterations or train_config.iterations
    params = model.parameters()
    state = AdamState(
        learning_rate=train_config.learning_rate,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        epsilon=train_config.epsilon,
        weight_decay=train_config.weight_decay,
    )
    history: List[HistoryRow] = []
    with ProblemPrefetcher(instances, total_iterations, train_config.seed, train_config.prefetch) as prefetcher:
        for iteration, instance in enumerate(prefetcher):
            lr = lr_schedule(iteration, train_config)
            with Tape() as tape:
                breakdown = compute_losses(model, instance, loss_config, train_config.use_gnn)
                value = breakdown.total.item()
                if not math.isfinite(value):
                    raise NonFiniteLossError(
                        f"loss became {value} at iteration {iteration} (frame {instance.frame}, "
                        f"problem {instance.ground_truth.shape})"
                    )
                tape.backward(breakdown.total)
            norm = clip_gradients(params, train_config.clip_norm)
            adam_step(params, state, lr)
            history.append(HistoryRow(iteration=iteration, lr=lr, **breakdown.as_row()))
            if iteration % train_config.log_every == 0 or iteration == total_iterations - 1:
                LOGGER.info(
                    "[Trainer] iteration=%s | lr=%.2e | loss=%.4f | loss_Y=%.4f | grad_norm=%.3f",
                    iteration,
                    lr,
                    value,
                    breakdown.loss_y,
                    norm,
                )
    return history


def train(
    config: RunConfig,
    instances: Optional[Sequence[TrainingInstance]] = None,
    data_paths: Optional[Sequence[Path | str]] = None,
    tracker: Optional[OperationTracker] = None,
    write_artifacts: bool = True,
) -> TrainResult:
    """Train from explicit instances or from sequence files, then write checkpoint and history."""

    tracker = tracker or OperationTracker()
    if instances is None:
        paths = list(data_paths or ([config.train.data_path] if config.train.data_path else []))
        if not paths:
            raise ValidationFailure("training needs a sequence file (train.data_path or --data)")
        training_set = training_problems_from_files(paths, config.model.tracklet_length)
        instances = training_set.instances
        LOGGER.info(
            "[Trainer] data | files=%s | instances=%s | skipped=%s",
            len(paths),
            len(instances),
            training_set.skipped,
        )
    model = AssociationModel(config.model, (config.scenario.arena_width, config.scenario.arena_height))
    with tracker.span(
        "Trainer",
        "fit",
        "gnn" if config.train.use_gnn else "affinity-only",
        lambda: {"iterations": config.train.iterations, "instances": len(instances)},
    ):
        history = train_model(model, instances, config.train, config.loss)
    result = TrainResult(model=model, history=history)
    if write_artifacts:
        result.checkpoint_path = model.save(config.train.checkpoint_path)
        result.history_path = write_history_csv(config.train.history_path, history)
    return result


def history_frame(history: Sequence[HistoryRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in history], columns=HISTORY_COLUMNS)


def write_history_csv(path: Path | str, history: Sequence[HistoryRow]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    history_frame(history).to_csv(target, index=False, float_format="%.10g")
    return target


def read_history_csv(path: Path | str) -> pd.DataFrame:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"History file '{source}' was not found.")
    frame = pd.read_csv(source)
    missing = [column for column in HISTORY_COLUMNS if column not in frame.columns]
    if missing:
        raise ValidationFailure(f"history file '{source}' lacks columns {missing}")
    return frame


@dataclass(frozen=True)
class EvaluationSummary:
    mean_matrix_loss: float
    accuracy: float
    problems: int

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def evaluate_problems(
    model: AssociationModel,
    instances: Sequence[TrainingInstance],
    loss_config: LossConfig | None = None,
    use_gnn: bool = True,
) -> EvaluationSummary:
    """Mean matrix loss of the final matrix and per-edge accuracy of its interpretation."""

    if not instances:
        return EvaluationSummary(0.0, 1.0, 0)
    loss_config = loss_config or LossConfig()
    losses: List[float] = []
    accuracies: List[float] = []
    for instance in instances:
        output = model.forward(instance.inputs, use_gnn=use_gnn)
        losses.append(matrix_loss(output.association, instance.ground_truth, loss_config).item())
        accuracies.append(association_accuracy(interpret_association(output.association), instance.ground_truth))
    return EvaluationSummary(float(np.mean(losses)), float(np.mean(accuracies)), len(instances))


__all__ = [
    "EvaluationSummary",
    "HISTORY_COLUMNS",
    "HistoryRow",
    "ProblemPrefetcher",
    "TrainResult",
    "compute_losses",
    "evaluate_problems",
    "history_frame",
    "lr_schedule",
    "read_history_csv",
    "train",
    "train_model",
    "write_history_csv",
]
