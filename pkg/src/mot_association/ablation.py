"""Full pipeline against its ablations on held-out synthetic sequences.

Rows: ``full`` (GNN output, assembled loss), ``no_gnn`` (S interpreted
directly, trained with element losses on A, M and S only), ``no_assembly`` (GNN trained on the
matrix loss of Y alone) and ``greedy_on_s`` (per-edge accuracy of a greedy
matching of the full model's S).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import AssociationResult, association_accuracy
from .metrics import combine_reports, evaluate_many, ground_truth_frame
from .pipeline import AssociationModel
from .scenario import SyntheticSequence, TrainingInstance, generate_sequence, to_training_problems
from .schemas import RunConfig, TrackerConfig
from .solvers import greedy
from .tools import LOGGER, OperationTracker
from .tracker import AffinityAssociation, AssociationStrategy, LearnedAssociation, OnlineTracker, tracks_frame
from .trainer import evaluate_problems, train

TEST_SEED_OFFSET = 1000


@dataclass(frozen=True)
class AblationRow:
    name: str
    edge_accuracy: float
    mota: Optional[float] = None
    id_switches: Optional[int] = None
    false_positives: Optional[int] = None
    false_negatives: Optional[int] = None

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


def _sequences(config: RunConfig, count: int, offset: int) -> List[SyntheticSequence]:
    scenario = config.scenario.model_copy(update=config.ablation.scenario_overrides())
    return [
        generate_sequence(scenario.model_copy(update={"seed": scenario.seed + offset + index}))
        for index in range(count)
    ]


def _instances(sequences: Sequence[SyntheticSequence], tracklet_length: int) -> List[TrainingInstance]:
    instances: List[TrainingInstance] = []
    for sequence in sequences:
        instances.extend(to_training_problems(sequence, tracklet_length).instances)
    return instances


def greedy_edge_accuracy(model: AssociationModel, instances: Sequence[TrainingInstance]) -> float:
    """Greedy row-by-row matching of S, keeping positive entries only."""

    if not instances:
        return 1.0
    scores = []
    for instance in instances:
        S = model.forward(instance.inputs, use_gnn=False).problem.S.data
        pairs = frozenset((i, j) for i, j in greedy(S).pairs if S[i, j] > 0)
        scores.append(association_accuracy(AssociationResult(matches=pairs), instance.ground_truth))
    return float(np.mean(scores))


def _track_row(
    name: str,
    strategy: AssociationStrategy,
    config: RunConfig,
    sequences: Sequence[SyntheticSequence],
    edge_accuracy: float,
) -> AblationRow:
    tracker_config: TrackerConfig = config.tracker
    jobs = {}
    for index, sequence in enumerate(sequences):
        online = OnlineTracker(strategy, tracker_config, config.model.tracklet_length)
        jobs[f"{name}/{index}"] = (tracks_frame(online.run(sequence)), ground_truth_frame(sequence))
    pooled = combine_reports(list(evaluate_many(jobs, config.eval).values()))
    return AblationRow(
        name=name,
        edge_accuracy=edge_accuracy,
        mota=pooled["mota"],
        id_switches=int(pooled["id_switches"]),
        false_positives=int(pooled["false_positives"]),
        false_negatives=int(pooled["false_negatives"]),
    )


def run_ablation(config: RunConfig, tracker: Optional[OperationTracker] = None) -> List[AblationRow]:
    tracker = tracker or OperationTracker()
    length = config.model.tracklet_length
    train_instances = _instances(_sequences(config, config.ablation.train_sequences, 0), length)
    test_sequences = _sequences(config, config.ablation.test_sequences, TEST_SEED_OFFSET)
    test_instances = _instances(test_sequences, length)
    LOGGER.info(
        "[Ablation] data | train_instances=%s | test_sequences=%s | test_instances=%s",
        len(train_instances),
        len(test_sequences),
        len(test_instances),
    )
    iterations = config.ablation.iterations
    variants = {
        "full": config.train.model_copy(update={"iterations": iterations, "use_gnn": True}),
        "no_gnn": config.train.model_copy(update={"iterations": iterations, "use_gnn": False}),
        "no_assembly": config.train.model_copy(update={"iterations": iterations, "use_gnn": True}),
    }
    models: Dict[str, AssociationModel] = {}
    for name, train_config in variants.items():
        loss = config.loss
        if name == "no_assembly":
            loss = loss.model_copy(update={"lambda_a": 0.0, "lambda_m": 0.0, "lambda_s": 0.0})
        variant = config.model_copy(update={"train": train_config, "loss": loss})
        models[name] = train(variant, instances=train_instances, tracker=tracker, write_artifacts=False).model

    rows = [
        _track_row(
            "full",
            LearnedAssociation(models["full"]),
            config,
            test_sequences,
            evaluate_problems(models["full"], test_instances, config.loss).accuracy,
        ),
        _track_row(
            "no_gnn",
            AffinityAssociation(models["no_gnn"]),
            config,
            test_sequences,
            evaluate_problems(models["no_gnn"], test_instances, config.loss, use_gnn=False).accuracy,
        ),
        _track_row(
            "no_assembly",
            LearnedAssociation(models["no_assembly"]),
            config,
            test_sequences,
            evaluate_problems(models["no_assembly"], test_instances, config.loss).accuracy,
        ),
        AblationRow(name="greedy_on_s", edge_accuracy=greedy_edge_accuracy(models["full"], test_instances)),
    ]
    for row in rows:
        LOGGER.info("[Ablation] %s", row.as_dict())
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    header = f"{'variant':<12}  {'MOTA':>8}  {'IDSW':>6}  {'FP':>6}  {'FN':>6}  {'edge_acc':>8}"
    lines = [header]
    for row in rows:
        mota = f"{row.mota:8.4f}" if row.mota is not None else f"{'-':>8}"
        idsw = f"{row.id_switches:6d}" if row.id_switches is not None else f"{'-':>6}"
        fp = f"{row.false_positives:6d}" if row.false_positives is not None else f"{'-':>6}"
        fn = f"{row.false_negatives:6d}" if row.false_negatives is not None else f"{'-':>6}"
        lines.append(f"{row.name:<12}  {mota}  {idsw}  {fp}  {fn}  {row.edge_accuracy:8.4f}")
    return "\n".join(lines)


__all__ = ["AblationRow", "format_ablation_table", "greedy_edge_accuracy", "run_ablation"]
