from __future__ import annotations

import numpy as np
import pytest

from mot_association.losses import element_loss
from mot_association.pipeline import AssociationModel
from mot_association.scenario import generate_sequence, to_training_problems, write_sequence
from mot_association.schemas import LossConfig, RunConfig, ScenarioConfig, TrainConfig
from mot_association.trainer import (
    HISTORY_COLUMNS,
    ProblemPrefetcher,
    evaluate_problems,
    lr_schedule,
    read_history_csv,
    train,
    train_model,
)
from mot_association.tools import ValidationFailure


def _run_config(tmp_path, small_model_config, iterations: int = 30) -> RunConfig:
    return RunConfig(
        scenario=ScenarioConfig(descriptor_dim=6, sequence_length=15, seed=7),
        model=small_model_config,
        train=TrainConfig(
            iterations=iterations,
            log_every=10,
            checkpoint_path=tmp_path / "model.ckpt",
            history_path=tmp_path / "history.csv",
        ),
        output_dir=tmp_path,
    )


def test_lr_schedule_steps_down():
    config = TrainConfig(learning_rate=0.001, decay_factor=10.0, decay_interval=2000)
    assert lr_schedule(0, config) == 0.001
    assert lr_schedule(1999, config) == 0.001
    assert lr_schedule(2000, config) == pytest.approx(0.0001)
    assert lr_schedule(4500, config) == pytest.approx(0.00001)
    with pytest.raises(ValidationFailure):
        lr_schedule(-1, config)


def test_prefetcher_order_is_seeded():
    items = [object() for _ in range(5)]

    def drain(seed: int):
        with ProblemPrefetcher(items, 40, seed, capacity=2) as prefetcher:
            return [items.index(item) for item in prefetcher]

    first = drain(3)
    assert len(first) == 40
    assert first == drain(3)
    assert first != drain(4)


def test_prefetcher_stops_early_without_hanging():
    items = [object()]
    with ProblemPrefetcher(items, 1000, 0, capacity=1) as prefetcher:
        next(iter(prefetcher))


def test_prefetcher_needs_instances():
    with pytest.raises(ValidationFailure):
        ProblemPrefetcher([], 1, 0)


def test_training_is_deterministic(tmp_path, small_model_config):
    config = _run_config(tmp_path, small_model_config)
    data = write_sequence(tmp_path / "train.jsonl", generate_sequence(config.scenario))
    first = train(config, data_paths=[data])
    first_history = (tmp_path / "history.csv").read_bytes()
    first_checkpoint = (tmp_path / "model.ckpt").read_bytes()
    second = train(config, data_paths=[data])
    assert (tmp_path / "history.csv").read_bytes() == first_history
    assert (tmp_path / "model.ckpt").read_bytes() == first_checkpoint
    assert [row.loss_total for row in first.history] == [row.loss_total for row in second.history]
    table = read_history_csv(tmp_path / "history.csv")
    assert list(table.columns) == HISTORY_COLUMNS
    assert len(table) == 30


def test_training_needs_data(tmp_path, small_model_config):
    with pytest.raises(ValidationFailure):
        train(_run_config(tmp_path, small_model_config))


def test_loss_goes_down_on_one_problem(small_model_config):
    sequence = generate_sequence(ScenarioConfig(descriptor_dim=6, sequence_length=3, seed=2))
    instance = to_training_problems(sequence, small_model_config.tracklet_length).instances[0]
    model = AssociationModel(small_model_config)
    history = train_model(model, [instance], TrainConfig(learning_rate=0.01, log_every=50), LossConfig(), 200)
    assert np.mean([row.loss_total for row in history[-10:]]) < history[0].loss_total


def test_no_gnn_training_supervises_only_affinities(small_model_config):
    sequence = generate_sequence(ScenarioConfig(descriptor_dim=6, sequence_length=3, seed=2))
    instance = to_training_problems(sequence, small_model_config.tracklet_length).instances[0]
    model = AssociationModel(small_model_config)
    history = train_model(model, [instance], TrainConfig(use_gnn=False), LossConfig(), 1)
    problem = AssociationModel(small_model_config).forward(instance.inputs, use_gnn=False).problem
    expected = sum(element_loss(matrix, instance.ground_truth).item() for matrix in (problem.A, problem.M, problem.S))
    assert history[0].loss_total == pytest.approx(expected, rel=1e-12)
    assert history[0].loss_Y == 0.0


@pytest.mark.slow
def test_overfits_a_fixed_set():
    sequence = generate_sequence(ScenarioConfig(sequence_length=40, seed=7))
    instances = to_training_problems(sequence).instances[:10]
    model = AssociationModel()
    before = evaluate_problems(model, instances).mean_matrix_loss
    train_model(model, instances, TrainConfig(iterations=2000, seed=7), LossConfig())
    after = evaluate_problems(model, instances).mean_matrix_loss
    assert after < 0.05 * before
