from __future__ import annotations

import pytest

from mot_association.ablation import format_ablation_table, run_ablation
from mot_association.schemas import AblationConfig, RunConfig, ScenarioConfig, TrainConfig
from mot_association.tools import OperationTracker, build_timing_table


def test_ablation_rows_and_table(tmp_path, small_model_config):
    config = RunConfig(
        scenario=ScenarioConfig(descriptor_dim=6, sequence_length=12, seed=5),
        model=small_model_config,
        train=TrainConfig(log_every=10, checkpoint_path=tmp_path / "m.ckpt", history_path=tmp_path / "h.csv"),
        ablation=AblationConfig(train_sequences=1, test_sequences=1, iterations=10),
        output_dir=tmp_path,
    )
    tracker = OperationTracker()
    rows = run_ablation(config, tracker)
    assert [row.name for row in rows] == ["full", "no_gnn", "no_assembly", "greedy_on_s"]
    for row in rows[:3]:
        assert row.mota is not None and row.mota <= 1.0
        assert row.id_switches >= 0
    assert rows[3].mota is None
    for row in rows:
        assert 0.0 <= row.edge_accuracy <= 1.0
    table = format_ablation_table(rows)
    assert table.splitlines()[0].split()[0] == "variant"
    assert len(table.splitlines()) == 5
    assert not (tmp_path / "m.ckpt").exists()
    assert {entry["component"] for entry in build_timing_table(tracker)} >= {"Trainer"}


@pytest.mark.slow
def test_full_pipeline_beats_its_ablations(tmp_path):
    config = RunConfig(
        train=TrainConfig(checkpoint_path=tmp_path / "m.ckpt", history_path=tmp_path / "h.csv"),
        output_dir=tmp_path,
    )
    rows = {row.name: row for row in run_ablation(config)}
    full = rows["full"]
    assert full.id_switches < rows["no_gnn"].id_switches
    assert full.mota > rows["no_gnn"].mota
    assert full.mota >= rows["no_assembly"].mota
    assert full.edge_accuracy > rows["greedy_on_s"].edge_accuracy
