from __future__ import annotations

from pathlib import Path

import pytest

from mot_association.schemas import RunConfig, SolveRequest, load_run_config
from mot_association.tools import ConfigError, OperationTracker, build_timing_table, load_config_mapping

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.json"


def test_shipped_default_matches_model_defaults():
    assert load_run_config(DEFAULT_CONFIG) == RunConfig()


def test_missing_keys_take_defaults(tmp_path):
    path = tmp_path / "partial.yaml"
    path.write_text("train:\n  iterations: 12\n", encoding="utf-8")
    config = load_run_config(path)
    assert config.train.iterations == 12
    assert config.train.learning_rate == 0.001
    assert config.loss.positive_weight == 25.0
    assert config.tracker.birth_window == 5
    assert config.tracker.death_window == 2


def test_overrides_merge_sections():
    config = load_run_config(None, {"scenario": {"seed": 99}, "output_dir": "elsewhere"})
    assert config.scenario.seed == 99
    assert config.scenario.sequence_length == 100
    assert config.output_dir == Path("elsewhere")


def test_seed_override_reaches_scenario_and_training():
    config = RunConfig().with_seed(123)
    assert (config.scenario.seed, config.train.seed) == (123, 123)
    assert RunConfig().with_seed(None) == RunConfig()


@pytest.mark.parametrize(
    "payload",
    [
        {"unknown_section": {}},
        {"scenario": {"min_objects": 5, "max_objects": 2}},
        {"model": {"descriptor_dim": 8}},
        {"loss": {"bd_mode": "both"}},
        {"train": {"learning_rate": 0}},
    ],
)
def test_schema_violations_raise(payload):
    with pytest.raises(ConfigError):
        load_run_config(None, payload)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_mapping(tmp_path / "absent.json")


def test_non_mapping_config(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_mapping(path)


def test_solve_request_validation():
    assert SolveRequest(S=[[1.0, 2.0]]).theta_bd == 0.5
    with pytest.raises(ValueError):
        SolveRequest(S=[])
    with pytest.raises(ValueError):
        SolveRequest(S=[[1.0], [1.0, 2.0]])


def test_timing_table_groups_by_component():
    tracker = OperationTracker()
    for _ in range(3):
        with tracker.span("Tracker", "run", "oracle", lambda: {"frames": 1}):
            pass
    table = build_timing_table(tracker)
    assert table[0]["component"] == "Tracker"
    assert table[0]["operations"] == 3
