from __future__ import annotations

import json

import pytest

from mot_association.main import build_parser, main


@pytest.fixture
def config_file(tmp_path):
    payload = {
        "scenario": {"descriptor_dim": 6, "sequence_length": 12, "seed": 7},
        "model": {
            "appearance_dim": 4,
            "motion_dim": 4,
            "descriptor_dim": 6,
            "tracklet_length": 3,
            "head_hidden": 8,
            "encoder_hidden": 6,
            "gnn_width": 8,
            "relation_hidden": 8,
        },
        "train": {
            "iterations": 5,
            "log_every": 1,
            "checkpoint_path": str(tmp_path / "out" / "model.ckpt"),
            "history_path": str(tmp_path / "out" / "history.csv"),
        },
        "tracker": {"birth_window_override": 1},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_generate_twice_gives_identical_files(tmp_path, config_file):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["generate", "--config", str(config_file), "--seed", "7", "--output", str(first)]) == 0
    assert main(["generate", "--config", str(config_file), "--seed", "7", "--output", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    resolved = json.loads((tmp_path / "out" / "config.resolved.json").read_text(encoding="utf-8"))
    assert resolved["scenario"]["seed"] == 7
    assert resolved["loss"]["positive_weight"] == 25.0
    assert (tmp_path / "out" / "generate_report.md").exists()


def test_round_trip_generate_train_track_eval_plot(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    sequence = tmp_path / "seq.jsonl"
    common = ["--config", str(config_file)]
    assert main(["generate", *common, "--output", str(sequence)]) == 0
    assert main(["train", *common, "--data", str(sequence)]) == 0
    assert (out / "model.ckpt").exists()
    assert main(["track", *common, "--sequence", str(sequence), "--output", str(out / "tracks.csv")]) == 0
    capsys.readouterr()
    code = main(
        ["eval", *common, "--sequence", str(sequence), "--tracks", str(out / "tracks.csv"), "--output", str(out / "m.json")]
    )
    assert code == 0
    assert "MOTA" in capsys.readouterr().out
    report = json.loads((out / "m.json").read_text(encoding="utf-8"))
    assert set(report) == {str(out / "tracks.csv")}
    assert main(["plot", *common, "--history", str(out / "history.csv"), "--sequence", str(sequence), "--frames", "0", "1"]) == 0
    assert (out / "loss.png").exists()
    assert sorted(path.name for path in (out / "frames").iterdir()) == ["frame_00000.png", "frame_00001.png"]


def test_oracle_tracking_needs_no_checkpoint(tmp_path, config_file):
    sequence = tmp_path / "seq.jsonl"
    assert main(["generate", "--config", str(config_file), "--output", str(sequence)]) == 0
    code = main(["track", "--config", str(config_file), "--sequence", str(sequence), "--solver", "oracle"])
    assert code == 0
    assert (tmp_path / "out" / "tracks.csv").exists()


def test_learned_tracking_without_checkpoint_fails(tmp_path, config_file):
    sequence = tmp_path / "seq.jsonl"
    main(["generate", "--config", str(config_file), "--output", str(sequence)])
    missing = tmp_path / "absent.ckpt"
    assert main(["track", "--config", str(config_file), "--sequence", str(sequence), "--checkpoint", str(missing)]) == 2


def test_solve_reports_every_solver(tmp_path, capsys):
    problem = tmp_path / "problem.json"
    problem.write_text(json.dumps({"S": [[0.9, 0.1], [0.2, 0.3]], "theta_bd": 0.5}), encoding="utf-8")
    assert main(["solve", "--problem", str(problem), "--output-dir", str(tmp_path / "out")]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["hungarian"]["pairs"] == [[0, 0], [1, 1]]
    assert payload["brute_force"]["objective"] == pytest.approx(1.2)
    assert payload["birth_death"]["matches"] == [[0, 0]]
    assert payload["interpretation"]["matches"] == [[0, 0], [1, 1]]


def test_solve_rejects_ragged_matrix(tmp_path):
    problem = tmp_path / "problem.json"
    problem.write_text(json.dumps({"S": [[0.9, 0.1], [0.2]]}), encoding="utf-8")
    assert main(["solve", "--problem", str(problem), "--output-dir", str(tmp_path)]) == 2


def test_solve_on_a_directory_exits_with_two(tmp_path):
    assert main(["solve", "--problem", str(tmp_path), "--output-dir", str(tmp_path / "out")]) == 2


def test_plot_rejects_frames_outside_the_sequence(tmp_path, config_file):
    sequence = tmp_path / "seq.jsonl"
    assert main(["generate", "--config", str(config_file), "--output", str(sequence)]) == 0
    common = ["--config", str(config_file), "--sequence", str(sequence)]
    assert main(["plot", *common, "--frames", "500"]) == 2
    assert main(["plot", *common, "--frames", "-1"]) == 2
    assert not (tmp_path / "out" / "frames" / "frame_00000.png").exists()


def test_gradcheck_subset_passes(tmp_path, capsys):
    code = main(["gradcheck", "--instances", "2", "--ops", "sigmoid", "o2o_loss", "--output-dir", str(tmp_path)])
    assert code == 0
    assert "PASS" in capsys.readouterr().out


def test_missing_input_exits_with_two(tmp_path):
    assert main(["eval", "--sequence", str(tmp_path / "a"), "--tracks", str(tmp_path / "b"), "--output-dir", str(tmp_path)]) == 2


def test_invalid_config_exits_with_two(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"scenario": {"miss_rate": 2.0}}), encoding="utf-8")
    assert main(["generate", "--config", str(path), "--output-dir", str(tmp_path)]) == 2


def test_unknown_flag_exits_with_two():
    with pytest.raises(SystemExit) as info:
        main(["generate", "--no-such-flag"])
    assert info.value.code == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["generate"],
        ["train"],
        ["solve", "--problem", "p.json"],
        ["gradcheck"],
        ["track", "--sequence", "s.jsonl"],
        ["eval", "--sequence", "s.jsonl", "--tracks", "t.csv"],
        ["ablate"],
        ["plot"],
    ],
)
def test_every_subcommand_is_registered(argv):
    assert build_parser().parse_args(argv).command == argv[0]
