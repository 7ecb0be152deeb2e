"""Command-line entry point covering generation, training, solving, tracking and evaluation."""
from __future__ import annotations

import argparse
import json
import logging
from io import StringIO
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from . import __version__
from .ablation import format_ablation_table, run_ablation
from .core import interpret_association
from .gradcheck import format_report_table, run_gradient_suite, summarize
from .metrics import evaluate_many, ground_truth_frame, read_tracks_csv
from .pipeline import AssociationModel
from .plotting import plot_frame_overlays, plot_loss_curve
from .scenario import generate_sequence, read_sequence, write_sequence
from .schemas import RunConfig, SolveRequest, load_run_config
from .solvers import BRUTE_FORCE_LIMIT, available_solvers, solve_with_birth_death
from .tools import (
    LOG_FORMAT,
    LOGGER,
    AssociationError,
    OperationTracker,
    configure_logging,
    log_timing_summary,
    write_json,
)
from .tracker import run as run_tracker
from .trainer import read_history_csv, train

CommandResult = Tuple[int, Dict[str, Any]]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mot-association",
        description="Learned frame-to-frame data association for online multi-object tracking.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON/YAML run configuration; omitted keys take defaults.")
    common.add_argument("--seed", type=int, help="Overrides scenario.seed and train.seed.")
    common.add_argument("--output-dir", type=Path, help="Overrides output_dir.")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--timings", action="store_true", help="Log a per-component timing summary.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    generate = subparsers.add_parser("generate", parents=[common], help="Write a synthetic sequence file.")
    generate.add_argument("--output", type=Path, help="Sequence file (default <output_dir>/sequence.jsonl).")

    train_cmd = subparsers.add_parser("train", parents=[common], help="Train and write checkpoint + history.")
    train_cmd.add_argument("--data", type=Path, nargs="+", help="Sequence files (default train.data_path).")
    train_cmd.add_argument("--checkpoint", type=Path, help="Overrides train.checkpoint_path.")
    train_cmd.add_argument("--history", type=Path, help="Overrides train.history_path.")
    train_cmd.add_argument("--iterations", type=int, help="Overrides train.iterations.")
    train_cmd.add_argument("--no-gnn", action="store_true", help="Train the affinity network alone.")

    solve = subparsers.add_parser("solve", parents=[common], help="Run every solver on a problem file.")
    solve.add_argument("--problem", type=Path, required=True, help='JSON {"S": [[...]], "theta_bd": 0.5}.')

    gradcheck = subparsers.add_parser("gradcheck", parents=[common], help="Finite-difference check of every op.")
    gradcheck.add_argument("--instances", type=int, default=20)
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck.add_argument("--ops", nargs="*", help="Restrict to these op names.")

    track = subparsers.add_parser("track", parents=[common], help="Track a sequence file into a track CSV.")
    track.add_argument("--sequence", type=Path, required=True)
    track.add_argument("--checkpoint", type=Path, help="Overrides tracker.checkpoint_path.")
    track.add_argument("--solver", choices=["learned", "affinity", "hungarian-baseline", "oracle"])
    track.add_argument("--output", type=Path, help="Track CSV (default <output_dir>/tracks.csv).")

    evaluate_cmd = subparsers.add_parser("eval", parents=[common], help="Score track files against ground truth.")
    evaluate_cmd.add_argument("--sequence", type=Path, nargs="+", required=True)
    evaluate_cmd.add_argument("--tracks", type=Path, nargs="+", required=True)
    evaluate_cmd.add_argument("--output", type=Path, help="JSON report (default <output_dir>/metrics.json).")

    ablate = subparsers.add_parser("ablate", parents=[common], help="Compare full, no-GNN and no-assembly.")
    ablate.add_argument("--output", type=Path, help="JSON report (default <output_dir>/ablation.json).")

    plot = subparsers.add_parser("plot", parents=[common], help="Loss curve and per-frame overlays.")
    plot.add_argument("--history", type=Path)
    plot.add_argument("--sequence", type=Path)
    plot.add_argument("--tracks", type=Path)
    plot.add_argument("--frames", type=int, nargs="*", help="Frame indices to draw (default all).")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config).with_seed(args.seed)
    if args.output_dir is not None:
        config = config.model_copy(update={"output_dir": args.output_dir})
    return config


def _generate(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    target = args.output or config.output_dir / "sequence.jsonl"
    with tracker.span("Scenario", "generate", "sequence", lambda: {"seed": config.scenario.seed}):
        sequence = generate_sequence(config.scenario)
    write_sequence(target, sequence)
    return 0, {"sequence": str(target), "frames": len(sequence), "seed": config.scenario.seed}


def _train(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    updates: Dict[str, Any] = {}
    if args.checkpoint is not None:
        updates["checkpoint_path"] = args.checkpoint
    if args.history is not None:
        updates["history_path"] = args.history
    if args.iterations is not None:
        updates["iterations"] = args.iterations
    if args.no_gnn:
        updates["use_gnn"] = False
    config = config.model_copy(update={"train": config.train.model_copy(update=updates)})
    result = train(config, data_paths=args.data, tracker=tracker)
    last = result.history[-1]
    return 0, {
        "checkpoint": str(result.checkpoint_path),
        "history": str(result.history_path),
        "iterations": len(result.history),
        "final_loss": last.loss_total,
        "final_loss_Y": last.loss_Y,
    }


def _solve(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    if not args.problem.exists():
        raise FileNotFoundError(f"Problem file '{args.problem}' was not found.")
    try:
        request = SolveRequest.model_validate_json(args.problem.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise AssociationError(f"invalid problem file '{args.problem}': {exc.errors()[0].get('msg')}") from exc
    matrix = np.asarray(request.S, dtype=np.float64)
    payload: Dict[str, Any] = {"shape": list(matrix.shape)}
    for solver in available_solvers():
        if solver.name == "brute_force" and min(matrix.shape) > BRUTE_FORCE_LIMIT:
            payload[solver.name] = None
            continue
        payload[solver.name] = solver.execute(matrix).as_dict()
    thresholded = solve_with_birth_death(matrix, request.theta_bd)
    interpreted = interpret_association(matrix)
    for name, result in (("birth_death", thresholded), ("interpretation", interpreted)):
        payload[name] = {
            "matches": sorted([list(pair) for pair in result.matches]),
            "births": sorted(result.births),
            "deaths": sorted(result.deaths),
        }
    return 0, payload


def _gradcheck(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    with tracker.span("GradCheck", "suite", "all", lambda: {"instances": args.instances}):
        reports = run_gradient_suite(args.instances, args.tolerance, names=args.ops)
    print(format_report_table(reports))
    summary = summarize(reports)
    return (0 if summary["passed"] else 1), summary


def _load_model(config: RunConfig, checkpoint: Optional[Path], arena: Tuple[float, float]) -> Optional[AssociationModel]:
    if config.tracker.solver == "oracle":
        return None
    path = checkpoint or config.tracker.checkpoint_path or config.train.checkpoint_path
    return AssociationModel.load(path, config.model, arena)


def _track(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    if args.solver is not None:
        config = config.model_copy(update={"tracker": config.tracker.model_copy(update={"solver": args.solver})})
    sequence = read_sequence(args.sequence)
    model = _load_model(config, args.checkpoint, sequence.arena)
    target = args.output or config.output_dir / "tracks.csv"
    emissions = run_tracker(sequence, config.tracker, model, target, config.model.tracklet_length, tracker)
    return 0, {
        "tracks": str(target),
        "solver": config.tracker.solver,
        "records": len(emissions),
        "identities": len({emission.identity for emission in emissions}),
    }


def _evaluate(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    if len(args.sequence) != len(args.tracks):
        raise AssociationError("--sequence and --tracks need the same number of files")
    jobs = {
        str(tracks): (read_tracks_csv(tracks), ground_truth_frame(read_sequence(sequence)))
        for sequence, tracks in zip(args.sequence, args.tracks)
    }
    with tracker.span("Metrics", "evaluate", "sequences", lambda: {"sequences": len(jobs)}):
        reports = evaluate_many(jobs, config.eval)
    for name, report in reports.items():
        print(f"== {name}\n{report.as_table()}")
    payload = {name: report.model_dump() for name, report in reports.items()}
    write_json(args.output or config.output_dir / "metrics.json", payload)
    return 0, payload


def _ablate(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    rows = run_ablation(config, tracker)
    print(format_ablation_table(rows))
    payload = {"rows": [row.as_dict() for row in rows]}
    write_json(args.output or config.output_dir / "ablation.json", payload)
    return 0, payload


def _plot(args: argparse.Namespace, config: RunConfig, tracker: OperationTracker) -> CommandResult:
    if args.history is None and args.sequence is None:
        raise AssociationError("plot needs --history and/or --sequence")
    payload: Dict[str, Any] = {}
    if args.history is not None:
        payload["loss_curve"] = str(plot_loss_curve(read_history_csv(args.history), config.output_dir / "loss.png"))
    if args.sequence is not None:
        tracks = read_tracks_csv(args.tracks) if args.tracks is not None else None
        written = plot_frame_overlays(read_sequence(args.sequence), config.output_dir / "frames", tracks, args.frames)
        payload["overlays"] = [str(path) for path in written]
    return 0, payload


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig, OperationTracker], CommandResult]] = {
    "generate": _generate,
    "train": _train,
    "solve": _solve,
    "gradcheck": _gradcheck,
    "track": _track,
    "eval": _evaluate,
    "ablate": _ablate,
    "plot": _plot,
}


def _capture_logs() -> tuple[StringIO, logging.Handler]:
    stream = StringIO()
    handler = logging.StreamHandler(stream)
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    LOGGER.addHandler(handler)
    return stream, handler


def _write_markdown(target_path: Path, command: str, output: Dict[str, Any], logs: str) -> None:
    target_path.parent.mkdir(parents=True, exist_ok=True)
    markdown_lines = [
        f"# mot-association {command}",
        "",
        "## Output",
        "```json",
        json.dumps(output, ensure_ascii=False, indent=2, default=str),
        "```",
        "",
        "## Logs",
        "```text",
        logs.strip(),
        "```",
        "",
    ]
    target_path.write_text("\n".join(markdown_lines), encoding="utf-8")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on a failed check and 2 on errors."""

    args = build_parser().parse_args(argv)
    configure_logging(getattr(logging, args.log_level))
    tracker = OperationTracker()
    log_stream, handler = _capture_logs()
    try:
        config = resolve_config(args)
        write_json(config.output_dir / "config.resolved.json", config.model_dump(mode="json"))
        code, output = COMMANDS[args.command](args, config, tracker)
    except (AssociationError, OSError) as exc:
        LOGGER.error("[CLI] %s failed | %s", args.command, exc)
        return 2
    finally:
        LOGGER.removeHandler(handler)
    if args.timings:
        log_timing_summary(tracker)
    _write_markdown(config.output_dir / f"{args.command}_report.md", args.command, output, log_stream.getvalue())
    print(json.dumps(output, ensure_ascii=False, indent=2, default=str))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
