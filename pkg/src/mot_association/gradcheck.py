"""Finite-difference verification of every differentiable op and of the full training composition."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .affinity import DetectionObservation, ProblemInputs, TrajectoryObservation
from .autodiff import GradCheckReport, Module, Parameter, Tensor, finite_diff_check
from .core import BoundingBox, GroundTruthMatrix, Tracklet, build_ground_truth
from .gnn import GnnParameters, feature_update, relation_update
from .losses import assembled_loss, bd_loss, element_loss, matrix_loss, o2o_loss
from .pipeline import AssociationModel
from .schemas import LossConfig, ModelConfig
from .tools import LOGGER

Builder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[np.ndarray]]]

COMPOSITION_PARAMETERS = (
    "affinity.motion.lstm.weight",
    "affinity.motion.box.0.weight",
    "affinity.appearance.0.weight",
    "affinity.phi_a.0.weight",
    "affinity.phi_m.1.weight",
    "affinity.phi_s.0.weight",
    "gnn.weight",
    "gnn.relation.0.weight",
)

GRADCHECK_MODEL = ModelConfig(
    appearance_dim=4,
    motion_dim=4,
    descriptor_dim=6,
    tracklet_length=3,
    head_hidden=6,
    encoder_hidden=5,
    gnn_width=5,
    relation_hidden=6,
)


@dataclass(frozen=True)
class GradientCase:
    name: str
    build: Builder
    max_coordinates: Optional[int] = None


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    values = rng.standard_normal(shape)
    return np.sign(values) * (np.abs(values) + 0.05)


def _shape(rng: np.random.Generator, low: int = 1, high: int = 5) -> Tuple[int, int]:
    return int(rng.integers(low, high + 1)), int(rng.integers(low, high + 1))


def random_ground_truth(rng: np.random.Generator, rows: int, cols: int) -> GroundTruthMatrix:
    k = int(rng.integers(0, min(rows, cols) + 1))
    chosen_rows = rng.permutation(rows)[:k]
    chosen_cols = rng.permutation(cols)[:k]
    return build_ground_truth(zip(chosen_rows.tolist(), chosen_cols.tolist()), rows, cols)


def random_inputs(rng: np.random.Generator, rows: int, cols: int, config: ModelConfig) -> ProblemInputs:
    def box() -> BoundingBox:
        return BoundingBox(rng.uniform(0, 0.9), rng.uniform(0, 0.8), rng.uniform(0.03, 0.1), rng.uniform(0.05, 0.2))

    trajectories = tuple(
        TrajectoryObservation(
            Tracklet(tuple(box() for _ in range(config.tracklet_length))),
            rng.standard_normal(config.descriptor_dim),
        )
        for _ in range(rows)
    )
    detections = tuple(
        DetectionObservation(box(), rng.standard_normal(config.descriptor_dim)) for _ in range(cols)
    )
    return ProblemInputs(trajectories, detections)


@contextmanager
def bind_parameters(module: Module, replacements: Mapping[str, Tensor]) -> Iterator[None]:
    """Temporarily swap named parameters of ``module`` for the given tensors."""

    swapped: List[Tuple[object, str, Parameter]] = []

    def visit(owner: object) -> None:
        for attribute, value in list(vars(owner).items()):
            if isinstance(value, Parameter) and value.name in replacements:
                swapped.append((owner, attribute, value))
                setattr(owner, attribute, replacements[value.name])
            elif isinstance(value, Module):
                visit(value)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        visit(item)

    visit(module)
    try:
        yield
    finally:
        for owner, attribute, original in reversed(swapped):
            setattr(owner, attribute, original)


def _unary(op: Callable[[Tensor], Tensor], kink_free: bool = False) -> Builder:
    def build(rng: np.random.Generator):
        shape = _shape(rng)
        value = _away_from_zero(rng, shape) if kink_free else rng.standard_normal(shape)
        return op, [value]

    return build


def _binary_same_shape(op: Callable[[Tensor, Tensor], Tensor]) -> Builder:
    def build(rng: np.random.Generator):
        shape = _shape(rng)
        return op, [rng.standard_normal(shape), rng.standard_normal(shape)]

    return build


def _build_matmul(rng: np.random.Generator):
    rows, inner = _shape(rng)
    cols = int(rng.integers(1, 6))
    return ad.matmul, [rng.standard_normal((rows, inner)), rng.standard_normal((inner, cols))]


def _build_add_row(rng: np.random.Generator):
    rows, cols = _shape(rng)
    return ad.add, [rng.standard_normal((rows, cols)), rng.standard_normal((1, cols))]


def _build_linear(rng: np.random.Generator):
    rows, fan_in = _shape(rng)
    fan_out = int(rng.integers(1, 6))
    return ad.linear, [
        rng.standard_normal((rows, fan_in)),
        rng.standard_normal((fan_in, fan_out)),
        rng.standard_normal((1, fan_out)),
    ]


def _build_concat(rng: np.random.Generator):
    rows = int(rng.integers(1, 5))
    widths = rng.integers(1, 4, size=3)
    return (lambda a, b, c: ad.concat([a, b, c], axis=1)), [rng.standard_normal((rows, int(w))) for w in widths]


def _build_pairwise(op: Callable[[Tensor, Tensor], Tensor]) -> Builder:
    def build(rng: np.random.Generator):
        rows, cols = _shape(rng)
        width = int(rng.integers(1, 4))
        return op, [rng.standard_normal((rows, width)), rng.standard_normal((cols, width))]

    return build


def _build_slice(rng: np.random.Generator):
    rows, cols = _shape(rng, 1, 5)
    cols += 1
    start = int(rng.integers(0, cols - 1))
    stop = int(rng.integers(start + 1, cols + 1))
    return (lambda a: ad.slice_columns(a, start, stop)), [rng.standard_normal((rows, cols))]


def _build_take_rows(rng: np.random.Generator):
    rows, cols = _shape(rng)
    index = rng.integers(0, rows, size=int(rng.integers(1, 6))).tolist()
    return (lambda a: ad.take_rows(a, index)), [rng.standard_normal((rows, cols))]


def _build_reshape(rng: np.random.Generator):
    rows, cols = _shape(rng)
    return (lambda a: ad.reshape(a, (cols, rows))), [rng.standard_normal((rows, cols))]


def _loss_case(loss: Callable[[Tensor, GroundTruthMatrix], Tensor]) -> Builder:
    def build(rng: np.random.Generator):
        rows, cols = _shape(rng)
        ground_truth = random_ground_truth(rng, rows, cols)
        return (lambda y: loss(y, ground_truth)), [2.0 * rng.standard_normal((rows, cols))]

    return build


def _build_assembled(rng: np.random.Generator):
    rows, cols = _shape(rng)
    ground_truth = random_ground_truth(rng, rows, cols)

    def op(a: Tensor, m: Tensor, s: Tensor, y: Tensor) -> Tensor:
        return assembled_loss(a, m, s, y, ground_truth, LossConfig()).total

    return op, [rng.standard_normal((rows, cols)) for _ in range(4)]


def _gnn_parameters(rng: np.random.Generator, node_dim: int, width: int) -> GnnParameters:
    return GnnParameters(node_dim, width, 6, np.random.default_rng(int(rng.integers(1 << 31))))


def _build_feature_update(rng: np.random.Generator):
    rows, cols = _shape(rng)
    params = _gnn_parameters(rng, 4, 5)

    def op(s: Tensor, f_m: Tensor, f_n: Tensor, weight: Tensor) -> Tensor:
        with bind_parameters(params, {"gnn.weight": weight}):
            updated_m, updated_n = feature_update(s, f_m, f_n, params)
        return ad.concat([ad.reshape(updated_m, (1, rows * 5)), ad.reshape(updated_n, (1, cols * 5))], axis=1)

    return op, [
        rng.standard_normal((rows, cols)),
        rng.standard_normal((rows, 4)),
        rng.standard_normal((cols, 4)),
        params.weight.data.copy(),
    ]


def _build_relation_update(rng: np.random.Generator):
    rows, cols = _shape(rng)
    params = _gnn_parameters(rng, 4, 5)

    def op(updated_m: Tensor, updated_n: Tensor, hidden: Tensor) -> Tensor:
        with bind_parameters(params, {"gnn.relation.0.weight": hidden}):
            return relation_update(updated_m, updated_n, params)

    return op, [
        rng.standard_normal((rows, 5)),
        rng.standard_normal((cols, 5)),
        params.relation.layers[0].weight.data.copy(),
    ]


def _build_composition(rng: np.random.Generator):
    rows, cols = _shape(rng, 1, 4)
    config = GRADCHECK_MODEL.model_copy(update={"init_seed": int(rng.integers(1 << 31))})
    model = AssociationModel(config)
    inputs = random_inputs(rng, rows, cols, config)
    ground_truth = random_ground_truth(rng, rows, cols)
    named = model.named_parameters()

    def op(*tensors: Tensor) -> Tensor:
        with bind_parameters(model, dict(zip(COMPOSITION_PARAMETERS, tensors))):
            output = model.forward(inputs)
            problem = output.problem
            return assembled_loss(problem.A, problem.M, problem.S, output.association, ground_truth).total

    return op, [named[name].data.copy() for name in COMPOSITION_PARAMETERS]


def gradient_cases() -> List[GradientCase]:
    return [
        GradientCase("matmul", _build_matmul),
        GradientCase("add", _build_add_row),
        GradientCase("subtract", _binary_same_shape(ad.subtract)),
        GradientCase("multiply", _binary_same_shape(ad.multiply)),
        GradientCase("scale", _unary(lambda a: ad.scale(a, -1.7))),
        GradientCase("relu", _unary(ad.relu, kink_free=True)),
        GradientCase("sigmoid", _unary(ad.sigmoid)),
        GradientCase("tanh", _unary(ad.tanh)),
        GradientCase("softplus", _unary(ad.softplus)),
        GradientCase("square", _unary(ad.square)),
        GradientCase("row_softmax", _unary(ad.row_softmax)),
        GradientCase("row_log_softmax", _unary(ad.row_log_softmax)),
        GradientCase("transpose", _unary(ad.transpose)),
        GradientCase("reshape", _build_reshape),
        GradientCase("concat", _build_concat),
        GradientCase("slice_columns", _build_slice),
        GradientCase("take_rows", _build_take_rows),
        GradientCase("total", _unary(ad.total)),
        GradientCase("linear", _build_linear),
        GradientCase("pairwise_concat", _build_pairwise(ad.pairwise_concat)),
        GradientCase("pairwise_subtract", _build_pairwise(ad.pairwise_subtract)),
        GradientCase("element_loss", _loss_case(element_loss)),
        GradientCase("o2o_loss", _loss_case(o2o_loss)),
        GradientCase("bd_loss", _loss_case(bd_loss)),
        GradientCase("matrix_loss", _loss_case(matrix_loss)),
        GradientCase("assembled_loss", _build_assembled),
        GradientCase("feature_update", _build_feature_update),
        GradientCase("relation_update", _build_relation_update),
        GradientCase("assembled_loss(gnn(affinity))", _build_composition, max_coordinates=12),
    ]


def run_gradient_suite(
    instances: int = 20,
    tolerance: float = 1e-4,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> List[GradCheckReport]:
    """One aggregated report per case: the worst error over ``instances`` seeded draws."""

    reports: List[GradCheckReport] = []
    for case_index, case in enumerate(gradient_cases()):
        if names is not None and case.name not in names:
            continue
        worst, coordinates, kinks = 0.0, 0, 0
        for instance in range(instances):
            rng = np.random.default_rng([seed, case_index, instance])
            op, inputs = case.build(rng)
            report = finite_diff_check(
                op,
                inputs,
                tolerance,
                name=case.name,
                seed=instance,
                max_coordinates=case.max_coordinates,
            )
            worst = max(worst, report.max_relative_error)
            coordinates += report.coordinates
            kinks += report.skipped_kinks
        reports.append(GradCheckReport(case.name, worst, tolerance, coordinates, kinks))
        LOGGER.info(
            "[GradCheck] %s | max_rel=%.2e | coordinates=%s | passed=%s",
            case.name,
            worst,
            coordinates,
            worst <= tolerance,
        )
    return reports


def format_report_table(reports: Sequence[GradCheckReport]) -> str:
    width = max([len("op")] + [len(report.name) for report in reports])
    lines = [f"{'op'.ljust(width)}  {'max_rel_err':>12}  {'coords':>7}  {'kinks':>5}  result"]
    for report in reports:
        lines.append(
            f"{report.name.ljust(width)}  {report.max_relative_error:12.3e}  {report.coordinates:7d}  "
            f"{report.skipped_kinks:5d}  {'PASS' if report.passed else 'FAIL'}"
        )
    return "\n".join(lines)


def summarize(reports: Sequence[GradCheckReport]) -> Dict[str, object]:
    return {"passed": all(report.passed for report in reports), "ops": [report.as_dict() for report in reports]}


__all__ = [
    "COMPOSITION_PARAMETERS",
    "GRADCHECK_MODEL",
    "GradientCase",
    "bind_parameters",
    "format_report_table",
    "gradient_cases",
    "random_ground_truth",
    "random_inputs",
    "run_gradient_suite",
    "summarize",
]
