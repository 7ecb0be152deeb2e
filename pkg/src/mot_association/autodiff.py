"""Minimal reverse-mode differentiation over numpy float64 arrays.

Forward ops record onto the tape that is active in the current context; the
same ops evaluated with no active tape run in inference mode and record
nothing.

Examples
--------
>>> x = Parameter("x", np.array([3.0]))
>>> with Tape() as tape:
...     loss = total(square(x))
...     tape.backward(loss)
>>> float(x.grad[0])
6.0
"""
from __future__ import annotations

import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .tools import LOGGER, TapeStateError, ValidationFailure

DTYPE = np.float64

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("mot_association_tape", default=None)


class Tensor:
    """Dense float64 array that may participate in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_tape")

    def __init__(self, data: np.ndarray | float | Sequence, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationFailure(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named learnable tensor; its gradient persists across backward passes until zeroed."""

    __slots__ = ("name",)

    def __init__(self, name: str, value: np.ndarray) -> None:
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def as_tensor(value: Tensor | np.ndarray | float | Sequence) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Records forward ops in execution order and replays them backwards."""

    def __init__(self) -> None:
        self.nodes: List[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise TapeStateError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> None:
        out._parents = parents
        out._backward = backward
        out._tape = self
        self.nodes.append(out)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(parameter) into every reachable parameter."""

        if not self.nodes:
            raise TapeStateError("backward called before any forward op was recorded")
        if loss.data.size != 1:
            raise ValidationFailure(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeStateError("loss was not produced on this tape")
        for node in self.nodes:
            if not isinstance(node, Parameter):
                node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.data.shape)
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _emit(value: np.ndarray, parents: Tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(value, requires_grad=any(parent.requires_grad for parent in parents))
    tape = _ACTIVE_TAPE.get()
    if tape is not None and out.requires_grad:
        tape.record(out, parents, backward)
    return out


def _require_matrix(tensor: Tensor, op: str) -> None:
    if tensor.data.ndim != 2:
        raise ValidationFailure(f"{op} expects a 2-D tensor, got shape {tensor.shape}")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValidationFailure(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_matrix(a, "matmul")
    _require_matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ValidationFailure(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    return _emit(a.data @ b.data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad)
        _accumulate(b, grad)

    return _emit(a.data + b.data, (a, b), backward)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "subtract")

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad)
        _accumulate(b, -grad)

    return _emit(a.data - b.data, (a, b), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "multiply")

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * b.data)
        _accumulate(b, grad * a.data)

    return _emit(a.data * b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * factor)

    return _emit(a.data * factor, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * mask)

    return _emit(np.where(mask, a.data, 0.0), (a,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def sigmoid(a: Tensor) -> Tensor:
    value = _stable_sigmoid(a.data)

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * value * (1.0 - value))

    return _emit(value, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * (1.0 - value * value))

    return _emit(value, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), evaluated as logaddexp(0, a)."""

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * _stable_sigmoid(a.data))

    return _emit(np.logaddexp(0.0, a.data), (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * 2.0 * a.data)

    return _emit(a.data * a.data, (a,), backward)


def row_softmax(a: Tensor) -> Tensor:
    _require_matrix(a, "row_softmax")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    value = exp / exp.sum(axis=1, keepdims=True)

    def backward(grad: np.ndarray) -> None:
        inner = (grad * value).sum(axis=1, keepdims=True)
        _accumulate(a, value * (grad - inner))

    return _emit(value, (a,), backward)


def row_log_softmax(a: Tensor) -> Tensor:
    _require_matrix(a, "row_log_softmax")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = shifted - log_norm
    probabilities = np.exp(value)

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad - probabilities * grad.sum(axis=1, keepdims=True))

    return _emit(value, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    _require_matrix(a, "transpose")

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad.T)

    return _emit(a.data.T.copy(), (a,), backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ValidationFailure(f"reshape: cannot view {a.shape} as {shape}")
    original = a.shape

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad.reshape(original))

    return _emit(a.data.reshape(shape).copy(), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ValidationFailure("concat needs at least one tensor")
    ndim = tensors[0].data.ndim
    for tensor in tensors:
        if tensor.data.ndim != ndim:
            raise ValidationFailure("concat: tensors must share rank")
        for dim in range(ndim):
            if dim != axis % ndim and tensor.shape[dim] != tensors[0].shape[dim]:
                raise ValidationFailure(
                    f"concat: shape {tensor.shape} incompatible with {tensors[0].shape} on axis {axis}"
                )
    sizes = [tensor.shape[axis] for tensor in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad: np.ndarray) -> None:
        for tensor, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(int(start), int(stop))
            _accumulate(tensor, grad[tuple(index)])

    return _emit(np.concatenate([tensor.data for tensor in tensors], axis=axis), tuple(tensors), backward)


def slice_columns(a: Tensor, start: int, stop: int) -> Tensor:
    _require_matrix(a, "slice_columns")
    if not 0 <= start < stop <= a.shape[1]:
        raise ValidationFailure(f"slice_columns: [{start}:{stop}] out of range for {a.shape}")

    def backward(grad: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[:, start:stop] = grad
        _accumulate(a, full)

    return _emit(a.data[:, start:stop].copy(), (a,), backward)


def take_rows(a: Tensor, rows: Sequence[int]) -> Tensor:
    _require_matrix(a, "take_rows")
    index = np.asarray(rows, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ValidationFailure(f"take_rows: index out of range for {a.shape}")

    def backward(grad: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.add.at(full, index, grad)
        _accumulate(a, full)

    return _emit(a.data[index].copy(), (a,), backward)


def repeat_rows(a: Tensor, times: int) -> Tensor:
    """[r0, r0, ..., r1, r1, ...]: each row repeated ``times`` times consecutively."""

    _require_matrix(a, "repeat_rows")
    rows, cols = a.shape

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad.reshape(rows, times, cols).sum(axis=1))

    return _emit(np.repeat(a.data, times, axis=0), (a,), backward)


def tile_rows(a: Tensor, times: int) -> Tensor:
    """[r0, r1, ..., r0, r1, ...]: the whole matrix stacked ``times`` times."""

    _require_matrix(a, "tile_rows")
    rows, cols = a.shape

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad.reshape(times, rows, cols).sum(axis=0))

    return _emit(np.tile(a.data, (times, 1)), (a,), backward)


def total(a: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        _accumulate(a, np.broadcast_to(grad, a.data.shape))

    return _emit(np.asarray(a.data.sum()), (a,), backward)


def weighted_total(a: Tensor, weights: np.ndarray) -> Tensor:
    """sum(a * weights) with constant weights."""

    weights = np.asarray(weights, dtype=DTYPE)
    if weights.shape != a.data.shape:
        raise ValidationFailure(f"weighted_total: weights {weights.shape} do not match {a.shape}")

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, grad * weights)

    return _emit(np.asarray((a.data * weights).sum()), (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def pairwise_concat(left: Tensor, right: Tensor) -> Tensor:
    """Row (i*J + j) holds [left[i] ; right[j]]."""

    return concat([repeat_rows(left, right.shape[0]), tile_rows(right, left.shape[0])], axis=1)


def pairwise_subtract(left: Tensor, right: Tensor) -> Tensor:
    """Row (i*J + j) holds left[i] - right[j]."""

    if left.shape[1] != right.shape[1]:
        raise ValidationFailure(f"pairwise_subtract: widths {left.shape[1]} and {right.shape[1]} differ")
    return subtract(repeat_rows(left, right.shape[0]), tile_rows(right, left.shape[0]))


# ---------------------------------------------------------------- layers


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Container of named parameters."""

    def parameters(self) -> List[Parameter]:
        found: List[Parameter] = []
        for value in vars(self).values():
            if isinstance(value, Parameter):
                found.append(value)
            elif isinstance(value, Module):
                found.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        found.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        found.append(item)
        unique: Dict[int, Parameter] = {}
        for parameter in found:
            unique.setdefault(id(parameter), parameter)
        return list(unique.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return {parameter.name: parameter for parameter in self.parameters()}

    def parameter_count(self) -> int:
        return int(sum(parameter.data.size for parameter in self.parameters()))


class Linear(Module):
    def __init__(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.weight = Parameter(f"{name}.weight", glorot_uniform(rng, fan_in, fan_out))
        self.bias = Parameter(f"{name}.bias", np.zeros((1, fan_out))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValidationFailure(
                f"{self.weight.name}: expected width {self.weight.shape[0]}, got {x.shape[-1]}"
            )
        return linear(x, self.weight, self.bias)


class MLP(Module):
    """Fully-connected stack with ReLU between layers and a linear output."""

    def __init__(self, name: str, sizes: Sequence[int], rng: np.random.Generator) -> None:
        if len(sizes) < 2:
            raise ValidationFailure("MLP needs at least input and output sizes")
        self.layers = [
            Linear(f"{name}.{index}", fan_in, fan_out, rng)
            for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    @property
    def in_features(self) -> int:
        return self.layers[0].weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1:
                x = relu(x)
        return x


# ---------------------------------------------------------------- optimisation


@dataclass
class AdamState:
    """Moments and hyperparameters for decoupled-weight-decay Adam."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0005
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState, learning_rate: Optional[float] = None) -> None:
    """Apply one Adam update in place and zero every gradient."""

    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for parameter in params:
        grad = parameter.grad if parameter.grad is not None else np.zeros_like(parameter.data)
        m = state.first_moment.setdefault(parameter.name, np.zeros_like(parameter.data))
        v = state.second_moment.setdefault(parameter.name, np.zeros_like(parameter.data))
        if m.shape != parameter.data.shape:
            raise ValidationFailure(f"moment shape mismatch for {parameter.name}")
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        parameter.data = parameter.data - lr * (update + state.weight_decay * parameter.data)
        parameter.zero_grad()


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""

    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for parameter in params:
            if parameter.grad is not None:
                parameter.grad = parameter.grad * factor
    return norm


def zero_grad(params: Iterable[Parameter]) -> None:
    for parameter in params:
        parameter.zero_grad()


# ---------------------------------------------------------------- gradient checking


@dataclass(slots=True)
class GradCheckReport:
    name: str
    max_relative_error: float
    tolerance: float
    coordinates: int
    skipped_kinks: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_relative_error <= self.tolerance)

    def as_dict(self) -> Dict[str, object]:
        return {
            "op": self.name,
            "max_relative_error": self.max_relative_error,
            "tolerance": self.tolerance,
            "coordinates": self.coordinates,
            "skipped_kinks": self.skipped_kinks,
            "passed": self.passed,
        }


def finite_diff_check(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    *,
    name: str = "op",
    step: float = 1e-5,
    seed: int = 0,
    max_coordinates: Optional[int] = None,
) -> GradCheckReport:
    """Compare tape gradients of ``op`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection. Per input,
    the error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``
    with the denominator clamped at 1e-8. Coordinates where the one-sided
    slopes disagree sharply sit on a kink (ReLU at zero) and are skipped.
    """

    rng = np.random.default_rng(seed)
    leaves = [Parameter(f"input{index}", np.array(value, dtype=DTYPE)) for index, value in enumerate(inputs)]
    probe = op(*[Tensor(leaf.data) for leaf in leaves])
    projection = rng.standard_normal(probe.shape)

    def evaluate() -> float:
        return float((op(*[Tensor(leaf.data) for leaf in leaves]).data * projection).sum())

    with Tape() as tape:
        out = op(*leaves)
        # constant outputs leave every analytic gradient at zero
        if out.requires_grad:
            tape.backward(weighted_total(out, projection))

    worst = 0.0
    checked = 0
    skipped = 0
    for leaf in leaves:
        analytic = leaf.grad.reshape(-1)
        flat = leaf.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_coordinates is not None and flat.size > max_coordinates:
            indices = np.sort(rng.choice(flat.size, size=max_coordinates, replace=False))
        numeric = np.zeros(indices.size)
        kept = np.ones(indices.size, dtype=bool)
        base = evaluate()
        for slot, index in enumerate(indices):
            original = flat[index]
            flat[index] = original + step
            upper = evaluate()
            flat[index] = original - step
            lower = evaluate()
            flat[index] = original
            forward_slope = (upper - base) / step
            backward_slope = (base - lower) / step
            numeric[slot] = (upper - lower) / (2.0 * step)
            if abs(forward_slope - backward_slope) > 1e-3 * max(1.0, abs(numeric[slot])):
                kept[slot] = False
                skipped += 1
        if kept.any():
            diff = np.abs(analytic[indices][kept] - numeric[kept]).max()
            denom = max(np.abs(analytic[indices][kept]).max(), np.abs(numeric[kept]).max(), 1e-8)
            worst = max(worst, float(diff / denom))
        checked += int(kept.sum())
    report = GradCheckReport(name, worst, tolerance, checked, skipped)
    LOGGER.debug("[GradCheck] %s | max_rel=%.3e | checked=%s | kinks=%s", name, worst, checked, skipped)
    return report


def parameter_arrays(params: Mapping[str, Parameter] | Iterable[Parameter]) -> Dict[str, np.ndarray]:
    items = params.values() if isinstance(params, Mapping) else params
    return {parameter.name: parameter.data.copy() for parameter in items}


__all__ = [
    "AdamState",
    "GradCheckReport",
    "Linear",
    "MLP",
    "Module",
    "Parameter",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "as_tensor",
    "clip_gradients",
    "concat",
    "finite_diff_check",
    "glorot_uniform",
    "global_grad_norm",
    "linear",
    "matmul",
    "multiply",
    "pairwise_concat",
    "pairwise_subtract",
    "parameter_arrays",
    "relu",
    "repeat_rows",
    "reshape",
    "row_log_softmax",
    "row_softmax",
    "scale",
    "sigmoid",
    "slice_columns",
    "softplus",
    "square",
    "subtract",
    "take_rows",
    "tanh",
    "tile_rows",
    "total",
    "transpose",
    "weighted_total",
    "zero_grad",
]
