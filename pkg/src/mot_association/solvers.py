"""Exact and heuristic solvers for maximum weighted bipartite matching."""
from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .core import AssociationResult, Pair
from .tools import EnumerationLimitError, ValidationFailure

BRUTE_FORCE_LIMIT = 8
_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ExactAssignment:
    """A partial matching and the sum of its matrix entries."""

    pairs: Tuple[Pair, ...]
    objective: float

    @classmethod
    def from_pairs(cls, matrix: np.ndarray, pairs: Sequence[Pair]) -> "ExactAssignment":
        ordered = tuple(sorted((int(i), int(j)) for i, j in pairs))
        return cls(ordered, float(sum(matrix[i, j] for i, j in ordered)))

    def as_dict(self) -> Dict[str, Any]:
        return {"pairs": [list(pair) for pair in self.pairs], "objective": self.objective}


def _as_matrix(matrix: Any) -> np.ndarray:
    values = np.asarray(getattr(matrix, "data", matrix), dtype=np.float64)
    if values.ndim != 2:
        raise ValidationFailure(f"expected a matrix, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValidationFailure("matrix entries must be finite")
    return values


def _hungarian_min_square(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path with row/column potentials.

    Returns the column per row and the final potentials ``u`` (rows) and
    ``v`` (columns), with ``cost[i, j] >= u[i] + v[j]`` everywhere and
    equality on the assignment.
    """

    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            current = cost[i0 - 1] - u[i0] - v[1:]
            improve = free & (current < minv[1:])
            minv[1:][improve] = current[improve]
            way[1:][improve] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1
    return assignment, u[1:], v[1:]


def _lexicographic_refinement(tight: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """Smallest perfect matching of the tight-edge graph, rows in order.

    Every optimal assignment uses tight edges only, so walking the rows and
    moving each to its most preferred tight column that still admits a
    perfect matching of the remaining rows yields the lexicographically
    smallest optimum. Padding columns sort after the real ones.
    """

    n = tight.shape[0]
    current = assignment.copy()
    owner = np.empty(n, dtype=np.intp)
    owner[current] = np.arange(n)
    for row in range(n):
        target = current[row]
        # Rows after ``row`` that can give up their column along an alternating path ending at ``target``.
        step: Dict[int, int] = {}
        frontier = [target]
        while frontier:
            column = frontier.pop()
            for other in np.flatnonzero(tight[row + 1 :, column]) + row + 1:
                if int(other) not in step:
                    step[int(other)] = column
                    frontier.append(current[other])
        for column in range(n):
            if not tight[row, column] or owner[column] < row:
                continue
            if column == target:
                break
            if int(owner[column]) not in step:
                continue
            mover = int(owner[column])
            current[row], owner[column] = column, row
            while True:
                destination = step[mover]
                displaced = int(owner[destination])
                current[mover], owner[destination] = destination, mover
                if destination == target:
                    break
                mover = displaced
            break
    return current


class AssignmentSolver(ABC):
    """Contract shared by every matching solver."""

    name: str

    @abstractmethod
    def execute(self, matrix: np.ndarray) -> ExactAssignment:
        """Return a matching of the weight matrix."""


class HungarianSolver(AssignmentSolver):
    """Maximum-weight matching of size min(I, J).

    Rectangular inputs are padded with zero-weight rows or columns to a
    square, and the maximisation runs as minimisation of the negated weights.
    Among equal optima the lexicographically smallest pair list is returned,
    the same choice ``BruteForceSolver`` makes.
    """

    name = "hungarian"

    def execute(self, matrix: np.ndarray) -> ExactAssignment:
        weights = _as_matrix(matrix)
        rows, cols = weights.shape
        if rows == 0 or cols == 0:
            return ExactAssignment((), 0.0)
        size = max(rows, cols)
        padded = np.zeros((size, size))
        padded[:rows, :cols] = weights
        cost = -padded
        assignment, u, v = _hungarian_min_square(cost)
        tolerance = 1e-9 * max(1.0, float(np.abs(cost).max()))
        tight = cost - u[:, None] - v[None, :] <= tolerance
        refined = _lexicographic_refinement(tight, assignment)
        if cost[np.arange(size), refined].sum() <= cost[np.arange(size), assignment].sum() + tolerance:
            assignment = refined
        pairs = [(i, int(assignment[i])) for i in range(rows) if assignment[i] < cols]
        return ExactAssignment.from_pairs(weights, pairs)


class BruteForceSolver(AssignmentSolver):
    """Enumerates every matching of size min(I, J); lexicographically smallest among optima."""

    name = "brute_force"

    def __init__(self, limit: int = BRUTE_FORCE_LIMIT) -> None:
        self.limit = limit

    def execute(self, matrix: np.ndarray) -> ExactAssignment:
        weights = _as_matrix(matrix)
        rows, cols = weights.shape
        if min(rows, cols) > self.limit:
            raise EnumerationLimitError(
                f"brute force is capped at min(I, J) <= {self.limit}, got {rows}x{cols}"
            )
        if rows == 0 or cols == 0:
            return ExactAssignment((), 0.0)
        best_pairs: List[Pair] | None = None
        best_objective = -np.inf
        for pairs in self._candidates(rows, cols):
            objective = float(sum(weights[i, j] for i, j in pairs))
            if objective > best_objective + _TIE_TOLERANCE:
                best_pairs, best_objective = pairs, objective
            elif abs(objective - best_objective) <= _TIE_TOLERANCE and pairs < best_pairs:
                best_pairs = pairs
        return ExactAssignment.from_pairs(weights, best_pairs or [])

    @staticmethod
    def _candidates(rows: int, cols: int):
        if rows <= cols:
            for columns in itertools.permutations(range(cols), rows):
                yield [(i, j) for i, j in enumerate(columns)]
        else:
            for chosen in itertools.permutations(range(rows), cols):
                yield sorted((i, j) for j, i in enumerate(chosen))


class GreedySolver(AssignmentSolver):
    """Rows in order each take their best still-free column (smallest index on ties)."""

    name = "greedy"

    def execute(self, matrix: np.ndarray) -> ExactAssignment:
        weights = _as_matrix(matrix)
        rows, cols = weights.shape
        free = np.ones(cols, dtype=bool)
        pairs: List[Pair] = []
        for i in range(rows):
            if not free.any():
                break
            candidates = np.where(free, weights[i], -np.inf)
            j = int(np.argmax(candidates))
            free[j] = False
            pairs.append((i, j))
        return ExactAssignment.from_pairs(weights, pairs)


def available_solvers() -> List[AssignmentSolver]:
    return [HungarianSolver(), BruteForceSolver(), GreedySolver()]


def select_solver(name: str) -> AssignmentSolver:
    for solver in available_solvers():
        if solver.name == name.lower().replace("-", "_"):
            return solver
    raise ValidationFailure(f"unknown solver '{name}'")


def hungarian(matrix: np.ndarray) -> ExactAssignment:
    return HungarianSolver().execute(matrix)


def brute_force(matrix: np.ndarray) -> ExactAssignment:
    return BruteForceSolver().execute(matrix)


def greedy(matrix: np.ndarray) -> ExactAssignment:
    return GreedySolver().execute(matrix)


def assignment_from_matrix(indicator: np.ndarray) -> ExactAssignment:
    """Read the pairs marked 1 in a 0/1 matrix; the objective counts them."""

    values = _as_matrix(indicator)
    rows, cols = np.nonzero(values > 0.5)
    pairs = list(zip(rows.tolist(), cols.tolist()))
    if len(set(rows.tolist())) != len(pairs) or len(set(cols.tolist())) != len(pairs):
        raise ValidationFailure("indicator matrix is not a partial matching")
    return ExactAssignment.from_pairs(values, pairs)


def solve_with_birth_death(matrix: np.ndarray, threshold: float = 0.5) -> AssociationResult:
    """Hungarian matching, then drop pairs whose weight is below ``threshold``."""

    weights = _as_matrix(matrix)
    rows, cols = weights.shape
    kept = [(i, j) for i, j in hungarian(weights).pairs if weights[i, j] >= threshold]
    matched_rows = {i for i, _ in kept}
    matched_cols = {j for _, j in kept}
    return AssociationResult(
        matches=frozenset(kept),
        births=frozenset(j for j in range(cols) if j not in matched_cols),
        deaths=frozenset(i for i in range(rows) if i not in matched_rows),
    )


__all__ = [
    "AssignmentSolver",
    "BRUTE_FORCE_LIMIT",
    "BruteForceSolver",
    "ExactAssignment",
    "GreedySolver",
    "HungarianSolver",
    "assignment_from_matrix",
    "available_solvers",
    "brute_force",
    "greedy",
    "hungarian",
    "select_solver",
    "solve_with_birth_death",
]
