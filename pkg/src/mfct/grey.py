"""Grey relational analysis (GRA) for ranking cluster-head candidates.

The pipeline is ``normalize -> relational_coefficients -> relational_grades
-> rank``.  Every alternative is compared against the all-ones ideal
sequence after min-max normalization, using the Deng relational coefficient.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidMatrix

WEIGHT_TOL = 1e-9


class Direction(str, enum.Enum):
    BENEFIT = "benefit"
    COST = "cost"

    @classmethod
    def parse(cls, text: str) -> "Direction":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidMatrix(f"unknown criterion direction {text!r}") from None


@dataclass(frozen=True)
class GreyParams:
    """``rho`` is the distinguishing coefficient, 0 < rho <= 1."""

    rho: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise InvalidMatrix(f"rho must lie in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class DecisionMatrix:
    values: np.ndarray
    directions: tuple[Direction, ...]
    weights: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidMatrix(f"values must be a non-empty m x n matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidMatrix("values must be finite")
        n = values.shape[1]
        directions = tuple(Direction(d) for d in self.directions)
        if len(directions) != n:
            raise InvalidMatrix(f"expected {n} directions, got {len(directions)}")
        weights = np.array(self.weights, dtype=float)
        if weights.shape != (n,):
            raise InvalidMatrix(f"expected {n} weights, got shape {weights.shape}")
        check_weights(weights)
        values.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "names", tuple(self.names) or tuple(f"c{j}" for j in range(n)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def check_weights(weights) -> None:
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidMatrix("weights must be finite and nonnegative")
    if abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
        raise InvalidMatrix(f"weights must sum to 1, got {float(w.sum())!r}")


def normalize(matrix: DecisionMatrix) -> np.ndarray:
    """Min-max normalize each column so that 1.0 is always the ideal value.

    Cost columns are reversed.  A constant column maps to all ones so that it
    cannot influence the ranking.
    """
    x = matrix.values
    if not np.all(np.isfinite(x)):
        raise InvalidMatrix("values must be finite")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    out = np.ones_like(x)
    for j, direction in enumerate(matrix.directions):
        if span[j] == 0:
            continue
        if direction is Direction.BENEFIT:
            out[:, j] = (x[:, j] - lo[j]) / span[j]
        else:
            out[:, j] = (hi[j] - x[:, j]) / span[j]
    # guards against 1 ulp excursions outside [0, 1]
    return np.clip(out, 0.0, 1.0)


def relational_coefficients(norm, params: GreyParams = GreyParams()) -> np.ndarray:
    norm = np.asarray(norm, dtype=float)
    if norm.ndim != 2:
        raise InvalidMatrix("expected a 2-D matrix")
    if not np.all(np.isfinite(norm)) or np.any(norm < 0) or np.any(norm > 1):
        raise InvalidMatrix("normalized entries must lie in [0, 1]")
    delta = np.abs(1.0 - norm)
    d_min = delta.min()
    d_max = delta.max()
    if d_max == 0:
        return np.ones_like(delta)
    return (d_min + params.rho * d_max) / (delta + params.rho * d_max)


def relational_grades(coeffs, weights) -> np.ndarray:
    """Weighted mean of each row of relational coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if coeffs.ndim != 2 or weights.shape != (coeffs.shape[1],):
        raise InvalidMatrix(
            f"dimension mismatch: coefficients {coeffs.shape}, weights {weights.shape}"
        )
    check_weights(weights)
    return coeffs @ weights


def rank(grades: Sequence[float]) -> list[int]:
    """Indices by descending grade; ties go to the lower index."""
    g = [float(v) for v in grades]
    if not g:
        raise InvalidMatrix("cannot rank an empty grade vector")
    if not all(np.isfinite(g)):
        raise InvalidMatrix("grades must be finite")
    return sorted(range(len(g)), key=lambda i: (-g[i], i))


def grey_grades(matrix: DecisionMatrix, params: GreyParams = GreyParams()) -> np.ndarray:
    return relational_grades(relational_coefficients(normalize(matrix), params), matrix.weights)


def grey_rank(matrix: DecisionMatrix, params: GreyParams = GreyParams()) -> tuple[list[int], np.ndarray]:
    """Run the whole pipeline; returns ``(order, grades)``."""
    grades = grey_grades(matrix, params)
    return rank(grades), grades


# --- CSV surface used by the ``rank`` subcommand -------------------------

def read_matrix_csv(text: str) -> tuple[DecisionMatrix, list[str]]:
    """Parse a decision matrix from CSV text.

    Layout (first column holds row labels)::

        criterion,e_re,hc,d
        direction,benefit,cost,cost
        weight,0.4,0.3,0.3
        node-a,0.5,1,30
        node-b,0.4,2,12
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if len(rows) < 4:
        raise InvalidMatrix("need criterion, direction and weight header rows plus at least one alternative")
    names, dirs, weights = rows[0][1:], rows[1][1:], rows[2][1:]
    n = len(names)
    if n == 0 or len(dirs) != n or len(weights) != n:
        raise InvalidMatrix("header rows must all list the same number of criteria")
    labels, values = [], []
    for line, row in enumerate(rows[3:], start=4):
        if len(row) != n + 1:
            raise InvalidMatrix(f"row {line}: expected {n} values, got {len(row) - 1}")
        labels.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise InvalidMatrix(f"row {line}: {exc}") from None
    try:
        w = [float(c) for c in weights]
    except ValueError as exc:
        raise InvalidMatrix(f"weight row: {exc}") from None
    matrix = DecisionMatrix(
        values=np.array(values),
        directions=tuple(Direction.parse(d) for d in dirs),
        weights=np.array(w),
        names=tuple(s.strip() for s in names),
    )
    return matrix, labels


def format_ranking_csv(order: Sequence[int], grades, labels: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "index", "label", "grade"])
    for pos, i in enumerate(order, start=1):
        writer.writerow([pos, i, labels[i], repr(float(grades[i]))])
    return buf.getvalue()
