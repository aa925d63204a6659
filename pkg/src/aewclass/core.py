"""Losses, empirical risks, score functions and the dataset container.

Score functions are evaluated on a whole design matrix at once: calling
``f(X)`` with ``X`` of shape ``(n, d)`` returns an array of ``n`` scores.
Prediction rules are score functions whose values lie in {-1, +1}.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple

import numpy as np


class AEWError(Exception):
    """Base class for errors raised by this package."""


class DomainError(AEWError, ValueError):
    """An input lies outside the domain of an operation."""


class CapacityError(AEWError, ValueError):
    """A request exceeds what an exact/brute-force routine can handle."""


class ConfigError(AEWError, ValueError):
    """A configuration document is malformed."""


class InvariantViolation(AEWError, ArithmeticError):
    """A mathematical guarantee failed numerically (indicates a bug)."""


class DatasetFormatError(AEWError, ValueError):
    """A dataset file could not be parsed."""


# ---------------------------------------------------------------------------
# losses


def hinge_loss(margin):
    """Hinge loss ``max(0, 1 - margin)``; accepts scalars or arrays."""
    m = np.asarray(margin, dtype=float)
    if not np.all(np.isfinite(m)):
        raise DomainError("hinge_loss requires finite margins")
    out = np.maximum(0.0, 1.0 - m)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# data


class LabeledExample(NamedTuple):
    x: np.ndarray
    y: int


_LABEL_RE = re.compile(r"^\s*(-1|1)\s*$")


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` labeled examples stored as a design matrix and a label vector.

    ``X`` has shape ``(n, d)``; ``y`` holds integers in {-1, +1}.  Arrays
    are copied and marked read-only so a dataset can be shared freely.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DomainError(f"X must be 2-dimensional, got shape {X.shape}")
        y_raw = np.asarray(self.y)
        if y_raw.shape != (X.shape[0],):
            raise DomainError(f"y has shape {y_raw.shape}, expected ({X.shape[0]},)")
        if y_raw.size and not np.all((y_raw == 1) | (y_raw == -1)):
            raise DomainError("labels must be exactly -1 or +1")
        y = y_raw.astype(np.int64)
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_examples(cls, examples, d=None):
        examples = list(examples)
        if not examples:
            if d is None:
                raise DomainError("cannot infer dimension of an empty dataset")
            return cls(np.empty((0, d)), np.empty(0, dtype=np.int64))
        X = np.array([np.atleast_1d(np.asarray(e[0], dtype=float)) for e in examples])
        y = np.array([e[1] for e in examples])
        if d is not None and X.shape[1] != d:
            raise DomainError(f"examples have dimension {X.shape[1]}, expected {d}")
        return cls(X, y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __iter__(self) -> Iterator[LabeledExample]:
        for x, y in zip(self.X, self.y):
            yield LabeledExample(x, int(y))

    def subset(self, start, stop=None) -> "Dataset":
        return Dataset(self.X[start:stop], self.y[start:stop])

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.X, y)


def _require_nonempty(data: Dataset):
    if data.n == 0:
        raise DomainError("risk of an empty dataset is undefined")


def write_dataset_csv(data: Dataset, path):
    """Write ``data`` as CSV with header ``x1..xd,label``.

    Floats are written with ``repr`` so that a read-back is exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(data.d)] + ["label"])
        for x, y in zip(data.X, data.y):
            writer.writerow([repr(float(v)) for v in x] + [str(int(y))])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"x{j + 1}" for j in range(d)] + ["label"]
    if d < 1 or header != expected:
        raise DatasetFormatError(f"{path}: header must be {','.join(expected)}, got {','.join(header)}")
    X = np.empty((len(rows) - 1, d))
    y = np.empty(len(rows) - 1, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != d + 1:
            raise DatasetFormatError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            X[i] = [float(v) for v in row[:d]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(X[i])):
            raise DatasetFormatError(f"{path}:{lineno}: non-finite feature")
        if not _LABEL_RE.match(row[d]):
            raise DatasetFormatError(f"{path}:{lineno}: label must be -1 or 1, got {row[d]!r}")
        y[i] = int(row[d])
    return Dataset(X, y)


# ---------------------------------------------------------------------------
# score functions


class ScoreFunction:
    """A map from feature vectors to real scores, evaluated row-wise.

    Subclasses implement :meth:`evaluate`.  ``range_bound`` is an optional
    declared bound ``B`` with ``|f(x)| <= B``.
    """

    range_bound: float | None = None
    is_rule = False

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return np.asarray(self.evaluate(X), dtype=float).reshape(X.shape[0])


class PredictionRule(ScoreFunction):
    """A score function whose values are exactly -1 or +1."""

    range_bound = 1.0
    is_rule = True


class FunctionScore(ScoreFunction):
    """Wrap a vectorised callable ``fn(X) -> scores``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], range_bound=None, name=None):
        self.fn = fn
        self.range_bound = range_bound
        self.name = name or getattr(fn, "__name__", "score")

    def evaluate(self, X):
        return self.fn(X)

    def __repr__(self):
        return f"FunctionScore({self.name})"


class FunctionRule(PredictionRule):
    """Wrap a vectorised callable already known to return values in {-1, +1}."""

    def __init__(self, fn, name=None):
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "rule")

    def evaluate(self, X):
        return self.fn(X)


class ConstantScore(ScoreFunction):
    def __init__(self, value: float):
        self.value = float(value)
        self.range_bound = abs(self.value)

    def evaluate(self, X):
        return np.full(X.shape[0], self.value)

    def __repr__(self):
        return f"ConstantScore({self.value})"


class ConstantRule(PredictionRule):
    def __init__(self, label: int):
        if label not in (-1, 1):
            raise DomainError("a constant rule predicts -1 or +1")
        self.label = int(label)

    def evaluate(self, X):
        return np.full(X.shape[0], float(self.label))

    def __repr__(self):
        return f"ConstantRule({self.label:+d})"


class ThresholdRule(PredictionRule):
    """``direction`` if ``x[feature] >= threshold`` else ``-direction``.

    ``feature`` is a 0-based column index.
    """

    def __init__(self, feature: int, threshold: float, direction: int = 1):
        if direction not in (-1, 1):
            raise DomainError("direction must be -1 or +1")
        self.feature = int(feature)
        self.threshold = float(threshold)
        self.direction = int(direction)

    def evaluate(self, X):
        hit = X[:, self.feature] >= self.threshold
        return np.where(hit, self.direction, -self.direction).astype(float)

    def __repr__(self):
        return f"ThresholdRule(x{self.feature + 1} >= {self.threshold}, {self.direction:+d})"


class LinearScore(ScoreFunction):
    """Real-valued affine score ``<w, x> + b``."""

    def __init__(self, weights, bias=0.0):
        self.weights = np.asarray(weights, dtype=float).ravel()
        self.bias = float(bias)

    def evaluate(self, X):
        return X @ self.weights + self.bias


class LinearRule(PredictionRule):
    """Sign of an affine score, with ties sent to +1."""

    def __init__(self, weights, bias=0.0):
        self.score = LinearScore(weights, bias)

    def evaluate(self, X):
        return _sign(self.score.evaluate(X))


def match_rows(table: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Index of each row of ``X`` in ``table`` (exact match), or -1."""
    table = np.asarray(table, dtype=float).reshape(len(table), -1)
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    if table.shape[1] == 1:
        order = np.argsort(table[:, 0], kind="stable")
        keys = table[order, 0]
        pos = np.clip(np.searchsorted(keys, X[:, 0]), 0, len(keys) - 1)
        found = keys[pos] == X[:, 0]
        return np.where(found, order[pos], -1)
    both = np.concatenate([table, X])
    _, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    lookup = np.full(inverse.max() + 1, -1)
    lookup[inverse[: len(table)][::-1]] = np.arange(len(table))[::-1]
    return lookup[inverse[len(table):]]


class TabulatedScore(ScoreFunction):
    """Score defined by a lookup table on a finite set of points.

    Points not in the table get ``default``; with ``default=None`` an
    unknown point is an error.
    """

    def __init__(self, points, values, default=None):
        self.points = np.asarray(points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points.reshape(-1, 1)
        self.values = np.asarray(values, dtype=float).ravel()
        if len(self.values) != len(self.points):
            raise DomainError("one value per tabulated point is required")
        self.default = default
        bound = np.max(np.abs(self.values)) if len(self.values) else 0.0
        if default is not None:
            bound = max(bound, abs(default))
        self.range_bound = float(bound)

    def evaluate(self, X):
        idx = match_rows(self.points, X)
        if np.any(idx < 0):
            if self.default is None:
                raise DomainError("point outside the tabulated support")
            return np.where(idx >= 0, self.values[idx], float(self.default))
        return self.values[idx]


class TabulatedRule(TabulatedScore, PredictionRule):
    def __init__(self, points, labels, default=None):
        labels = np.asarray(labels)
        if not np.all((labels == 1) | (labels == -1)):
            raise DomainError("tabulated rule labels must be -1 or +1")
        if default is not None and default not in (-1, 1):
            raise DomainError("default label must be -1 or +1")
        super().__init__(points, labels, default)
        self.range_bound = 1.0

    def __repr__(self):
        return f"TabulatedRule({self.values.astype(int).tolist()})"


def _sign(s: np.ndarray) -> np.ndarray:
    # tie at 0 goes to +1
    return np.where(s >= 0, 1.0, -1.0)


class _Clipped(ScoreFunction):
    range_bound = 1.0

    def __init__(self, base: ScoreFunction):
        self.base = base

    def evaluate(self, X):
        return np.clip(self.base(X), -1.0, 1.0)

    def __repr__(self):
        return f"clip({self.base!r})"


class _Signed(PredictionRule):
    def __init__(self, base: ScoreFunction):
        self.base = base

    def evaluate(self, X):
        return _sign(self.base(X))

    def __repr__(self):
        return f"sign({self.base!r})"


def clip_to_unit(f: ScoreFunction) -> ScoreFunction:
    """Project ``f`` pointwise onto [-1, 1].

    Rules and functions already declared bounded by 1 are returned as is.
    """
    if f.is_rule or (f.range_bound is not None and f.range_bound <= 1.0):
        return f
    return _Clipped(f)


def sign_classifier(f: ScoreFunction) -> PredictionRule:
    """The prediction rule ``x -> +1 if f(x) >= 0 else -1``."""
    if f.is_rule:
        return f
    return _Signed(f)


# ---------------------------------------------------------------------------
# empirical risks


def empirical_zero_one_risk(data: Dataset, f: ScoreFunction) -> float:
    """Fraction of examples with ``y * f(x) <= 0``."""
    _require_nonempty(data)
    errors = np.count_nonzero(data.y * f(data.X) <= 0)
    return errors / data.n


def empirical_hinge_risk(data: Dataset, f: ScoreFunction) -> float:
    _require_nonempty(data)
    return float(np.mean(hinge_loss(data.y * f(data.X))))


def hinge_risk_of_values(y: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Empirical hinge risk of each row of ``values`` (shape ``(M, n)``)."""
    return np.maximum(0.0, 1.0 - values * y).mean(axis=-1)


def zero_one_risk_of_values(y: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.count_nonzero(values * y <= 0, axis=-1) / values.shape[-1]


def is_finite_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
