"""Aggregation with exponential weights (AEW) over a finite dictionary.

Given scores ``f_1, ..., f_M`` and a sample ``(X_i, Y_i)``, the aggregate is
the convex combination ``sum_j w_j f_j`` with

    w_j  proportional to  exp(sum_i Y_i f_j(X_i)).

For members with values in [-1, 1] the exponent equals ``n (1 - A_n(f_j))``,
so the weights coincide with the ``exp(-n A_n(f_j))`` form based on the
empirical hinge risk.  Members are clipped to [-1, 1] on ingest by default.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    ConstantRule,
    ConstantScore,
    ConfigError,
    Dataset,
    DomainError,
    InvariantViolation,
    LinearRule,
    LinearScore,
    ScoreFunction,
    TabulatedRule,
    TabulatedScore,
    ThresholdRule,
    clip_to_unit,
    hinge_risk_of_values,
    zero_one_risk_of_values,
    _require_nonempty,
)

PROPOSITION1_TOLERANCE = 1e-9


class UnclippedScoreWarning(UserWarning):
    """Raised when a member leaves [-1, 1], so score- and hinge-based weights differ."""


class Dictionary:
    """Ordered, immutable collection of ``M >= 1`` score functions.

    Parameters
    ----------
    members : sequence of ScoreFunction
    clip : bool
        Project every member onto [-1, 1] (default).  Disable only for
        deliberate experiments with unbounded members.
    labels : sequence of str, optional
        Display names aligned with ``members``.
    """

    def __init__(self, members: Sequence[ScoreFunction], clip=True, labels=None):
        members = tuple(members)
        if not members:
            raise DomainError("a dictionary needs at least one member")
        self.clip = bool(clip)
        self.members = tuple(clip_to_unit(f) for f in members) if clip else members
        if labels is None:
            labels = [repr(f) for f in members]
        if len(labels) != len(members):
            raise DomainError("one label per member is required")
        self.labels = tuple(str(s) for s in labels)

    @property
    def M(self) -> int:
        return len(self.members)

    def __len__(self):
        return self.M

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, j):
        return self.members[j]

    @property
    def bounded(self) -> bool:
        return all(f.range_bound is not None and f.range_bound <= 1.0 for f in self.members)

    def evaluate(self, X) -> np.ndarray:
        """Member values on ``X`` as an ``(M, n)`` array."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return np.stack([f(X) for f in self.members]) if X.shape[0] else np.zeros((self.M, 0))


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Nonnegative weights summing to one, aligned to a dictionary.

    ``scores_match_hinge`` is False when some member value left [-1, 1] on
    the sample, in which case these (score-based) weights differ from the
    hinge-risk form.
    """

    w: np.ndarray
    scores_match_hinge: bool = True

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    def __len__(self):
        return len(self.w)

    def __getitem__(self, j):
        return float(self.w[j])

    def __iter__(self):
        return iter(self.w.tolist())

    def tolist(self):
        return self.w.tolist()


class AggregateScore(ScoreFunction):
    """``x -> sum_j w_j f_j(x)``."""

    def __init__(self, dictionary: Dictionary, weights: WeightVector):
        if len(weights) != dictionary.M:
            raise DomainError("weights and dictionary differ in length")
        self.dictionary = dictionary
        self.weights = weights
        self.range_bound = 1.0 if dictionary.bounded else None

    def evaluate(self, X):
        return self.weights.w @ self.dictionary.evaluate(X)

    def combine(self, member_values: np.ndarray) -> np.ndarray:
        """Aggregate pre-computed member values of shape ``(M, n)``."""
        return self.weights.w @ member_values

    def __repr__(self):
        return f"AggregateScore(M={self.dictionary.M})"


def weights_from_scores(scores) -> np.ndarray:
    """Softmax of cumulative scores, shifted by the maximum before exponentiation."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise DomainError("need a nonempty vector of scores")
    e = np.exp(s - s.max())
    return e / e.sum()


def _as_dictionary(dictionary) -> Dictionary:
    return dictionary if isinstance(dictionary, Dictionary) else Dictionary(dictionary)


def cumulative_scores(data: Dataset, dictionary) -> np.ndarray:
    """``S_j = sum_i Y_i f_j(X_i)`` for every member."""
    _require_nonempty(data)
    values = _as_dictionary(dictionary).evaluate(data.X)
    return values @ data.y.astype(float)


def _weights_from_values(y, values) -> WeightVector:
    matches = bool(np.all(np.abs(values) <= 1.0))
    if not matches:
        warnings.warn(
            "dictionary member outside [-1, 1]: exponential weights use cumulative scores, "
            "which differ from the hinge-risk form",
            UnclippedScoreWarning,
            stacklevel=3,
        )
    return WeightVector(weights_from_scores(values @ y.astype(float)), matches)


def aew_weights(data: Dataset, dictionary) -> WeightVector:
    _require_nonempty(data)
    values = _as_dictionary(dictionary).evaluate(data.X)
    return _weights_from_values(data.y, values)


def aew_aggregate(data: Dataset, dictionary) -> AggregateScore:
    dictionary = _as_dictionary(dictionary)
    return AggregateScore(dictionary, aew_weights(data, dictionary))


def erm_select(data: Dataset, dictionary) -> int:
    """0-based index of the first member minimising the empirical 0-1 risk."""
    _require_nonempty(data)
    values = _as_dictionary(dictionary).evaluate(data.X)
    return int(np.argmin(zero_one_risk_of_values(data.y, values)))


@dataclass(frozen=True)
class Proposition1Certificate:
    aggregate_risk: float
    best_member_risk: float
    log_m_over_n: float
    slack: float
    member_risks: tuple = field(default=(), repr=False)

    def as_dict(self):
        return {
            "aggregate_hinge_risk": self.aggregate_risk,
            "min_member_hinge_risk": self.best_member_risk,
            "log_M_over_n": self.log_m_over_n,
            "slack": self.slack,
        }


def proposition1_certificate(data: Dataset, dictionary, tol=PROPOSITION1_TOLERANCE) -> Proposition1Certificate:
    """Check ``A_n(aggregate) <= min_j A_n(f_j) + log(M)/n`` on the sample.

    Raises
    ------
    InvariantViolation
        If the slack is below ``-tol``.
    """
    _require_nonempty(data)
    dictionary = _as_dictionary(dictionary)
    values = dictionary.evaluate(data.X)
    weights = _weights_from_values(data.y, values)
    agg_values = weights.w @ values
    member_risks = hinge_risk_of_values(data.y, values)
    agg_risk = float(hinge_risk_of_values(data.y, agg_values))
    best = float(member_risks.min())
    bonus = math.log(dictionary.M) / data.n
    slack = best + bonus - agg_risk
    cert = Proposition1Certificate(agg_risk, best, bonus, slack, tuple(member_risks.tolist()))
    if slack < -tol:
        raise InvariantViolation(f"aggregate hinge risk exceeds its bound: slack={slack:.3e}")
    return cert


# ---------------------------------------------------------------------------
# dictionaries from JSON specs

def rule_from_spec(spec: dict, path="$") -> ScoreFunction:
    """Build one built-in score function from its JSON description.

    Supported ``type`` values: ``constant`` (``label``), ``constant_score``
    (``value``), ``threshold`` (``feature`` 1-based, ``threshold``,
    ``direction``), ``linear`` (``weights``, ``bias``; sign rule),
    ``linear_score`` (real-valued), ``tabulated`` (``points``, ``labels``,
    optional ``default``) and ``tabulated_score`` (``points``, ``values``).
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{path}: expected an object with a 'type' field")
    kind = spec["type"]
    try:
        if kind == "constant":
            return ConstantRule(int(spec["label"]))
        if kind == "constant_score":
            return ConstantScore(float(spec["value"]))
        if kind == "threshold":
            feature = int(spec["feature"])
            if feature < 1:
                raise ConfigError(f"{path}.feature: features are numbered from 1")
            return ThresholdRule(feature - 1, float(spec["threshold"]), int(spec.get("direction", 1)))
        if kind == "linear":
            return LinearRule(spec["weights"], float(spec.get("bias", 0.0)))
        if kind == "linear_score":
            return LinearScore(spec["weights"], float(spec.get("bias", 0.0)))
        if kind == "tabulated":
            return TabulatedRule(spec["points"], spec["labels"], spec.get("default"))
        if kind == "tabulated_score":
            return TabulatedScore(spec["points"], spec["values"], spec.get("default"))
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc.args[0]!r} for rule type {kind!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}.type: unknown rule type {kind!r}")


def dictionary_from_spec(spec, clip=True, root="$") -> Dictionary:
    """A dictionary from ``[rule, ...]`` or ``{"members": [...], "clip": bool}``.

    ``root`` is the JSON path of ``spec`` used in error messages.
    """
    if isinstance(spec, dict):
        clip = bool(spec.get("clip", clip))
        members = spec.get("members")
        base = f"{root}.members"
    else:
        members, base = spec, root
    if not isinstance(members, list) or not members:
        raise ConfigError(f"{base}: expected a nonempty list of rules")
    rules = [rule_from_spec(m, f"{base}[{j}]") for j, m in enumerate(members)]
    labels = [m.get("label_name", f"{m['type']}#{j}") for j, m in enumerate(members)]
    return Dictionary(rules, clip=clip, labels=labels)
