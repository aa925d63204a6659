"""Sample splitting and adaptive aggregation.

The first ``m`` examples train a finite family of classifiers; the last
``l = ceil(n / log n)`` examples weight them with exponential weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregation import AggregateScore, Dictionary, WeightVector, aew_weights
from .core import Dataset, DomainError, PredictionRule, sign_classifier, zero_one_risk_of_values
from .plugin import PluginConfig, plugin_classifier

Trainer = Callable[[Dataset], PredictionRule]


@dataclass(frozen=True)
class SplitPlan:
    n: int
    l: int
    m: int


def split_plan(n: int) -> SplitPlan:
    if n < 3:
        raise DomainError(f"sample splitting needs n >= 3, got n={n}")
    l = math.ceil(n / math.log(n))
    m = n - l
    if m < 1 or l < 1:
        raise DomainError(f"n={n} leaves no training examples (l={l})")
    return SplitPlan(n, l, m)


def split(data: Dataset):
    """First ``m`` examples for training, last ``l`` for validation.

    Returns ``(train, validation, plan)``.
    """
    plan = split_plan(data.n)
    return data.subset(0, plan.m), data.subset(plan.m), plan


@dataclass(frozen=True)
class BetaGrid:
    delta: float
    ks: tuple
    betas: tuple


def beta_grid(n: int, d: int) -> BetaGrid:
    """``beta_k = k d / (log n - 2k)`` over ``k >= 1`` with positive denominator."""
    if n < 2 or d < 1:
        raise DomainError("beta_grid needs n >= 2 and d >= 1")
    delta = math.log(n)
    ks = tuple(k for k in range(1, math.floor(delta / 2) + 1) if delta - 2 * k > 0)
    if not ks:
        raise DomainError(f"no admissible grid point for n={n} (log n = {delta:.4g} <= 2)")
    return BetaGrid(delta, ks, tuple(k * d / (delta - 2 * k) for k in ks))


@dataclass(frozen=True)
class PhiGrid:
    delta: float
    phis: tuple


def phi_grid(n: int) -> PhiGrid:
    """``phi_k = k / log n`` for ``k = 1..floor(log n / 2)``."""
    if n < 2:
        raise DomainError("phi_grid needs n >= 2")
    delta = math.log(n)
    K = math.floor(delta / 2)
    if K < 1:
        raise DomainError(f"no grid point for n={n}")
    return PhiGrid(delta, tuple(k / delta for k in range(1, K + 1)))


def validation_aew(validation: Dataset, family) -> WeightVector:
    return aew_weights(validation, family)


@dataclass(eq=False)
class AdaptiveFit:
    """Result of a split-validate-aggregate run.

    ``aggregate`` is the weighted score and ``classifier`` its sign.
    """

    aggregate: AggregateScore
    classifier: PredictionRule
    plan: SplitPlan
    labels: tuple
    validation_risks: tuple
    grid: BetaGrid | None = field(default=None)

    @property
    def weights(self) -> WeightVector:
        return self.aggregate.weights

    @property
    def members(self):
        return self.aggregate.dictionary.members

    def __iter__(self):
        # unpacks as (aggregate, classifier)
        return iter((self.aggregate, self.classifier))


def adaptive_generic_aggregate(data: Dataset, trainers: Sequence[tuple[str, Trainer]]) -> AdaptiveFit:
    """Train each procedure on the first part, weight on the second part."""
    if not trainers:
        raise DomainError("at least one trainer is required")
    train, validation, plan = split(data)
    labels = tuple(str(lbl) for lbl, _ in trainers)
    family = Dictionary([fit(train) for _, fit in trainers], labels=labels)
    values = family.evaluate(validation.X)
    weights = validation_aew(validation, family)
    aggregate = AggregateScore(family, weights)
    risks = tuple(zero_one_risk_of_values(validation.y, values).tolist())
    return AdaptiveFit(aggregate, sign_classifier(aggregate), plan, labels, risks)


def plugin_grid_trainers(n: int, d: int, cfg: PluginConfig | None = None):
    """One plug-in trainer per point of ``beta_grid(n, d)``."""
    grid = beta_grid(n, d)

    def make(beta):
        return lambda train: plugin_classifier(train, beta, d, cfg)

    return grid, [(f"beta={b:.6g}", make(b)) for b in grid.betas]


def adaptive_plugin_aggregate(data: Dataset, d: int | None = None, cfg: PluginConfig | None = None) -> AdaptiveFit:
    """Aggregate plug-in classifiers over the smoothness grid of size ``n``."""
    d = data.d if d is None else d
    if d != data.d:
        raise DomainError(f"d={d} does not match the data dimension {data.d}")
    if data.n < 8:
        raise DomainError("adaptive plug-in aggregation needs n >= 8")
    grid, trainers = plugin_grid_trainers(data.n, d, cfg)
    fit = adaptive_generic_aggregate(data, trainers)
    fit.grid = grid
    return fit
