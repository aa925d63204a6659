import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aewclass.adaptive import (
    adaptive_generic_aggregate,
    adaptive_plugin_aggregate,
    beta_grid,
    phi_grid,
    plugin_grid_trainers,
    split,
    split_plan,
    validation_aew,
)
from aewclass.aggregation import Dictionary
from aewclass.core import ConstantRule, Dataset, DomainError, TabulatedRule
from aewclass.distributions import HolderDistribution
from aewclass.plugin import plugin_classifier


def data_of(n, seed=0, d=1):
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, d)), rng.choice([-1, 1], n))


@pytest.mark.parametrize("n, l, m", [(100, 22, 78), (1000, 145, 855)])
def test_split_sizes(n, l, m):
    plan = split_plan(n)
    assert (plan.l, plan.m) == (l, m)
    assert plan.l == math.ceil(n / math.log(n))


def test_split_too_small():
    with pytest.raises(DomainError):
        split_plan(3)
    with pytest.raises(DomainError):
        split(data_of(2))


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 3000))
def test_split_is_ordered_partition(n):
    data = data_of(n, seed=n)
    train, val, plan = split(data)
    assert plan.l + plan.m == n and plan.l >= 1 and plan.m >= 1
    assert np.array_equal(np.concatenate([train.X, val.X]), data.X)
    assert np.array_equal(np.concatenate([train.y, val.y]), data.y)


def test_beta_grid_delta_nine():
    n = math.ceil(math.exp(9))
    g1, g2 = beta_grid(n, 1), beta_grid(n, 2)
    assert g1.ks == (1, 2, 3, 4)
    # log n differs from 9 only through the ceiling
    assert np.allclose(g1.betas, (1 / 7, 2 / 5, 1, 4), rtol=1e-3)
    assert np.allclose(g2.betas, 2 * np.array(g1.betas), rtol=1e-15)


def test_beta_grid_exact_formula_and_n4096():
    g = beta_grid(4096, 1)
    delta = math.log(4096)
    assert g.ks == (1, 2, 3, 4)
    assert g.betas == tuple(k / (delta - 2 * k) for k in g.ks)
    assert g.betas[-1] == pytest.approx(12.6, abs=0.05)


def test_beta_grid_boundaries():
    assert beta_grid(8, 1).ks == (1,)
    with pytest.raises(DomainError):
        beta_grid(7, 1)
    # just below e^4 the k = 2 denominator is negative and k = 2 is dropped
    assert beta_grid(math.floor(math.exp(4)), 1).ks == (1,)
    assert beta_grid(math.ceil(math.exp(4)), 1).ks == (1, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(8, 10**9), st.integers(1, 4))
def test_beta_grid_invariants(n, d):
    g = beta_grid(n, d)
    assert all(k >= 1 and g.delta - 2 * k > 0 for k in g.ks)
    assert all(b > 0 and math.isfinite(b) for b in g.betas)
    assert all(a < b for a, b in zip(g.betas, g.betas[1:]))
    excluded = [k for k in range(1, math.floor(g.delta / 2) + 1) if k not in g.ks]
    assert all(g.delta - 2 * k <= 0 for k in excluded)


def test_phi_grid():
    g = phi_grid(4096)
    assert len(g.phis) == math.floor(math.log(4096) / 2)
    assert all(0 < p <= 0.5 for p in g.phis)
    assert np.allclose(np.diff(g.phis), 1 / g.delta)


def test_validation_weights_examples():
    val = data_of(20, seed=1)
    assert validation_aew(val, [ConstantRule(1)]).tolist() == [1.0]
    perfect = TabulatedRule(val.X, val.y)
    wrong = TabulatedRule(val.X, -val.y)
    w = validation_aew(val, [perfect, wrong])
    assert w[0] == pytest.approx(1.0, abs=1e-12)
    assert w[1] == pytest.approx(math.exp(-40) / (1 + math.exp(-40)), rel=1e-9)
    same = validation_aew(val, [perfect, perfect, perfect])
    assert np.allclose(same.w, 1 / 3, atol=1e-15)


def test_validation_weights_ignore_training_labels():
    data = data_of(200, seed=5)
    _, _, plan = split(data)
    rules = [TabulatedRule(data.X, np.where(data.X[:, 0] > t, 1, -1)) for t in (0.2, 0.5, 0.8)]
    trainers = [(str(j), lambda train, f=f: f) for j, f in enumerate(rules)]
    y = data.y.copy()
    y[: plan.m] = np.random.default_rng(1).permutation(y[: plan.m])
    w1 = adaptive_generic_aggregate(data, trainers).weights.w
    w2 = adaptive_generic_aggregate(data.with_labels(y), trainers).weights.w
    assert np.array_equal(w1, w2)


def test_generic_single_and_identical_trainers():
    data = data_of(120, seed=2)
    rule = ConstantRule(-1)
    fit = adaptive_generic_aggregate(data, [("c", lambda train: rule)])
    assert fit.weights.tolist() == [1.0]
    assert np.array_equal(fit.aggregate(data.X), rule(data.X))
    fit = adaptive_generic_aggregate(data, [("a", lambda t: rule), ("b", lambda t: rule)])
    assert fit.weights.tolist() == [0.5, 0.5]
    aggregate, classifier = fit
    assert np.array_equal(classifier(data.X), rule(data.X))
    with pytest.raises(DomainError):
        adaptive_generic_aggregate(data, [])


def test_plugin_aggregate_on_sinusoid():
    pi = HolderDistribution("sinusoid", d=1)
    data = pi.sample(4096, seed=7)
    fit = adaptive_plugin_aggregate(data, 1)
    assert len(fit.members) == len(fit.grid.betas) == 4
    assert len(fit.members) <= math.floor(math.log(4096) / 2)
    assert fit.plan.m + fit.plan.l == 4096
    scores = fit.aggregate(np.linspace(0, 1, 101))
    assert np.all(np.abs(scores) <= 1.0)
    assert set(np.unique(fit.classifier(np.linspace(0, 1, 101)))) <= {-1.0, 1.0}


def test_plugin_aggregate_matches_generic_pipeline():
    data = HolderDistribution("sinusoid", d=1).sample(500, seed=3)
    grid, trainers = plugin_grid_trainers(500, 1)
    a = adaptive_plugin_aggregate(data, 1)
    b = adaptive_generic_aggregate(data, trainers)
    q = np.linspace(0, 1, 57)
    assert np.array_equal(a.weights.w, b.weights.w)
    assert np.array_equal(a.aggregate(q), b.aggregate(q))


def test_bayes_perfect_member_gets_largest_weight():
    pi = HolderDistribution("sinusoid", d=1)
    data = pi.sample(400, seed=4)
    bayes = TabulatedRule(data.X, np.where(pi.eta(data.X) >= 0.5, 1, -1))
    val_truth = data.with_labels(bayes(data.X).astype(int))
    trainers = [("bayes", lambda t: bayes), ("plugin", lambda t: plugin_classifier(t, 1.0)), ("const", lambda t: ConstantRule(1))]
    fit = adaptive_generic_aggregate(val_truth, trainers)
    assert fit.weights[0] == max(fit.weights.tolist())


def test_minimal_sizes():
    fit = adaptive_plugin_aggregate(data_of(8, seed=9), 1)
    assert len(fit.members) == 1
    with pytest.raises(DomainError):
        adaptive_plugin_aggregate(data_of(7), 1)
    with pytest.raises(DomainError):
        adaptive_plugin_aggregate(data_of(50, d=2), 1)
