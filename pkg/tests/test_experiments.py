import math

import numpy as np
import pytest
from scipy import stats

from aewclass.core import ConfigError
from aewclass.distributions import lower_bound_params
from aewclass.experiments import (
    ExperimentConfig,
    FitError,
    RatePoint,
    aew_exponent,
    dominance_report,
    excess_risk_mc,
    experiment_report,
    oracle_gap,
    plugin_exponent,
    points_csv,
    rate_fit,
    read_points_csv,
    run_replications,
    summarize,
)


def lb_config(**over):
    doc = {
        "distribution": {"type": "lower_bound", "M": 16, "kappa": 1, "sigma": "random"},
        "procedure": {"type": "aew", "dictionary": "bayes_candidates"},
        "n_grid": [64, 128, 256],
        "replications": 30,
        "seed": 5,
    }
    doc.update(over)
    return ExperimentConfig.from_dict(doc)


FINITE = {"type": "finite", "points": [[0.0], [1.0], [2.0]], "mass": [0.3, 0.3, 0.4], "eta": [0.9, 0.2, 0.6]}
BAYES = {"type": "tabulated", "points": [[0.0], [1.0], [2.0]], "labels": [1, -1, 1]}
WRONG = {"type": "tabulated", "points": [[0.0], [1.0], [2.0]], "labels": [1, 1, -1]}


def finite_config(members, **over):
    doc = {
        "distribution": FINITE,
        "procedure": {"type": "aew", "dictionary": members},
        "n_grid": [20, 40],
        "replications": 10,
        "seed": 1,
        "kappa": 1,
    }
    doc.update(over)
    return ExperimentConfig.from_dict(doc)


def test_exponents():
    assert aew_exponent(1) == 1 and aew_exponent(2) == pytest.approx(2 / 3)
    assert plugin_exponent(1, 2, 1) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        plugin_exponent(1, 1, 1)


def test_config_validation():
    with pytest.raises(ConfigError, match="strictly increasing"):
        lb_config(n_grid=[128, 64])
    with pytest.raises(ConfigError, match=r"\$\.replications"):
        lb_config(replications=0)
    with pytest.raises(ConfigError, match=r"\$\.procedure\.dictionary"):
        finite_config("bayes_candidates")
    with pytest.raises(ConfigError, match=r"\$\.distribution\.type"):
        ExperimentConfig.from_dict({"distribution": FINITE, "procedure": {"type": "plugin", "beta": 1},
                                    "n_grid": [10], "replications": 1, "seed": 0})
    with pytest.raises(ConfigError, match=r"\$: Additional properties"):
        ExperimentConfig.from_dict({**lb_config().to_dict(), "bogus": 1})


def test_config_round_trip_and_targets():
    cfg = lb_config()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.target() == 1.0
    assert lb_config(distribution={"type": "lower_bound", "M": 8, "kappa": 2}).target() == pytest.approx(2 / 3)
    plug = ExperimentConfig.from_dict({"distribution": {"type": "holder_sinusoid", "d": 1},
                                       "procedure": {"type": "plugin", "beta": 1},
                                       "n_grid": [100], "replications": 1, "seed": 0})
    assert plug.target() == pytest.approx(2 / 3)


def test_determinism_and_order_independence():
    cfg = lb_config()
    a = run_replications(cfg)
    b = run_replications(cfg)
    assert a == b
    assert [(r.n, r.r) for r in a] == [(n, r) for n in cfg.n_grid for r in range(30)]
    # a replication's result does not depend on the rest of the grid
    sub = run_replications(lb_config(n_grid=[128]))
    assert sub == [r for r in a if r.n == 128]


def test_parallel_matches_serial():
    cfg = lb_config(n_grid=[64, 128], replications=6)
    assert run_replications(cfg, jobs=2) == run_replications(cfg, jobs=1)


def test_single_replication_is_flagged():
    points = excess_risk_mc(lb_config(replications=1))
    assert all(p.stderr == 0 and p.degenerate for p in points)


def aew_oracle(M, n, kappa):
    """Exact expected excess of AEW over all Bayes candidates, random sigma."""
    p = lower_bound_params(M, n, kappa)
    q = (1 + p.h) / 2
    K = np.arange(n + 1)
    pk = stats.binom.pmf(K, n, p.w)
    # T = 2A - K with A ~ Bin(K, q): wrong sign for sigma=+1 iff T < 0, for sigma=-1 iff T >= 0 (tie -> +1)
    lt = np.array([stats.binom.cdf(math.ceil(k / 2) - 1, k, q) if k else 0.0 for k in K])
    le = np.array([stats.binom.cdf(k // 2, k, q) for k in K])
    wrong = 0.5 * (pk @ lt) + 0.5 * (pk @ le)
    return (p.N - 1) * p.w * p.h * wrong


@pytest.mark.parametrize("kappa", [1, 2])
def test_monte_carlo_matches_exact_oracle(kappa):
    n = 256
    cfg = lb_config(distribution={"type": "lower_bound", "M": 16, "kappa": kappa, "sigma": "random"},
                    n_grid=[n], replications=3000)
    (point,) = excess_risk_mc(cfg)
    truth = aew_oracle(16, n, kappa)
    assert abs(point.mean - truth) <= 4 * point.stderr


def test_mean_excess_decreases_with_n():
    cfg = lb_config(n_grid=[64, 256, 1024, 4096], replications=100)
    points = excess_risk_mc(cfg)
    for a, b in zip(points, points[1:]):
        assert b.mean <= a.mean + 2 * math.hypot(a.stderr, b.stderr)
    assert points[-1].mean < points[0].mean


def test_erm_and_plugin_and_adaptive_procedures_run():
    erm = run_replications(finite_config([BAYES, WRONG], procedure={"type": "erm", "dictionary": [BAYES, WRONG]}))
    assert all(r.excess in r.member_excess for r in erm)
    plug = ExperimentConfig.from_dict({"distribution": {"type": "holder_sinusoid", "d": 1, "resolution": 1000},
                                       "procedure": {"type": "plugin", "beta": 1},
                                       "n_grid": [64, 128], "replications": 2, "seed": 0})
    assert all(r.excess >= 0 for r in run_replications(plug))
    adp = ExperimentConfig.from_dict({"distribution": {"type": "holder_sinusoid", "d": 1, "resolution": 1000},
                                      "procedure": {"type": "adaptive"},
                                      "n_grid": [200], "replications": 3, "seed": 0})
    res = run_replications(adp)
    assert all(len(r.member_excess) == r.dictionary_size >= 1 and r.validation_size > 0 for r in res)
    rep = dominance_report(res, kappa=2.0)
    assert 0 <= rep.fraction <= 1 and rep.best_member_mean == min(rep.member_means)


def test_rate_fit_exact_laws():
    fit = rate_fit([(10, 0.1), (100, 0.01), (1000, 0.001)])
    assert fit.slope == pytest.approx(-1, abs=1e-12) and fit.r_squared == pytest.approx(1, abs=1e-12)
    assert rate_fit([(10, 0.3), (100, 0.3), (1000, 0.3)]).slope == 0
    ns = [2**k for k in range(5, 12)]
    fit = rate_fit([(n, 7 * n ** (-2 / 3)) for n in ns], target_exponent=2 / 3, tolerance=1e-9)
    assert abs(fit.slope + 2 / 3) <= 1e-12 and fit.within_tolerance


def test_rate_fit_excludes_nonpositive_points():
    fit = rate_fit([(10, 0.1), (20, 0.0), (100, 0.01), (1000, 0.001), (2000, -1.0)])
    assert [p[0] for p in fit.excluded] == [20, 2000]
    assert fit.slope == pytest.approx(-1, abs=1e-12)
    with pytest.raises(FitError):
        rate_fit([(10, 0.1), (100, 0.0), (1000, 0.001)])


def test_rate_fit_accepts_rate_points():
    pts = [RatePoint(n, n ** -0.5, 0.0, 1) for n in (4, 16, 64)]
    assert rate_fit(pts).slope == pytest.approx(-0.5, abs=1e-12)


def test_points_csv_round_trip(tmp_path):
    pts = summarize(run_replications(lb_config(replications=3)))
    path = tmp_path / "p.csv"
    path.write_text(points_csv(pts))
    assert read_points_csv(path) == [p.as_tuple() for p in pts]


def test_oracle_gap_with_bayes_rule_only():
    rep = oracle_gap(finite_config([BAYES]), a=1.0)
    assert all(row.gap == 0.0 and row.excess == 0.0 for row in rep.rows)
    assert all(f == 1.0 for f in rep.fractions.values())


def test_oracle_gap_identical_members():
    a = 0.5
    rep = oracle_gap(finite_config([WRONG, WRONG]), a=a)
    for row in rep.rows:
        assert row.gap == pytest.approx((1 - 2 * (1 + a)) * row.min_member_excess, abs=1e-15)
        assert row.gap <= 0


def test_oracle_gap_lower_bound_example():
    cfg = lb_config(distribution={"type": "lower_bound", "M": 8, "kappa": 2, "sigma": "random"},
                    n_grid=[100], replications=200)
    rep = oracle_gap(cfg, a=1.0)
    assert rep.fractions[5.0] >= 0.95
    assert all(0 <= f <= 1 for f in rep.fractions.values())
    assert all(math.isfinite(row.gap) and math.isfinite(row.residual) for row in rep.rows)
    assert rep.rows[0].residual == pytest.approx((math.log(4) / 100) ** (2 / 3))


def test_oracle_gap_rejects_non_dictionary_procedures():
    plug = ExperimentConfig.from_dict({"distribution": {"type": "holder_sinusoid", "d": 1},
                                       "procedure": {"type": "plugin", "beta": 1},
                                       "n_grid": [64], "replications": 1, "seed": 0})
    with pytest.raises(ConfigError):
        oracle_gap(plug, a=1.0)
    with pytest.raises(ValueError):
        oracle_gap(lb_config(), a=0.0)


def test_experiment_report_contents():
    cfg = lb_config(oracle_gap={"a": 1, "probes": [1, 5]}, slope_tolerance=0.5)
    report = experiment_report(cfg, run_replications(cfg))
    assert report["rate"]["target_exponent"] == 1.0
    assert set(report["oracle_gap"]["fractions"]) == {"1.0", "5.0"}
    assert len(report["points"]) == 3
    short = lb_config(n_grid=[64, 128])
    assert "error" in experiment_report(short, run_replications(short))["rate"]
