"""Monte Carlo excess risks, oracle-gap probes and log-log rate fits.

Every replication ``r`` at sample size ``n`` draws its randomness from
``SeedSequence([seed, n, r])``, so results do not depend on execution order
and replications can run in worker processes.  Excess risks are exact: they
come from the distribution's risk oracle, never from a test sample.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
import json

import numpy as np

from . import schemas
from .adaptive import adaptive_plugin_aggregate
from .aggregation import Dictionary, dictionary_from_spec, weights_from_scores
from .core import AEWError, ConfigError, DomainError, zero_one_risk_of_values
from .distributions import FiniteDistribution, HolderDistribution, bayes_candidate_rules, distribution_from_spec
from .plugin import PluginConfig, plugin_classifier

DEFAULT_PROBES = (1.0, 2.0, 5.0, 10.0)


class FitError(AEWError, ValueError):
    """Too few usable points for a log-log fit."""


def aew_exponent(kappa: float) -> float:
    """Exponent of the aggregation residual ``(log M / n)^(kappa / (2 kappa - 1))``."""
    if not kappa >= 1:
        raise DomainError("kappa must be at least 1")
    return kappa / (2.0 * kappa - 1.0)


def plugin_exponent(beta: float, kappa: float, d: int) -> float:
    """Plug-in rate exponent ``beta kappa / ((kappa - 1)(2 beta + d))``; needs kappa > 1."""
    if not kappa > 1:
        raise DomainError("the plug-in exponent needs kappa > 1")
    if not beta > 0 or d < 1:
        raise DomainError("need beta > 0 and d >= 1")
    return beta * kappa / ((kappa - 1.0) * (2.0 * beta + d))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description (see ``docs/formats.md``)."""

    distribution: dict
    procedure: dict
    n_grid: tuple
    replications: int
    seed: int
    kappa: float | None = None
    beta: float | None = None
    target_exponent: float | None = None
    slope_tolerance: float | None = None
    oracle_gap: dict | None = None

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("$.n_grid: must be nonempty and strictly increasing")
        if int(self.replications) < 1:
            raise ConfigError("$.replications: must be at least 1")
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        schemas.validate(doc, schemas.EXPERIMENT)
        fields = {k: v for k, v in doc.items() if k != "schema_version"}
        cfg = cls(**fields)
        cfg.resolve_procedure()
        return cfg

    def to_dict(self) -> dict:
        doc = {"schema_version": schemas.SCHEMA_VERSION}
        for k, v in asdict(self).items():
            if v is not None:
                doc[k] = list(v) if k == "n_grid" else v
        return doc

    @property
    def kind(self) -> str:
        return self.procedure["type"]

    @property
    def dictionary_based(self) -> bool:
        return self.kind in ("aew", "erm")

    def resolve_procedure(self):
        """Check cross-field requirements that the schema cannot express."""
        proc, dist = self.procedure, self.distribution
        if self.dictionary_based and proc["dictionary"] == "bayes_candidates" and dist["type"] != "lower_bound":
            raise ConfigError("$.procedure.dictionary: 'bayes_candidates' needs a lower_bound distribution")
        if self.dictionary_based and proc["dictionary"] != "bayes_candidates":
            _dictionary(self, {})
        if self.kind in ("plugin", "adaptive") and dist["type"] not in ("holder_sinusoid", "holder_bump"):
            raise ConfigError("$.distribution.type: plug-in procedures need a holder_* distribution")
        if self.kind == "adaptive" and min(self.n_grid) < 8:
            raise ConfigError("$.n_grid: adaptive aggregation needs n >= 8")

    def declared_kappa(self) -> float | None:
        if self.kappa is not None:
            return float(self.kappa)
        dist = self.distribution
        if dist["type"] == "lower_bound":
            return float(dist["kappa"])
        if dist["type"].startswith("holder_"):
            return _holder(json.dumps(dist, sort_keys=True)).kappa
        return None

    def declared_beta(self) -> float | None:
        if self.beta is not None:
            return float(self.beta)
        if self.distribution["type"].startswith("holder_"):
            return _holder(json.dumps(self.distribution, sort_keys=True)).beta
        return None

    def target(self) -> float | None:
        """Target decay exponent (positive; the expected slope is its negative)."""
        if self.target_exponent is not None:
            return float(self.target_exponent)
        kappa = self.declared_kappa()
        if kappa is None:
            return None
        if self.dictionary_based:
            return aew_exponent(kappa)
        beta = self.declared_beta()
        if beta is None or kappa <= 1:
            return None
        return plugin_exponent(beta, kappa, int(self.distribution.get("d", 1)))


@lru_cache(maxsize=8)
def _holder(spec_json: str) -> HolderDistribution:
    # quadrature nodes are reused across replications in one process
    pi, _ = distribution_from_spec(json.loads(spec_json))
    return pi


# ---------------------------------------------------------------------------
# replications


@dataclass(frozen=True)
class ReplicationResult:
    """Outcome of one replication.

    ``member_excess`` holds the exact excess of every dictionary member (or
    adaptive grid member); ``validation_size`` is ``l`` for adaptive runs.
    """

    n: int
    r: int
    excess: float
    member_excess: tuple = ()
    dictionary_size: int = 0
    validation_size: int = 0


def replication_seed(seed: int, n: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(n), int(r)])


def _distribution(cfg: ExperimentConfig, n: int, rng):
    spec = cfg.distribution
    if spec["type"].startswith("holder_"):
        return _holder(json.dumps(spec, sort_keys=True)), {}
    return distribution_from_spec(spec, n=n, rng=rng)


def _dictionary(cfg: ExperimentConfig, info) -> Dictionary:
    proc = cfg.procedure
    if proc["dictionary"] == "bayes_candidates":
        rules, labels = bayes_candidate_rules(info["params"])
        return Dictionary(rules, clip=proc.get("clip", True), labels=labels)
    return dictionary_from_spec(proc["dictionary"], clip=proc.get("clip", True), root="$.procedure.dictionary")


def _plugin_cfg(proc, beta=None) -> PluginConfig:
    return PluginConfig(beta if beta is not None else proc.get("beta", 1.0),
                        proc.get("bandwidth"), proc.get("kernel", "uniform"))


def run_replication(cfg: ExperimentConfig, n: int, r: int) -> ReplicationResult:
    """One independent run at sample size ``n``."""
    dist_ss, data_ss = replication_seed(cfg.seed, n, r).spawn(2)
    pi, info = _distribution(cfg, n, np.random.default_rng(dist_ss))
    if not isinstance(pi, (FiniteDistribution, HolderDistribution)):
        raise ConfigError("$.distribution: no exact risk oracle for this distribution")
    data = pi.sample(n, seed=data_ss)
    nodes = pi.nodes
    proc = cfg.procedure
    if cfg.dictionary_based:
        family = _dictionary(cfg, info)
        train_values = family.evaluate(data.X)
        values = family.evaluate(nodes)
        member = tuple(pi.risk_report(v).excess_r for v in values)
        if cfg.kind == "aew":
            w = weights_from_scores(train_values @ data.y.astype(float))
            excess = pi.risk_report(w @ values).excess_r
        else:
            losses = zero_one_risk_of_values(data.y, train_values)
            excess = member[int(np.argmin(losses))]
        return ReplicationResult(n, r, excess, member, family.M)
    if cfg.kind == "plugin":
        rule = plugin_classifier(data, float(proc["beta"]), cfg=_plugin_cfg(proc))
        return ReplicationResult(n, r, pi.exact_risks(rule).excess_r)
    fit = adaptive_plugin_aggregate(data, cfg=_plugin_cfg(proc))
    values = fit.aggregate.dictionary.evaluate(nodes)
    member = tuple(pi.risk_report(v).excess_r for v in values)
    excess = pi.risk_report(fit.aggregate.combine(values)).excess_r
    return ReplicationResult(n, r, excess, member, len(member), fit.plan.l)


def _task(args):
    doc, n, r = args
    return run_replication(ExperimentConfig(**doc), n, r)


def run_replications(cfg: ExperimentConfig, jobs: int = 1) -> list:
    """All replications over the grid, ordered by ``(n, r)``."""
    tasks = [(n, r) for n in cfg.n_grid for r in range(cfg.replications)]
    if jobs is None or jobs <= 1:
        results = [run_replication(cfg, n, r) for n, r in tasks]
    else:
        doc = {k: v for k, v in cfg.to_dict().items() if k != "schema_version"}
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            results = list(pool.map(_task, [(doc, n, r) for n, r in tasks], chunksize=8))
    return sorted(results, key=lambda res: (res.n, res.r))


@dataclass(frozen=True)
class RatePoint:
    n: int
    mean: float
    stderr: float
    replications: int
    degenerate: bool = False

    def as_tuple(self):
        return (self.n, self.mean, self.stderr)


def summarize(results) -> list:
    """Mean and standard error (sample std / sqrt(reps)) per sample size."""
    by_n = {}
    for res in results:
        by_n.setdefault(res.n, []).append(res.excess)
    points = []
    for n in sorted(by_n):
        x = np.array(by_n[n])
        reps = len(x)
        stderr = float(np.std(x, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        points.append(RatePoint(n, float(np.mean(x)), stderr, reps, reps == 1))
    return points


def excess_risk_mc(cfg: ExperimentConfig, jobs: int = 1) -> list:
    """Monte Carlo mean excess risk at every ``n`` of the grid."""
    return summarize(run_replications(cfg, jobs))


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateReport:
    points: tuple
    slope: float
    intercept: float
    r_squared: float
    target_exponent: float | None = None
    tolerance: float | None = None
    within_tolerance: bool | None = None
    excluded: tuple = ()

    def as_dict(self):
        return {
            "points": [list(p) for p in self.points],
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "target_exponent": self.target_exponent,
            "tolerance": self.tolerance,
            "within_tolerance": self.within_tolerance,
            "excluded": [list(p) for p in self.excluded],
        }


def _as_point(p):
    if isinstance(p, RatePoint):
        return p.as_tuple()
    p = tuple(p)
    return (p[0], p[1], p[2] if len(p) > 2 else 0.0)


def rate_fit(points, target_exponent=None, tolerance=None) -> RateReport:
    """Least-squares fit of ``log(excess)`` against ``log(n)``.

    Points with nonpositive or non-finite excess are dropped and listed in
    ``excluded``.  ``within_tolerance`` compares the slope with
    ``-target_exponent`` when both target and tolerance are given.
    """
    pts = [_as_point(p) for p in points]
    kept = tuple(p for p in pts if p[1] > 0 and math.isfinite(p[1]) and p[0] > 0)
    excluded = tuple(p for p in pts if p not in kept)
    if len(kept) < 3:
        raise FitError(f"need at least 3 points with positive excess, have {len(kept)}")
    x = np.log(np.array([p[0] for p in kept], dtype=float))
    y = np.log(np.array([p[1] for p in kept], dtype=float))
    xc, yc = x - x.mean(), y - y.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise FitError("all points share one sample size")
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    ss_tot = float(yc @ yc)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    within = None
    if target_exponent is not None and tolerance is not None:
        within = bool(abs(slope + target_exponent) <= tolerance)
    return RateReport(kept, slope, intercept, r2, target_exponent, tolerance, within, excluded)


# ---------------------------------------------------------------------------
# oracle-gap probes


@dataclass(frozen=True)
class GapRow:
    n: int
    r: int
    excess: float
    min_member_excess: float
    residual: float
    gap: float


@dataclass(frozen=True)
class OracleGapReport:
    """``gap = excess - 2(1+a) min_j excess_j`` against ``(log M / n)^(kappa/(2 kappa-1))``."""

    a: float
    kappa: float
    probes: tuple
    rows: tuple
    fractions: dict
    fractions_by_n: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "a": self.a,
            "kappa": self.kappa,
            "probes": list(self.probes),
            "fractions": {repr(c): f for c, f in self.fractions.items()},
            "fractions_by_n": {str(n): {repr(c): f for c, f in d.items()}
                               for n, d in self.fractions_by_n.items()},
            "rows": [asdict(row) for row in self.rows],
        }


def gap_rows(results, a: float, kappa: float) -> tuple:
    rows = []
    for res in results:
        if not res.member_excess:
            raise ConfigError("oracle gap needs per-member excess risks (dictionary-based procedure)")
        best = min(res.member_excess)
        residual = (math.log(res.dictionary_size) / res.n) ** aew_exponent(kappa)
        rows.append(GapRow(res.n, res.r, res.excess, best, residual, res.excess - 2.0 * (1.0 + a) * best))
    return tuple(rows)


def _fractions(rows, probes):
    if not rows:
        return {c: 0.0 for c in probes}
    return {c: sum(row.gap <= c * row.residual for row in rows) / len(rows) for c in probes}


def oracle_gap(cfg: ExperimentConfig, a: float, probes=DEFAULT_PROBES, jobs: int = 1, results=None) -> OracleGapReport:
    """Per-replication oracle gaps and the fraction below each probe multiple of the residual."""
    if not a > 0:
        raise DomainError("a must be positive")
    if not cfg.dictionary_based:
        raise ConfigError("$.procedure: oracle gap needs a dictionary-based procedure (aew or erm)")
    if cfg.distribution["type"] not in ("finite", "lower_bound"):
        raise ConfigError("$.distribution: oracle gap needs a finite distribution")
    kappa = cfg.declared_kappa()
    if kappa is None:
        raise ConfigError("$.kappa: required for the oracle-gap residual")
    if results is None:
        results = run_replications(cfg, jobs)
    rows = gap_rows(results, a, kappa)
    probes = tuple(float(c) for c in probes)
    by_n = {n: _fractions([row for row in rows if row.n == n], probes) for n in cfg.n_grid}
    return OracleGapReport(float(a), kappa, probes, rows, _fractions(rows, probes), by_n)


# ---------------------------------------------------------------------------
# adaptive dominance


@dataclass(frozen=True)
class DominanceReport:
    """Compare the adaptive aggregate with its best grid member at one ``n``.

    ``holds`` checks ``mean(agg) <= ratio * min_j mean(member_j) + residual``;
    ``fraction`` is the share of replications where the per-replication
    analogue ``agg <= ratio * min_j member_j + residual`` holds.
    """

    n: int
    mean_excess: float
    member_means: tuple
    best_member_mean: float
    residual: float
    ratio: float
    holds: bool
    fraction: float

    def as_dict(self):
        return asdict(self)


def dominance_report(results, kappa: float, ratio=2.5, constant=3.0) -> DominanceReport:
    results = list(results)
    if not results or any(not res.member_excess for res in results):
        raise ConfigError("dominance needs adaptive replications with member excess risks")
    ns = {res.n for res in results}
    if len(ns) != 1:
        raise DomainError("dominance is reported for a single sample size")
    sizes = {len(res.member_excess) for res in results}
    if len(sizes) != 1:
        raise DomainError("grid size differs between replications")
    res0 = results[0]
    residual = constant * (math.log(res0.dictionary_size) / res0.validation_size) ** aew_exponent(kappa)
    agg = np.array([res.excess for res in results])
    members = np.array([res.member_excess for res in results])
    member_means = members.mean(axis=0)
    best = float(member_means.min())
    holds = bool(agg.mean() <= ratio * best + residual)
    per_rep = agg <= ratio * members.min(axis=1) + residual
    return DominanceReport(res0.n, float(agg.mean()), tuple(member_means.tolist()), best, residual,
                           ratio, holds, float(per_rep.mean()))


# ---------------------------------------------------------------------------
# reports


def points_csv(points) -> str:
    lines = ["n,mean_excess,stderr,replications,degenerate"]
    for p in points:
        lines.append(f"{p.n},{p.mean!r},{p.stderr!r},{p.replications},{int(p.degenerate)}")
    return "\n".join(lines) + "\n"


def read_points_csv(path) -> list:
    """Read ``n,mean_excess[,stderr,...]`` rows written by :func:`points_csv`."""
    import csv

    points = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"n", "mean_excess"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected columns n and mean_excess")
        for lineno, row in enumerate(reader, start=2):
            try:
                stderr = float(row["stderr"]) if row.get("stderr") not in (None, "") else 0.0
                points.append((int(row["n"]), float(row["mean_excess"]), stderr))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return points


def experiment_report(cfg: ExperimentConfig, results) -> dict:
    """JSON-ready summary: points, rate fit (if possible), oracle gap, dominance."""
    points = summarize(results)
    report = {
        "schema_version": schemas.SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "points": [asdict(p) for p in points],
    }
    target = cfg.target()
    try:
        fit = rate_fit(points, target, cfg.slope_tolerance if target is not None else None)
        report["rate"] = fit.as_dict()
    except FitError as exc:
        report["rate"] = {"error": str(exc)}
    if cfg.oracle_gap is not None:
        og = cfg.oracle_gap
        gap = oracle_gap(cfg, og.get("a", 1.0), og.get("probes", DEFAULT_PROBES), results=results)
        report["oracle_gap"] = gap.as_dict()
    if cfg.kind == "adaptive":
        kappa = cfg.declared_kappa()
        report["dominance"] = [
            dominance_report([res for res in results if res.n == n], kappa).as_dict() for n in cfg.n_grid
        ]
    return report
