"""Probability models with exact (or quadrature-exact) risk oracles.

Every model exposes the same small surface used by the experiment harness:

* ``nodes`` -- points where a score must be evaluated to compute its risk,
* ``risk_report(values)`` -- risks from score values at ``nodes``,
* ``sample(n, seed)`` -- an i.i.d. :class:`~aewclass.core.Dataset`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CapacityError,
    ConfigError,
    Dataset,
    DomainError,
    ScoreFunction,
    TabulatedRule,
)

MARGIN_MAX_ATOMS = 16


@dataclass(frozen=True)
class RiskReport:
    r: float
    r_star: float
    a: float
    a_star: float

    @property
    def excess_r(self) -> float:
        return self.r - self.r_star

    @property
    def excess_a(self) -> float:
        return self.a - self.a_star

    def as_dict(self):
        return {
            "r": self.r, "r_star": self.r_star, "a": self.a, "a_star": self.a_star,
            "excess_r": self.excess_r, "excess_a": self.excess_a,
        }


def _risks(mass, eta, values) -> RiskReport:
    # one sequential pass per quantity; mass sums to one
    values = np.asarray(values, dtype=float)
    negative = values < 0  # sign tie at 0 goes to +1
    r = float(np.sum(mass * np.where(negative, eta, 1.0 - eta)))
    r_star = float(np.sum(mass * np.minimum(eta, 1.0 - eta)))
    a = float(np.sum(mass * (eta * np.maximum(0.0, 1.0 - values)
                             + (1.0 - eta) * np.maximum(0.0, 1.0 + values))))
    return RiskReport(r, r_star, a, 2.0 * r_star)


# ---------------------------------------------------------------------------
# finite supports


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Joint law of ``(X, Y)`` with ``X`` on finitely many atoms.

    ``points`` has shape ``(N, d)``; ``mass[i] = P(X = points[i])`` and
    ``eta[i] = P(Y = 1 | X = points[i])``.
    """

    points: np.ndarray
    mass: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        mass = np.array(self.mass, dtype=float).ravel()
        eta = np.array(self.eta, dtype=float).ravel()
        if not (len(points) == len(mass) == len(eta)) or len(points) == 0:
            raise DomainError("points, mass and eta must be nonempty and of equal length")
        if np.any(mass <= 0) or abs(mass.sum() - 1.0) > 1e-12:
            raise DomainError(f"atom masses must be positive and sum to 1 (sum={mass.sum()!r})")
        if np.any((eta < 0) | (eta > 1)) or not np.all(np.isfinite(eta)):
            raise DomainError("eta must lie in [0, 1]")
        if len(np.unique(points, axis=0)) != len(points):
            raise DomainError("atom locations must be distinct")
        for a in (points, mass, eta):
            a.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "eta", eta)

    @property
    def N(self) -> int:
        return len(self.mass)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.points

    def bayes_labels(self) -> np.ndarray:
        return np.where(2.0 * self.eta - 1.0 >= 0, 1, -1)

    def bayes_rule(self) -> TabulatedRule:
        return TabulatedRule(self.points, self.bayes_labels())

    def risk_report(self, values) -> RiskReport:
        return _risks(self.mass, self.eta, values)

    def exact_risks(self, f: ScoreFunction) -> RiskReport:
        return self.risk_report(f(self.points))

    def sample(self, n: int, seed=None) -> Dataset:
        if n < 1:
            raise DomainError("sample size must be at least 1")
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.N, size=n, p=self.mass)
        y = np.where(rng.random(n) < self.eta[idx], 1, -1)
        return Dataset(self.points[idx], y)

    def to_spec(self):
        return {
            "type": "finite",
            "points": self.points.tolist(),
            "mass": self.mass.tolist(),
            "eta": self.eta.tolist(),
        }


def exact_risks(pi, f: ScoreFunction) -> RiskReport:
    """Misclassification and hinge risks of ``f`` together with their optima."""
    return pi.exact_risks(f)


def sample(pi, n: int, seed=None) -> Dataset:
    return pi.sample(n, seed)


# ---------------------------------------------------------------------------
# margin assumption


@dataclass(frozen=True)
class MarginSpec:
    kappa: float
    c0: float

    def __post_init__(self):
        if not self.kappa >= 1:
            raise DomainError("kappa must be at least 1")
        if not self.c0 > 0:
            raise DomainError("c0 must be positive")


def _subset_matrix(N):
    codes = np.arange(1, 2 ** N, dtype=np.int64)
    return ((codes[:, None] >> np.arange(N)) & 1).astype(bool)


def margin_c0(pi: FiniteDistribution, kappa: float) -> MarginSpec | None:
    """Smallest ``c0`` with ``E|f - f*| <= c0 (R(f) - R*)^(1/kappa)`` for every rule.

    All ``2^N`` prediction rules on the support are enumerated.  A rule is
    identified with the set of atoms where it disagrees with the Bayes rule,
    on which it pays ``2 p_i`` in disagreement and ``p_i |2 eta_i - 1|`` in
    excess risk.  Returns ``None`` when some disagreeing rule has zero
    excess risk (an atom with ``eta = 1/2``): no finite ``c0`` exists.
    """
    if not kappa >= 1:
        raise DomainError("kappa must be at least 1")
    if pi.N > MARGIN_MAX_ATOMS:
        raise CapacityError(f"margin_c0 enumerates 2^N rules; N={pi.N} exceeds {MARGIN_MAX_ATOMS}")
    gap = np.abs(2.0 * pi.eta - 1.0)
    if np.any(gap == 0.0):
        return None
    subsets = _subset_matrix(pi.N)
    disagreement = subsets @ (2.0 * pi.mass)
    excess = subsets @ (pi.mass * gap)
    ratios = disagreement / excess ** (1.0 / kappa)
    return MarginSpec(float(kappa), float(ratios.max()))


def noise_exponent_check(pi: FiniteDistribution, kappa: float, c: float, rtol=1e-12) -> bool:
    """Whether ``P(|2 eta(X) - 1| <= t) <= c t^(1/(kappa-1))`` for all ``t`` in [0, 1).

    The left side is a right-continuous step function and the right side is
    nondecreasing, so it suffices to check the jump points below 1 and the
    left limit at ``t = 1``, where the left side is ``P(|2 eta - 1| < 1)``.
    """
    if not kappa > 1:
        raise DomainError("the noise exponent condition needs kappa > 1")
    gap = np.abs(2.0 * pi.eta - 1.0)
    ts = np.unique(gap[gap < 1.0])
    lhs = np.array([pi.mass[gap <= t].sum() for t in ts] + [pi.mass[gap < 1.0].sum()])
    rhs = c * np.append(ts ** (1.0 / (kappa - 1.0)), 1.0)
    return bool(np.all(lhs <= rhs + rtol * np.maximum(1.0, np.abs(rhs))))


# ---------------------------------------------------------------------------
# lower-bound family


@dataclass(frozen=True)
class LowerBoundParams:
    """Parameters of the hypercube family with ``N`` atoms.

    ``N - 1`` atoms carry mass ``w`` and ``eta = (1 + sigma_j h) / 2``; the
    last atom carries the remaining mass with ``eta = 1``.  ``warnings``
    lists the membership conditions that the chosen ``(M, n, kappa)``
    violate; it is empty inside the regime where the construction is valid.
    """

    M: int
    n: int
    N: int
    w: float
    h: float
    kappa: float
    sigma: tuple
    warnings: tuple = field(default=())

    @property
    def warning(self) -> bool:
        return bool(self.warnings)


def support_size(M: int) -> int:
    """``ceil(log M / log 2)``, computed exactly on integers."""
    if M < 2:
        raise DomainError("the lower-bound family needs M >= 2")
    return (int(M) - 1).bit_length()


def lower_bound_params(M: int, n: int, kappa: float, sigma=None) -> LowerBoundParams:
    if not kappa >= 1:
        raise DomainError("kappa must be at least 1")
    if n < 1:
        raise DomainError("n must be at least 1")
    N = support_size(M)
    if math.log(M) > n:
        raise DomainError(f"need log M <= n (log M = {math.log(M):.4g}, n = {n})")
    if sigma is None:
        sigma = (1,) * (N - 1)
    sigma = tuple(int(s) for s in sigma)
    if len(sigma) != N - 1 or any(s not in (-1, 1) for s in sigma):
        raise DomainError(f"sigma must be a vector of {N - 1} signs")
    if kappa == 1:
        h, w = 0.5, 4.0 / n
    else:
        h = (N / n) ** ((kappa - 1.0) / (2.0 * kappa - 1.0))
        w = 1.0 / (n * h * h)
    issues = []
    if not 0 < w < 1.0 / N:
        issues.append(f"w={w:.6g} outside (0, 1/N)")
    if not 0 < h < 1:
        issues.append(f"h={h:.6g} outside (0, 1)")
    # h^(1/(kappa-1)) = (N/n)^(1/(2 kappa-1)); the right side stays accurate as kappa -> 1
    if kappa > 1 and (N - 1) * w > (N / n) ** (1.0 / (2.0 * kappa - 1.0)):
        issues.append("(N-1) w exceeds h^(1/(kappa-1))")
    return LowerBoundParams(int(M), int(n), N, w, h, float(kappa), sigma, tuple(issues))


def lower_bound_distribution(params: LowerBoundParams) -> FiniteDistribution:
    N, w, h = params.N, params.w, params.h
    points = np.arange(1, N + 1, dtype=float) / N
    last = 1.0 - (N - 1) * w
    if not 0 < last <= 1 or not w > 0:
        raise DomainError(f"no probability law for w={w!r} with N={N}")
    mass = np.append(np.full(N - 1, w), last)
    eta = np.append((1.0 + np.array(params.sigma, dtype=float) * h) / 2.0, 1.0)
    return FiniteDistribution(points, mass, eta)


def lower_bound_family(M: int, n: int, kappa: float, sigma=None):
    """The hypercube construction used for the minimax lower bound.

    ``N = ceil(log2 M)`` atoms at ``i / N``.  For ``kappa > 1``:
    ``h = (N / n)^((kappa-1)/(2 kappa-1))`` and ``w = 1 / (n h^2)``; for
    ``kappa = 1``: ``h = 1/2`` and ``w = 4 / n``.

    Returns
    -------
    (LowerBoundParams, FiniteDistribution)
    """
    params = lower_bound_params(M, n, kappa, sigma)
    return params, lower_bound_distribution(params)


def bayes_candidate_rules(params: LowerBoundParams):
    """Bayes rules of all ``2^(N-1)`` members of the family, in product order."""
    N = params.N
    points = np.arange(1, N + 1, dtype=float) / N
    rules, labels = [], []
    for s in itertools.product((-1, 1), repeat=N - 1):
        rules.append(TabulatedRule(points, list(s) + [1]))
        labels.append("sigma=" + "".join("+" if v > 0 else "-" for v in s))
    return rules, labels


# ---------------------------------------------------------------------------
# smooth conditional probabilities on [0, 1]^d


DEFAULT_RESOLUTION = {1: 10_000, 2: 512}


class HolderDistribution:
    """``X`` uniform on ``[0, 1]^d`` with a smooth regression function ``eta``.

    Risks are computed by midpoint quadrature on a tensor grid with
    ``resolution`` nodes per axis.

    Families
    --------
    ``sinusoid``
        ``eta(x) = 1/2 + amplitude * sin(2 pi frequency x_1)``.  ``eta``
        crosses 1/2 with nonzero slope, so ``P(|2 eta - 1| <= t)`` is linear
        near 0: margin parameter 2.  Smooth, so any beta is admissible;
        beta=1 is the documented default.
    ``bump``
        ``eta(x) = 1/2 + amplitude * sign(r) |r|^gamma`` with
        ``r = radius - ||x - center||``.  ``P(|2 eta - 1| <= t)`` scales as
        ``t^(1/gamma)`` (margin parameter ``1 + gamma``) and eta is Hölder
        with exponent ``min(gamma, 1)``.
    """

    def __init__(self, family="sinusoid", d=1, amplitude=0.4, frequency=1.0,
                 center=None, radius=0.3, gamma=1.0, resolution=None, beta=None, kappa=None):
        if d not in (1, 2):
            raise CapacityError(f"quadrature risks are available for d in {{1, 2}}, got d={d}")
        if family not in ("sinusoid", "bump"):
            raise DomainError(f"unknown family {family!r}")
        self.family = family
        self.d = int(d)
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.center = np.full(self.d, 0.5) if center is None else np.asarray(center, dtype=float).ravel()
        self.radius = float(radius)
        self.gamma = float(gamma)
        if family == "sinusoid":
            peak = abs(self.amplitude)
            self.kappa = 2.0 if kappa is None else float(kappa)
            self.beta = 1.0 if beta is None else float(beta)
        else:
            if not self.gamma > 0:
                raise DomainError("gamma must be positive")
            reach = max(abs(self.radius), math.sqrt(self.d) - self.radius)
            peak = abs(self.amplitude) * reach ** self.gamma
            self.kappa = 1.0 + self.gamma if kappa is None else float(kappa)
            self.beta = min(self.gamma, 1.0) if beta is None else float(beta)
        if peak > 0.5 + 1e-15:
            raise DomainError("eta would leave [0, 1]; reduce the amplitude")
        self.resolution = int(resolution or DEFAULT_RESOLUTION[self.d])
        if self.resolution < 1:
            raise DomainError("resolution must be positive")
        self._nodes = None
        self._eta_nodes = None

    def eta(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        if self.family == "sinusoid":
            v = 0.5 + self.amplitude * np.sin(2.0 * np.pi * self.frequency * X[:, 0])
        else:
            r = self.radius - np.linalg.norm(X - self.center, axis=1)
            v = 0.5 + self.amplitude * np.sign(r) * np.abs(r) ** self.gamma
        return np.clip(v, 0.0, 1.0)

    @property
    def nodes(self) -> np.ndarray:
        if self._nodes is None:
            axis = (np.arange(self.resolution) + 0.5) / self.resolution
            grids = np.meshgrid(*([axis] * self.d), indexing="ij")
            nodes = np.stack([g.ravel() for g in grids], axis=1)
            nodes.flags.writeable = False
            self._nodes = nodes
            self._eta_nodes = self.eta(nodes)
        return self._nodes

    @property
    def eta_nodes(self) -> np.ndarray:
        self.nodes
        return self._eta_nodes

    def risk_report(self, values) -> RiskReport:
        eta = self.eta_nodes
        mass = np.full(len(eta), 1.0 / len(eta))
        return _risks(mass, eta, values)

    def exact_risks(self, f: ScoreFunction) -> RiskReport:
        return self.risk_report(f(self.nodes))

    def noise_mass(self, t) -> np.ndarray:
        """Quadrature estimate of ``P(|2 eta(X) - 1| <= t)``."""
        gap = np.sort(np.abs(2.0 * self.eta_nodes - 1.0))
        return np.searchsorted(gap, np.asarray(t, dtype=float), side="right") / len(gap)

    def sample(self, n: int, seed=None) -> Dataset:
        if n < 1:
            raise DomainError("sample size must be at least 1")
        rng = np.random.default_rng(seed)
        X = rng.random((n, self.d))
        y = np.where(rng.random(n) < self.eta(X), 1, -1)
        return Dataset(X, y)

    def to_spec(self):
        spec = {"type": f"holder_{self.family}", "d": self.d, "amplitude": self.amplitude,
                "resolution": self.resolution}
        if self.family == "sinusoid":
            spec["frequency"] = self.frequency
        else:
            spec.update(center=self.center.tolist(), radius=self.radius, gamma=self.gamma)
        return spec


def holder_eta_distribution(spec) -> HolderDistribution:
    """Build a :class:`HolderDistribution` from keyword parameters or a spec dict."""
    if isinstance(spec, HolderDistribution):
        return spec
    params = dict(spec)
    kind = params.pop("type", "holder_sinusoid")
    family = params.pop("family", kind.replace("holder_", ""))
    return HolderDistribution(family=family, **params)


# ---------------------------------------------------------------------------
# JSON specs

def distribution_from_spec(spec: dict, n: int | None = None, rng=None, path="$.distribution"):
    """Instantiate a distribution from its JSON description.

    ``lower_bound`` specs depend on the sample size ``n``; ``sigma`` may be an
    explicit sign vector, ``"ones"`` or ``"random"`` (drawn from ``rng``).
    Returns ``(distribution, info)`` where ``info`` records resolved
    parameters.
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{path}: expected an object with a 'type' field")
    kind = spec["type"]
    try:
        if kind == "finite":
            return FiniteDistribution(spec["points"], spec["mass"], spec["eta"]), {}
        if kind == "lower_bound":
            M, kappa = int(spec["M"]), float(spec["kappa"])
            n = int(spec.get("n", n) if n is None else n)
            sigma = spec.get("sigma", "ones")
            N = support_size(M)
            if sigma == "ones":
                sigma = (1,) * (N - 1)
            elif sigma == "random":
                rng = np.random.default_rng(rng)
                sigma = tuple(int(s) for s in rng.choice([-1, 1], size=N - 1))
            params, pi = lower_bound_family(M, n, kappa, sigma)
            return pi, {"params": params}
        if kind in ("holder_sinusoid", "holder_bump"):
            params = {k: v for k, v in spec.items() if k != "type"}
            return holder_eta_distribution({"type": kind, **params}), {}
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc.args[0]!r} for distribution {kind!r}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}.type: unknown distribution type {kind!r}")
