"""Local polynomial estimation of ``eta`` and the plug-in classifier.

The estimator at ``x`` is the value at ``x`` of the kernel-weighted least
squares polynomial of total degree ``floor(beta)`` (the largest integer
strictly below ``beta``) fitted to the {0, 1}-coded labels, clipped to
[0, 1].

The polynomial space is parameterised by products of Legendre polynomials
in scaled offsets rather than raw monomials ``(u - x)^s``.  Both span the
same space, so the fitted value is the same; the Legendre form keeps the
normal equations well conditioned for high degrees.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .core import Dataset, DomainError, PredictionRule

KERNELS = ("uniform", "epanechnikov")

OK = 0
LOCAL_CONSTANT = 1
EMPTY_WINDOW = 2

# rank-deficiency threshold on the normalised Gram matrix (eigenvalue ratio)
SINGULAR_RCOND = 1e-10
_CHUNK_ELEMENTS = 4_000_000
REFINE_STEPS = 2


def smoothness_degree(beta: float) -> int:
    """Largest integer strictly smaller than ``beta``."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    return math.ceil(beta) - 1


@dataclass(frozen=True)
class PluginConfig:
    """Settings of the local polynomial estimator.

    ``bandwidth=None`` means ``n^(-1/(2 beta + d))`` with ``n`` the size of
    the training set actually passed in.
    """

    beta: float
    bandwidth: float | None = None
    kernel: str = "uniform"
    ridge: float = 1e-8

    def __post_init__(self):
        smoothness_degree(self.beta)
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise DomainError("bandwidth must be positive")
        if self.kernel not in KERNELS:
            raise DomainError(f"kernel must be one of {KERNELS}")
        if not self.ridge >= 0:
            raise DomainError("ridge must be nonnegative")

    @property
    def degree(self) -> int:
        return smoothness_degree(self.beta)

    def bandwidth_for(self, n: int, d: int) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return float(n) ** (-1.0 / (2.0 * self.beta + d))


def default_bandwidth(n: int, beta: float, d: int) -> float:
    return float(n) ** (-1.0 / (2.0 * beta + d))


class LocalFit(NamedTuple):
    value: float
    raw: float
    flag: int


class LocalFits(NamedTuple):
    values: np.ndarray
    raw: np.ndarray
    flags: np.ndarray


# ---------------------------------------------------------------------------
# polynomial basis


def multi_indices(d: int, degree: int):
    """All ``s`` in N^d with ``|s| <= degree``, ordered by total degree."""
    out = [s for s in itertools.product(range(degree + 1), repeat=d) if sum(s) <= degree]
    return sorted(out, key=lambda s: (sum(s), tuple(-v for v in s)))


def _legendre_table(v: np.ndarray, degree: int) -> np.ndarray:
    table = np.empty(v.shape + (degree + 1,))
    table[..., 0] = 1.0
    if degree >= 1:
        table[..., 1] = v
    for k in range(1, degree):
        table[..., k + 1] = ((2 * k + 1) * v * table[..., k] - k * table[..., k - 1]) / (k + 1)
    return table


def _basis(V: np.ndarray, indices) -> np.ndarray:
    """Basis values for offsets ``V`` of shape ``(..., d)`` -> ``(..., D)``."""
    degree = max(sum(s) for s in indices)
    table = _legendre_table(V, degree)  # (..., d, degree+1)
    d = V.shape[-1]
    cols = []
    for s in indices:
        col = table[..., 0, s[0]]
        for j in range(1, d):
            col = col * table[..., j, s[j]]
        cols.append(col)
    return np.stack(cols, axis=-1)


def _legendre_from_monomials(degree: int) -> np.ndarray:
    """Matrix ``T`` with ``P_a(v) = sum_k T[a, k] v^k``."""
    T = np.zeros((degree + 1, degree + 1))
    for a in range(degree + 1):
        T[a, : a + 1] = np.polynomial.legendre.leg2poly(np.eye(degree + 1)[a])[: a + 1]
    return T


def _weighted_fit(B, K, y, ridge, T=None):
    """Batched weighted least squares.

    ``B`` is ``(q, c, D)``, ``K`` is ``(q, c)`` and ``y`` is ``(q, c)``.  When
    ``T`` is given, ``B`` holds monomials and the normal equations are
    mapped to the basis ``T`` describes.  Returns coefficients ``(q, D)``,
    the local-constant estimate ``(q,)``, the total weight and a mask of
    rank-deficient designs.
    """
    wsum = K.sum(axis=1)
    safe = np.where(wsum > 0, wsum, 1.0)
    const = (K * y).sum(axis=1) / safe
    D = B.shape[-1]
    if D == 1:
        return const[:, None], const, wsum, np.zeros(len(K), dtype=bool)
    Bw = B * K[..., None]
    BwT = Bw.transpose(0, 2, 1)
    G = (BwT @ B) / safe[:, None, None]
    b = (BwT @ y[..., None])[..., 0] / safe[:, None]
    if T is not None:
        G = T @ G @ T.T
        b = b @ T.T
    lam = np.linalg.eigvalsh(G)
    singular = ~(lam[:, 0] > SINGULAR_RCOND * np.maximum(lam[:, -1], 1e-300))
    coef = np.zeros_like(b)
    good = ~singular & (wsum > 0)
    if np.any(good):
        Gg, bg = G[good], b[good][..., None]
        Gr = Gg + ridge * np.eye(D)
        c = np.linalg.solve(Gr, bg)
        # iterative refinement removes the ridge bias on well-posed designs
        for _ in range(REFINE_STEPS):
            c = c + np.linalg.solve(Gr, bg - Gg @ c)
        coef[good] = c[..., 0]
        bad = ~np.all(np.isfinite(coef), axis=1)
        singular = singular | bad
    return coef, const, wsum, singular


def _masked_span(V, K):
    """Per-query centre and half-width of the points with positive weight."""
    inside = (K > 0)[..., None]
    lo = np.where(inside, V, np.inf).min(axis=1)
    hi = np.where(inside, V, -np.inf).max(axis=1)
    ok = np.isfinite(lo) & np.isfinite(hi)
    lo, hi = np.where(ok, lo, 0.0), np.where(ok, hi, 0.0)
    center = np.where(ok, (lo + hi) / 2.0, 0.0)
    half = np.where(ok, (hi - lo) / 2.0, 1.0)
    return center, np.where(half > 0, half, 1.0)


# ---------------------------------------------------------------------------
# estimator


class LocalPolynomialEstimator:
    """Local polynomial regression of {0, 1}-coded labels.

    Parameters
    ----------
    train : Dataset
    cfg : PluginConfig
    responses : array, optional
        Real responses to regress instead of the {0, 1}-coded labels.
    """

    def __init__(self, train: Dataset, cfg: PluginConfig, responses=None):
        if train.n == 0:
            raise DomainError("training set is empty")
        self.cfg = cfg
        self.d = train.d
        self.n = train.n
        self.h = cfg.bandwidth_for(train.n, train.d)
        self.degree = cfg.degree
        self.indices = multi_indices(self.d, self.degree)
        # ``responses`` replaces the {0, 1} label coding (real-valued regression)
        y01 = (train.y + 1) / 2.0 if responses is None else np.asarray(responses, dtype=float).ravel()
        if len(y01) != train.n:
            raise DomainError("one response per training point is required")
        if self.d == 1:
            order = np.argsort(train.X[:, 0], kind="stable")
            self.u = train.X[order, 0]
            self.X = self.u[:, None]
            self.y01 = y01[order]
            self._prefix = np.concatenate([[0.0], np.cumsum(self.y01)])
        else:
            self.X = train.X
            self.y01 = y01
        self._T = _legendre_from_monomials(self.degree) if self.d == 1 else None

    def predict(self, X, method="auto") -> LocalFits:
        """Estimates at every row of ``X``.

        ``method`` is ``"auto"``, ``"windows"`` (1-d uniform kernel only:
        one fit per distinct neighbour set) or ``"direct"`` (one weighted
        fit per query).
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.d)
        if X.shape[1] != self.d:
            raise DomainError(f"query dimension {X.shape[1]} != training dimension {self.d}")
        windows_ok = self.d == 1 and self.cfg.kernel == "uniform"
        if method == "auto":
            method = "windows" if windows_ok else "direct"
        if method == "windows":
            if not windows_ok:
                raise DomainError("window grouping needs d=1 and the uniform kernel")
            raw, flags = self._predict_windows(X[:, 0])
        elif method == "direct":
            raw, flags = self._predict_direct(X)
        else:
            raise DomainError(f"unknown method {method!r}")
        return LocalFits(np.clip(raw, 0.0, 1.0), raw, flags)

    def fit_at(self, x) -> LocalFit:
        x = np.asarray(x, dtype=float).reshape(1, self.d)
        fits = self.predict(x, method="direct")
        return LocalFit(float(fits.values[0]), float(fits.raw[0]), int(fits.flags[0]))

    # -- 1-d uniform kernel -------------------------------------------------

    def _predict_windows(self, x):
        u, h = self.u, self.h
        lo = np.searchsorted(u, x - h, side="left")
        hi = np.searchsorted(u, x + h, side="right")
        count = hi - lo
        raw = np.full(len(x), 0.5)
        flags = np.full(len(x), OK, dtype=np.int8)
        empty = count == 0
        flags[empty] = EMPTY_WINDOW
        full = ~empty
        const = np.zeros(len(x))
        const[full] = (self._prefix[hi[full]] - self._prefix[lo[full]]) / count[full]
        if self.degree == 0:
            raw[full] = const[full]
            return raw, flags
        # the least squares polynomial depends only on the neighbour set
        keys = lo[full].astype(np.int64) * (len(u) + 1) + hi[full]
        uniq, inverse = np.unique(keys, return_inverse=True)
        wlo = uniq // (len(u) + 1)
        whi = uniq % (len(u) + 1)
        center = (u[wlo] + u[whi - 1]) / 2.0
        scale = (u[whi - 1] - u[wlo]) / 2.0
        scale = np.where(scale > 0, scale, 1.0)
        coef, singular = self._fit_windows(wlo, whi, center, scale)
        q_idx = np.flatnonzero(full)
        win = inverse.ravel()
        V = ((x[q_idx] - center[win]) / scale[win])[:, None]
        fitted = np.einsum("qi,qi->q", _basis(V, self.indices), coef[win])
        sing_q = singular[win]
        raw[q_idx] = np.where(sing_q, const[q_idx], fitted)
        flags[q_idx[sing_q]] = LOCAL_CONSTANT
        return raw, flags

    def _fit_windows(self, wlo, whi, center, scale):
        D = len(self.indices)
        size = whi - wlo
        order = np.argsort(size, kind="stable")
        coef = np.zeros((len(wlo), D))
        singular = np.zeros(len(wlo), dtype=bool)
        budget = max(1, _CHUNK_ELEMENTS // D)
        start = 0
        while start < len(order):
            # sizes ascend along `order`, so k * size[k-th] grows with k
            rest = size[order[start:]]
            fits = np.arange(1, len(rest) + 1) * rest <= budget
            sel = order[start:start + max(1, int(fits.sum()))]
            wmax = size[sel].max()
            offs = np.arange(wmax)
            idx = wlo[sel, None] + offs
            mask = offs < size[sel, None]
            idx = np.where(mask, idx, wlo[sel, None])
            V = (self.u[idx] - center[sel, None]) / scale[sel, None]
            B = np.empty(V.shape + (D,))
            B[..., 0] = 1.0
            for k in range(1, D):
                np.multiply(B[..., k - 1], V, out=B[..., k])
            K = mask.astype(float)
            c, _, _, sing = _weighted_fit(B, K, self.y01[idx], self.cfg.ridge, self._T)
            coef[sel] = c
            singular[sel] = sing
            start += len(sel)
        return coef, singular

    # -- general kernels / dimensions ----------------------------------------

    def _kernel(self, Xq, Xc):
        h = self.h
        if self.d == 1 and self.cfg.kernel == "uniform":
            x = Xq[:, 0:1]
            u = Xc[None, :, 0]
            return ((u >= x - h) & (u <= x + h)).astype(float)
        diff = (Xc[None, :, :] - Xq[:, None, :]) / h
        r2 = np.einsum("qcj,qcj->qc", diff, diff)
        if self.cfg.kernel == "uniform":
            return (r2 <= 1.0).astype(float)
        return np.maximum(0.0, 1.0 - r2)

    def _predict_direct(self, X):
        Q = len(X)
        raw = np.full(Q, 0.5)
        flags = np.full(Q, OK, dtype=np.int8)
        D = len(self.indices)
        if self.d == 1:
            order = np.argsort(X[:, 0], kind="stable")
        else:
            order = np.arange(Q)
        n = len(self.X)
        step = max(1, _CHUNK_ELEMENTS // max(1, n * D))
        for start in range(0, Q, step):
            sel = order[start:start + step]
            Xq = X[sel]
            if self.d == 1:
                lo = np.searchsorted(self.u, Xq[:, 0].min() - self.h, side="left")
                hi = np.searchsorted(self.u, Xq[:, 0].max() + self.h, side="right")
                cand = slice(lo, hi)
            else:
                cand = slice(0, n)
            Xc = self.X[cand]
            yc = self.y01[cand]
            if len(Xc) == 0:
                flags[sel] = EMPTY_WINDOW
                continue
            K = self._kernel(Xq, Xc)
            V = (Xc[None, :, :] - Xq[:, None, :]) / self.h
            center, half = _masked_span(V, K)
            B = _basis((V - center[:, None, :]) / half[:, None, :], self.indices)
            coef, const, wsum, singular = _weighted_fit(B, K, np.broadcast_to(yc, K.shape), self.cfg.ridge)
            at_query = _basis(-center / half, self.indices)
            fitted = np.einsum("qi,qi->q", at_query, coef)
            empty = wsum == 0
            raw[sel] = np.where(empty, 0.5, np.where(singular, const, fitted))
            flags[sel] = np.where(empty, EMPTY_WINDOW, np.where(singular, LOCAL_CONSTANT, OK))
        return raw, flags


def local_poly_estimate(train: Dataset, x, cfg: PluginConfig) -> LocalFit:
    """Estimate ``eta(x)``; the result carries the raw fit and a fallback flag."""
    return LocalPolynomialEstimator(train, cfg).fit_at(x)


def local_poly_estimates(train: Dataset, X, cfg: PluginConfig, method="auto") -> LocalFits:
    return LocalPolynomialEstimator(train, cfg).predict(X, method=method)


class PluginRule(PredictionRule):
    """``x -> 2 * 1{eta_hat(x) >= 1/2} - 1``."""

    def __init__(self, estimator: LocalPolynomialEstimator):
        self.estimator = estimator

    @property
    def beta(self):
        return self.estimator.cfg.beta

    @property
    def bandwidth(self):
        return self.estimator.h

    def estimate(self, X) -> LocalFits:
        return self.estimator.predict(X)

    def evaluate(self, X):
        return np.where(self.estimator.predict(X).values >= 0.5, 1.0, -1.0)

    def __repr__(self):
        return f"PluginRule(beta={self.beta:.4g}, h={self.bandwidth:.4g})"


def plugin_classifier(train: Dataset, beta: float, d: int | None = None, cfg: PluginConfig | None = None) -> PluginRule:
    """Plug-in rule built on ``train`` with bandwidth ``n^(-1/(2 beta + d))``."""
    if train.n == 0:
        raise DomainError("training set is empty")
    if d is not None and d != train.d:
        raise DomainError(f"d={d} does not match the training dimension {train.d}")
    cfg = PluginConfig(beta) if cfg is None else replace(cfg, beta=beta)
    return PluginRule(LocalPolynomialEstimator(train, cfg))
