"""Conditional two-sample testing through a conditional independence test.

:func:`convert` turns any test of ``Y _||_ Z | X`` on pooled data into a
conditional two-sample test: it draws the group counts of an i.i.d. pooled
sample of slightly reduced size from a Binomial, accepts when either
population is too small to supply them, and otherwise runs the inner test.
The Generalized Covariance Measure (GCM) ships as the built-in inner test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import binom, norm

from .core import DegenerateVariance, PairedData, PooledData, TestOutcome
from .kernels import KernelSpec, gram


class InvalidEpsilon(ValueError):
    pass


def kstar(epsilon: float, n1: int) -> float:
    """Largest retained fraction whose Chernoff tail bound equals ``epsilon``.

    Solves ``n1 * k * (1/k - 1)^2 / 3 = -log(epsilon)`` for ``k`` in (0, 1).
    """
    if not 0.0 < epsilon < 1.0:
        raise InvalidEpsilon(f"epsilon must be in (0, 1), got {epsilon}")
    if n1 < 1:
        raise ValueError("n1 must be positive")
    c = -3.0 * math.log(epsilon) / (2.0 * n1)
    # 1 + c - sqrt((1 + c)^2 - 1), rewritten to avoid cancellation for small c
    return 1.0 / (1.0 + c + math.sqrt(c * (2.0 + c)))


def default_epsilon(n: int) -> float:
    return 1.0 / math.log(n)


def binomial_inverse(trials: int, prob: float, rng) -> int:
    """Binomial draw by inversion of the exact CDF."""
    return int(binom.ppf(rng.random(), trials, prob))


# ---------------------------------------------------------------------------
# regressors


class Regressor:
    def predict(self, X) -> np.ndarray:
        raise NotImplementedError


@dataclass
class KnownFunction(Regressor):
    f: Callable[[np.ndarray], np.ndarray]

    def predict(self, X):
        return np.asarray(self.f(np.asarray(X, dtype=float)), dtype=float)


@dataclass
class LinearRegressor(Regressor):
    coef: np.ndarray
    intercept: float

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercept + X @ self.coef


@dataclass
class KernelRidgeRegressor(Regressor):
    centers: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec

    def predict(self, X):
        return gram(self.kernel, np.atleast_2d(np.asarray(X, dtype=float)), self.centers) @ self.weights


def fit_linear(X, t) -> LinearRegressor:
    """Least squares with intercept; singular normal equations get a 1e-8 relative ridge."""
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    t = np.asarray(t, dtype=float)
    A = np.column_stack([np.ones(X.shape[0]), X])
    G = A.T @ A
    rhs = A.T @ t
    if X.shape[0] <= X.shape[1] or np.linalg.cond(G) > 1e12:
        G = G + 1e-8 * np.trace(G) / G.shape[0] * np.eye(G.shape[0])
    sol = np.linalg.solve(G, rhs)
    return LinearRegressor(sol[1:], float(sol[0]))


def fit_kernel_ridge(X, t, kernel: KernelSpec = KernelSpec(), lam: float = 1.0) -> KernelRidgeRegressor:
    """Uncentered kernel ridge regression, weights ``(K + lam I)^-1 t``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    t = np.asarray(t, dtype=float)
    K = gram(kernel, X)
    weights = np.linalg.solve(K + lam * np.eye(K.shape[0]), t)
    return KernelRidgeRegressor(X.copy(), weights, kernel)


def _fit(spec, X, t) -> Regressor:
    if isinstance(spec, Regressor):
        return spec
    if spec == "linear":
        return fit_linear(X, t)
    if spec == "kernel_ridge":
        return fit_kernel_ridge(X, t)
    if callable(spec):
        return spec(X, t)
    raise ValueError(f"unknown regressor {spec!r}")


# ---------------------------------------------------------------------------
# GCM


def gcm_from_residuals(R) -> float:
    R = np.asarray(R, dtype=float)
    n = R.size
    mean = R.mean()
    second = np.mean(R**2)
    var = second - mean**2
    if n < 2 or not var > 1e-12 * max(second, np.finfo(float).tiny):
        raise DegenerateVariance("GCM residual products have zero variance")
    return float(math.sqrt(n) * mean / math.sqrt(var))


def gcm_statistic(pooled: PooledData, f_hat: Regressor, g_hat: Regressor) -> float:
    """Normalized sum of ``(Y - f(X)) (Z - g(X))`` with ``Z`` coded 1/2."""
    ry = pooled.y - f_hat.predict(pooled.x)
    rz = pooled.z - g_hat.predict(pooled.x)
    # a perfect fit leaves only rounding noise, which would look like signal after normalizing
    for r, t in ((ry, pooled.y), (rz, pooled.z)):
        if np.max(np.abs(r)) <= 1e-10 * max(1.0, float(np.max(np.abs(t)))):
            raise DegenerateVariance("a regression fits its target exactly")
    return gcm_from_residuals(ry * rz)


def gcm_test(pooled: PooledData, regressor_f="linear", regressor_g="linear", alpha: float = 0.05) -> TestOutcome:
    """GCM with both regressions fitted on the full pooled sample; two-sided p-value."""
    f_hat = _fit(regressor_f, pooled.x, pooled.y)
    g_hat = _fit(regressor_g, pooled.x, pooled.z.astype(float))
    try:
        T = gcm_statistic(pooled, f_hat, g_hat)
    except DegenerateVariance:
        return TestOutcome.forced_accept("gcm", alpha, "degenerate variance", degenerate_variance=True)
    p = float(2.0 * norm.sf(abs(T)))
    return TestOutcome(T, p, p <= alpha, alpha, "gcm", {"n": pooled.n})


# ---------------------------------------------------------------------------
# converter


@dataclass
class CitAdapter:
    """Inner conditional-independence test plus the converter's settings.

    ``epsilon=None`` means ``1 / log(n1 + n2)``.
    """

    inner_test: Callable[[PooledData], TestOutcome]
    epsilon: float | None = None
    alpha: float = 0.05

    @classmethod
    def gcm(cls, regressor_f="linear", regressor_g="linear", epsilon=None, alpha=0.05) -> "CitAdapter":
        def inner(pooled):
            return gcm_test(pooled, regressor_f, regressor_g, alpha)

        return cls(inner, epsilon, alpha)


def draw_counts(n1: int, n2: int, epsilon: float, rng) -> tuple[int, int, int]:
    """Return ``(n_tilde, n_tilde_1, n_tilde_2)`` for one run of the converter."""
    n = n1 + n2
    n_tilde = int(round(kstar(epsilon, n1) * n))
    t1 = binomial_inverse(n_tilde, n1 / n, rng)
    return n_tilde, t1, n_tilde - t1


def convert(data: PairedData, adapter: CitAdapter, rng) -> TestOutcome:
    n1, n2 = data.n1, data.n2
    eps = adapter.epsilon if adapter.epsilon is not None else default_epsilon(n1 + n2)
    n_tilde, t1, t2 = draw_counts(n1, n2, eps, rng)
    diag = {"epsilon": eps, "n_tilde": n_tilde, "n_tilde_1": t1, "n_tilde_2": t2, "bad_event": False}
    if t1 > n1 or t2 > n2:
        diag["bad_event"] = True
        return TestOutcome.forced_accept("cit", adapter.alpha, "bad event", **diag)
    if t1 == 0 or t2 == 0:
        return TestOutcome.forced_accept("cit", adapter.alpha, "empty group", **diag)
    i1 = rng.permutation(n1)[:t1]
    i2 = rng.permutation(n2)[:t2]
    pooled = PooledData(
        np.vstack([data.x1[i1], data.x2[i2]]),
        np.concatenate([data.y1[i1], data.y2[i2]]),
        np.concatenate([np.ones(t1, dtype=int), np.full(t2, 2, dtype=int)]),
    )
    inner = adapter.inner_test(pooled)
    diag.update(inner.diagnostics)
    return TestOutcome(inner.statistic, inner.p_value, inner.reject, inner.alpha, f"cit[{inner.method}]", diag)


# ---------------------------------------------------------------------------
# coupling of the stable GCM case


def coupled_gcm_pair(data: PairedData, f, g, draw: Callable, rng) -> tuple[float, float]:
    """GCM with known ``f``, ``g`` on the data and on its i.i.d. coupling.

    The coupled sample keeps ``nbar_1 ~ Binomial(n, n1/n)`` population-1 rows
    and ``n - nbar_1`` population-2 rows, topping up whichever population is
    short with fresh rows from ``draw(population, count, rng) -> (x, y)``.
    """
    n1, n2 = data.n1, data.n2
    n = n1 + n2
    nbar1 = binomial_inverse(n, n1 / n, rng)
    nbar2 = n - nbar1
    x1, y1, x2, y2 = data.x1, data.y1, data.x2, data.y2
    if nbar1 > n1:
        ex, ey = draw(1, nbar1 - n1, rng)
        x1, y1 = np.vstack([x1, ex]), np.concatenate([y1, ey])
    elif nbar2 > n2:
        ex, ey = draw(2, nbar2 - n2, rng)
        x2, y2 = np.vstack([x2, ex]), np.concatenate([y2, ey])

    def stat(xa, ya, xb, yb):
        x = np.vstack([xa, xb])
        y = np.concatenate([ya, yb])
        z = np.concatenate([np.ones(len(ya)), np.full(len(yb), 2.0)])
        return gcm_from_residuals((y - f(x)) * (z - g(x)))

    T = stat(data.x1, data.y1, data.x2, data.y2)
    T_tilde = stat(x1[:nbar1], y1[:nbar1], x2[:nbar2], y2[:nbar2])
    return T, T_tilde
