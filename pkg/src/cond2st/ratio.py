"""Density-ratio estimation by probabilistic classification.

A classifier ``eta(v) = P(label = 1 | v)`` is fitted by (penalized) maximum
likelihood, and the ratio of the label-1 density to the label-0 density is
recovered as ``(n0 / n1) * eta / (1 - eta)``.  Callers that want
``f^(1) / f^(2)`` label population-1 rows with 1; :func:`estimate_ratio`
does exactly that.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from .core import Cond2STError, DimensionMismatch
from .kernels import KernelSpec, gram

log = logging.getLogger(__name__)

DEFAULT_CLIP = (0.0, 100.0)
KLR_KERNEL = KernelSpec(bandwidth_sq=200.0)
KLR_LAMBDA = 5e-4

# fits saturating beyond this are checked for separation
_SEPARATION_THETA = 30.0


class Diverged(Cond2STError, RuntimeError):
    pass


@dataclass(frozen=True)
class DensityRatioModel:
    kind: str  # "LL" or "KLR"
    coefficients: np.ndarray  # intercept first
    prior_correction: float
    clip: tuple[float, float] = DEFAULT_CLIP
    joint: bool = False
    kernel: KernelSpec | None = None
    centers: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lo, hi = self.clip
        if not (lo >= 0 and hi > lo):
            raise ValueError(f"invalid clip interval {self.clip}")
        if not self.prior_correction > 0:
            raise ValueError("prior_correction must be positive")

    @property
    def dim(self) -> int:
        if self.kind == "KLR":
            return self.centers.shape[1]
        return self.coefficients.shape[0] - 1

    def _check(self, features) -> np.ndarray:
        v = np.asarray(features, dtype=float)
        if v.ndim == 1:
            v = v[None, :] if v.shape[0] == self.dim else v[:, None]
        if v.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {v.shape[1]}")
        return v

    def decision(self, features) -> np.ndarray:
        """Linear predictor ``theta`` (the logit of ``eta``)."""
        v = self._check(features)
        if self.kind == "KLR":
            return self.coefficients[0] + gram(self.kernel, v, self.centers) @ self.coefficients[1:]
        return self.coefficients[0] + v @ self.coefficients[1:]

    def eta(self, features) -> np.ndarray:
        return expit(self.decision(features))

    def raw_ratio(self, features) -> np.ndarray:
        # prior * eta / (1 - eta) == prior * exp(theta)
        with np.errstate(over="ignore"):
            return self.prior_correction * np.exp(self.decision(features))

    def __call__(self, features) -> np.ndarray:
        return np.clip(self.raw_ratio(features), *self.clip)


def predict_ratio(model: DensityRatioModel, point) -> float | np.ndarray:
    """Clipped ratio at one point (scalar result) or at each row of a matrix."""
    arr = np.asarray(point, dtype=float)
    out = model(arr)
    return float(out[0]) if arr.ndim == 1 else out


def ratio_from_eta(eta, prior_correction: float, clip=DEFAULT_CLIP):
    eta = np.asarray(eta, dtype=float)
    with np.errstate(divide="ignore"):
        r = prior_correction * eta / (1.0 - eta)
    return np.clip(r, *clip)


def _prep(features, labels):
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    t = np.asarray(labels, dtype=float).ravel()
    if X.shape[0] != t.shape[0]:
        raise DimensionMismatch("features and labels lengths differ")
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    n1 = int(t.sum())
    n0 = t.size - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes must be present")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or Inf")
    return X, t, n0 / n1


def _nll(theta, t):
    return float(np.sum(np.logaddexp(0.0, theta) - t * theta))


def separable(A, t) -> bool:
    """True when some direction ``a`` has ``(2t - 1) a'v >= 0`` for every row,
    with at least one strict inequality (complete or quasi-complete
    separation, where the unpenalized MLE does not exist)."""
    M = (2.0 * np.asarray(t, dtype=float) - 1.0)[:, None] * A
    res = linprog(
        np.zeros(A.shape[1]), A_ub=-M, b_ub=np.zeros(A.shape[0]),
        A_eq=M.sum(axis=0)[None, :], b_eq=[1.0], bounds=(None, None), method="highs",
    )
    return res.status == 0


def _jittered_solve(H, g):
    try:
        step = np.linalg.solve(H, g)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * np.trace(H) / H.shape[0]
    return np.linalg.lstsq(H + jitter * np.eye(H.shape[0]), g, rcond=None)[0]


def logistic_objective(features, labels, coef, ridge: float = 0.0) -> float:
    """Negative log-likelihood plus ``ridge/2 * ||slopes||^2``."""
    X, t, _ = _prep(features, labels)
    coef = np.asarray(coef, dtype=float)
    theta = coef[0] + X @ coef[1:]
    return _nll(theta, t) + 0.5 * ridge * float(coef[1:] @ coef[1:])


def fit_ll(
    features,
    labels,
    max_iter: int = 100,
    tol: float = 1e-8,
    ridge: float = 0.0,
    clip=DEFAULT_CLIP,
    joint: bool = False,
) -> DensityRatioModel:
    """Linear logistic regression by IRLS / Newton with step halving.

    Stops when the sup-norm of the objective gradient is at most ``tol``.
    ``ridge`` penalizes the slopes (never the intercept); with ``ridge=0``
    separable data raises :class:`Diverged`.
    """
    X, t, prior = _prep(features, labels)
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0
    beta = np.zeros(p + 1)
    theta = A @ beta
    obj = _nll(theta, t)
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        eta = expit(theta)
        g = A.T @ (eta - t) + pen * beta
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= tol:
            break
        w = eta * (1.0 - eta)
        H = (A * w[:, None]).T @ A + np.diag(pen)
        step = _jittered_solve(H, g)
        s = 1.0
        for _ in range(60):
            cand = beta - s * step
            cand_theta = A @ cand
            cand_obj = _nll(cand_theta, t) + 0.5 * float(pen @ cand**2)
            if cand_obj <= obj + 1e-12 * abs(obj):
                break
            s *= 0.5
        beta, theta, obj = cand, cand_theta, cand_obj
        if not np.all(np.isfinite(beta)):
            raise Diverged(f"non-finite coefficients after {it} iterations")
    else:
        eta = expit(theta)
        grad_norm = float(np.max(np.abs(A.T @ (eta - t) + pen * beta)))
        if grad_norm > tol:
            raise Diverged(f"no convergence in {max_iter} iterations (|grad|={grad_norm:.3g})")
        it = max_iter
    if ridge == 0.0 and np.max(np.abs(theta)) > _SEPARATION_THETA and separable(A, t):
        raise Diverged("classes are (quasi-)separable; use ridge > 0")
    return DensityRatioModel(
        "LL", beta, prior, tuple(clip), joint,
        diagnostics={"n_iter": it, "grad_norm": grad_norm, "objective": obj + 0.5 * float(pen @ beta**2)},
    )


def klr_objective(K, labels, coef, lam: float) -> float:
    """Penalized NLL for intercept ``coef[0]`` and expansion weights ``coef[1:]``."""
    t = np.asarray(labels, dtype=float)
    b = np.asarray(coef[1:], dtype=float)
    theta = coef[0] + K @ b
    return _nll(theta, t) + 0.5 * lam * float(b @ K @ b)


def klr_gradient(K, labels, coef, lam: float) -> np.ndarray:
    t = np.asarray(labels, dtype=float)
    b = np.asarray(coef[1:], dtype=float)
    r = expit(coef[0] + K @ b) - t
    return np.concatenate([[r.sum()], K @ (r + lam * b)])


def fit_klr(
    features,
    labels,
    kernel: KernelSpec = KLR_KERNEL,
    lam: float = KLR_LAMBDA,
    max_iter: int = 100,
    tol: float = 1e-8,
    clip=DEFAULT_CLIP,
    joint: bool = False,
) -> DensityRatioModel:
    """Kernel logistic regression with RKHS penalty ``lam/2 * b' K b``.

    Newton directions come from the reduced system
    ``W (d0 + K db) + lam db = -(r + lam b)``, ``1'W (d0 + K db) = -1'r``,
    which solves the full Newton equations without inverting ``K``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    X, t, prior = _prep(features, labels)
    n = X.shape[0]
    K = gram(kernel, X)
    coef = np.zeros(n + 1)
    obj = klr_objective(K, t, coef, lam)
    obj0 = obj
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        b0, b = coef[0], coef[1:]
        theta = b0 + K @ b
        eta = expit(theta)
        r = eta - t
        g = np.concatenate([[r.sum()], K @ (r + lam * b)])
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= tol:
            break
        w = eta * (1.0 - eta)
        M = np.empty((n + 1, n + 1))
        WK = w[:, None] * K
        M[0, 0] = w.sum()
        M[0, 1:] = WK.sum(axis=0)
        M[1:, 0] = w
        M[1:, 1:] = WK
        M[1:, 1:][np.diag_indices(n)] += lam
        rhs = -np.concatenate([[r.sum()], r + lam * b])
        step = _jittered_solve(M, rhs)
        s = 1.0
        for _ in range(60):
            cand = coef + s * step
            cand_obj = klr_objective(K, t, cand, lam)
            if cand_obj <= obj + 1e-12 * abs(obj):
                break
            s *= 0.5
        coef, obj = cand, cand_obj
        if not np.all(np.isfinite(coef)):
            raise Diverged(f"non-finite coefficients after {it} iterations")
    else:
        grad_norm = float(np.max(np.abs(klr_gradient(K, t, coef, lam))))
        if grad_norm > tol:
            raise Diverged(f"no convergence in {max_iter} iterations (|grad|={grad_norm:.3g})")
    return DensityRatioModel(
        "KLR", coef, prior, tuple(clip), joint, kernel=kernel, centers=X.copy(),
        diagnostics={"n_iter": it, "grad_norm": grad_norm, "objective": obj, "objective_at_zero": obj0},
    )


def estimate_ratio(
    numer,
    denom,
    kind: str = "LL",
    clip=DEFAULT_CLIP,
    joint: bool = False,
    **kwargs,
) -> DensityRatioModel:
    """Fit a model of ``f_numer / f_denom`` from samples of each density."""
    numer = np.atleast_2d(np.asarray(numer, dtype=float).T).T
    denom = np.atleast_2d(np.asarray(denom, dtype=float).T).T
    feats = np.vstack([numer, denom])
    labels = np.concatenate([np.ones(len(numer)), np.zeros(len(denom))])
    if kind == "LL":
        return fit_ll(feats, labels, clip=clip, joint=joint, **kwargs)
    if kind == "KLR":
        return fit_klr(feats, labels, clip=clip, joint=joint, **kwargs)
    raise ValueError(f"unknown ratio estimator {kind!r}")


def ratio_mse(ratio: Callable, x, truth: Callable) -> float:
    """Mean squared error of a ratio estimate against a known ratio on ``x``."""
    return float(np.mean((np.asarray(ratio(x)) - np.asarray(truth(x))) ** 2))
