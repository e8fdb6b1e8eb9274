"""Marginal two-sample statistics corrected by a density ratio on X.

Under the null the joint density of population 1 equals the population-2
joint density reweighted by ``r_X = f_X^(1) / f_X^(2)``; every statistic here
compares population 1 against population 2 reweighted by ``r_X``.

``ratio`` arguments are any callable mapping an ``(n, p)`` covariate matrix
to ``n`` non-negative weights: a fitted :class:`~cond2st.ratio.DensityRatioModel`
or a known ratio such as :func:`cond2st.synth.oracle_ratio`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .core import (
    DegenerateVariance,
    PairedData,
    TestOutcome,
    balance,
    split_paired,
)
from .kernels import KernelSpec, gram, paired_kernel
from .ratio import DEFAULT_CLIP, DensityRatioModel, estimate_ratio

Ratio = Callable[[np.ndarray], np.ndarray]
Psi = Callable[[np.ndarray, np.ndarray], np.ndarray]

PSI: dict[str, Psi] = {
    "y": lambda x, y: y,
    "y2": lambda x, y: y**2,
    "x1": lambda x, y: x[:, 0],
    "x1y": lambda x, y: x[:, 0] * y,
}


def unit_ratio(x) -> np.ndarray:
    return np.ones(np.atleast_2d(x).shape[0])


@dataclass(frozen=True)
class DrtConfig:
    """Settings shared by the classifier and linear-time MMD tests.

    ``ratio`` is the importance-weight source: ``"LL"``/``"KLR"`` fit a
    marginal ratio inside the test, a callable is used as given.
    ``classifier`` picks the estimator behind the plug-in classifier
    (marginal and joint ratios fitted on the training half).
    """

    ratio: str | Ratio = "LL"
    classifier: str = "LL"
    ratio_kwargs: dict = field(default_factory=dict)
    split: float = 0.5
    ratio_fit_share: float = 0.8
    folds: int = 2
    kernel: KernelSpec = KernelSpec(bandwidth_sq=1.0)
    alpha: float = 0.05
    clip: tuple[float, float] = DEFAULT_CLIP

    def __post_init__(self):
        for name in ("split", "ratio_fit_share", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.folds < 2:
            raise ValueError(f"folds must be at least 2, got {self.folds}")
        if isinstance(self.ratio, str) and self.ratio not in ("LL", "KLR"):
            raise ValueError(f"unknown ratio estimator {self.ratio!r}")
        if self.classifier not in ("LL", "KLR"):
            raise ValueError(f"unknown classifier estimator {self.classifier!r}")

    def fit_weights(self, data: PairedData) -> Ratio:
        if callable(self.ratio):
            return self.ratio
        return estimate_ratio(data.x1, data.x2, self.ratio, clip=self.clip, **self.ratio_kwargs)


def _one_sided(method, stat, alpha, **diag) -> TestOutcome:
    reject = bool(stat > norm.ppf(1.0 - alpha))
    return TestOutcome(float(stat), float(norm.sf(stat)), reject, alpha, method, diag)


def _psi(psi) -> Psi:
    if psi is None:
        return PSI["y"]
    return PSI[psi] if isinstance(psi, str) else psi


# ---------------------------------------------------------------------------
# mean comparison, rank sum, quadratic MMD


def mean_comparison(data: PairedData, ratio: Ratio = unit_ratio, psi=None, alpha: float = 0.05) -> TestOutcome:
    """Two-sided z-test of ``mean psi(V1) - mean r(X2) psi(V2)``."""
    f = _psi(psi)
    a = np.asarray(f(data.x1, data.y1), dtype=float)
    b = np.asarray(ratio(data.x2), dtype=float) * np.asarray(f(data.x2, data.y2), dtype=float)
    num = a.mean() - b.mean()
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    if not se > 0 or not math.isfinite(se):
        return TestOutcome.forced_accept(
            "mean", alpha, "degenerate variance", degenerate_variance=True, numerator=num
        )
    z = num / se
    p = float(2.0 * norm.sf(abs(z)))
    return TestOutcome(float(z), p, p <= alpha, alpha, "mean", {"numerator": num, "se": se})


def weighted_rank_sum(data: PairedData, ratio: Ratio = unit_ratio, psi=None) -> float:
    """``(n1 n2)^-1 sum_i sum_j r(X2_j) 1{psi(V2_j) < psi(V1_i)}``; ties count zero."""
    f = _psi(psi)
    s1 = np.sort(np.asarray(f(data.x1, data.y1), dtype=float))
    s2 = np.asarray(f(data.x2, data.y2), dtype=float)
    w = np.asarray(ratio(data.x2), dtype=float)
    above = s1.size - np.searchsorted(s1, s2, side="right")
    return float(np.sum(w * above) / (s1.size * s2.size))


def mmd_quadratic_estimate(data: PairedData, ratio: Ratio = unit_ratio, kernel: KernelSpec = KernelSpec()) -> float:
    """Importance-weighted unbiased MMD^2 estimate (diagnostic only, no p-value)."""
    v1, v2 = data.v1(), data.v2()
    n1, n2 = v1.shape[0], v2.shape[0]
    w = np.asarray(ratio(data.x2), dtype=float)
    K11 = gram(kernel, v1)
    K22 = gram(kernel, v2) * np.outer(w, w)
    K12 = gram(kernel, v1, v2)
    t11 = (K11.sum() - np.trace(K11)) / (n1 * (n1 - 1))
    t22 = (K22.sum() - np.trace(K22)) / (n2 * (n2 - 1))
    t12 = 2.0 * (K12 @ w).sum() / (n1 * n2)
    return float(t11 + t22 - t12)


# ---------------------------------------------------------------------------
# classifier-based accuracy tests


def bayes_rule(r_x, r_yx) -> np.ndarray:
    """Predict population 1 where ``r_YX > r_X``, i.e. ``f^(1) > r_X f^(2)``."""
    return np.where(np.asarray(r_yx) > np.asarray(r_x), 1, 2)


def population_accuracy(pred, f1, f2, r_x):
    """Accuracy ``(P1(h=1) + E2[r_X 1{h=2}]) / 2`` over an enumerated state space.

    Works elementwise, so exact arithmetic (e.g. ``Fraction`` object arrays)
    is preserved.
    """
    pred = np.asarray(pred)
    hit1 = sum(f for f, h in zip(f1, pred) if h == 1)
    hit2 = sum(r * f for r, f, h in zip(r_x, f2, pred) if h == 2)
    return (hit1 + hit2) / 2


@dataclass(frozen=True)
class PlugInClassifier:
    """Predicts population 1 where the joint ratio exceeds the marginal ratio.

    Comparing log ratios keeps the rule free of clipping ties.
    """

    marginal: DensityRatioModel
    joint: DensityRatioModel

    def __call__(self, x, y) -> np.ndarray:
        v = np.column_stack([x, y])
        log_joint = math.log(self.joint.prior_correction) + self.joint.decision(v)
        log_marg = math.log(self.marginal.prior_correction) + self.marginal.decision(x)
        return bayes_rule(log_marg, log_joint)


def fit_classifier(train: PairedData, kind: str = "LL", **kwargs) -> PlugInClassifier:
    marg = estimate_ratio(train.x1, train.x2, kind, **kwargs)
    joint = estimate_ratio(train.v1(), train.v2(), kind, joint=True, **kwargs)
    return PlugInClassifier(marg, joint)


def accuracy_terms(h, evaluation: PairedData, ratio: Ratio) -> tuple[np.ndarray, np.ndarray]:
    a1 = (h(evaluation.x1, evaluation.y1) == 1).astype(float)
    a2 = np.asarray(ratio(evaluation.x2), dtype=float) * (h(evaluation.x2, evaluation.y2) == 2)
    return a1, a2


def accuracy_statistic(a1, a2) -> float:
    """``sqrt(m) (mean a1 + mean a2 - 1) / sqrt(s1^2 + s2^2)``; raises on zero variance."""
    a1, a2 = np.asarray(a1, dtype=float), np.asarray(a2, dtype=float)
    m = a1.size
    var = a1.var(ddof=1) + a2.var(ddof=1)
    if not var > 0 or not math.isfinite(var):
        raise DegenerateVariance("accuracy terms have zero variance")
    return math.sqrt(m) * (a1.mean() + a2.mean() - 1.0) / math.sqrt(var)


def _prepare(data: PairedData, rng) -> tuple[PairedData, dict]:
    data, diag = balance(data, rng)
    return data, dict(diag)


def classifier_test(data: PairedData, cfg: DrtConfig, rng) -> TestOutcome:
    """Single-split classification-accuracy test (one-sided)."""
    data, diag = _prepare(data, rng)
    d_a, d_b = split_paired(data, cfg.split, rng)
    h = fit_classifier(d_b, cfg.classifier, clip=cfg.clip, **cfg.ratio_kwargs)
    fit_part, eval_part = split_paired(d_a, cfg.ratio_fit_share, rng)
    ratio = cfg.fit_weights(fit_part)
    a1, a2 = accuracy_terms(h, eval_part, ratio)
    diag.update(m=int(a1.size), acc1=float(a1.mean()), acc2=float(a2.mean()))
    try:
        stat = accuracy_statistic(a1, a2)
    except DegenerateVariance:
        return TestOutcome.forced_accept("clf", cfg.alpha, "degenerate variance", degenerate_variance=True, **diag)
    return _one_sided("clf", stat, cfg.alpha, **diag)


def _folds(n: int, k: int, rng) -> list[np.ndarray]:
    return np.array_split(rng.permutation(n), k)


def combine_folds(stats) -> float:
    stats = list(stats)
    return float(sum(stats) / math.sqrt(len(stats)))


def classifier_test_cv(data: PairedData, cfg: DrtConfig, rng) -> TestOutcome:
    """K-fold accuracy test: each fold of the evaluation half is scored once,
    with the weights fitted on the other folds."""
    data, diag = _prepare(data, rng)
    d_a, d_b = split_paired(data, cfg.split, rng)
    h = fit_classifier(d_b, cfg.classifier, clip=cfg.clip, **cfg.ratio_kwargs)
    f1 = _folds(d_a.n1, cfg.folds, rng)
    f2 = _folds(d_a.n2, cfg.folds, rng)
    stats, degenerate = [], []
    for j in range(cfg.folds):
        rest1 = np.concatenate([f for i, f in enumerate(f1) if i != j])
        rest2 = np.concatenate([f for i, f in enumerate(f2) if i != j])
        ratio = cfg.fit_weights(d_a.take(rest1, rest2))
        a1, a2 = accuracy_terms(h, d_a.take(f1[j], f2[j]), ratio)
        try:
            stats.append(accuracy_statistic(a1, a2))
        except DegenerateVariance:
            stats.append(0.0)
            degenerate.append(j)
    diag.update(fold_statistics=[float(t) for t in stats], degenerate_folds=degenerate)
    if len(degenerate) == cfg.folds:
        return TestOutcome.forced_accept("clf_cv", cfg.alpha, "all folds degenerate", degenerate_variance=True, **diag)
    return _one_sided("clf_cv", combine_folds(stats), cfg.alpha, **diag)


# ---------------------------------------------------------------------------
# linear-time MMD


def linear_mmd_terms(v1, v2, w2, kernel: KernelSpec) -> np.ndarray:
    """Weighted linear-time MMD terms pairing row ``i`` with row ``i + m``.

    ``v1``, ``v2`` are the ``(x, y)`` rows of each population (same count),
    ``w2`` the ratio evaluated at the population-2 covariates.
    """
    v1, v2, w2 = np.asarray(v1, float), np.asarray(v2, float), np.asarray(w2, float)
    m = min(v1.shape[0], v2.shape[0]) // 2
    a, b = slice(0, m), slice(m, 2 * m)
    return (
        paired_kernel(kernel, v1[a], v1[b])
        + w2[a] * w2[b] * paired_kernel(kernel, v2[a], v2[b])
        - w2[a] * paired_kernel(kernel, v2[a], v1[b])
        - w2[b] * paired_kernel(kernel, v1[a], v2[b])
    )


def studentized_mean(s) -> float:
    s = np.asarray(s, dtype=float)
    sd = s.std(ddof=1) if s.size > 1 else 0.0
    if not sd > 0 or not math.isfinite(sd):
        raise DegenerateVariance("linear-time MMD terms have zero variance")
    return math.sqrt(s.size) * s.mean() / sd


def _mmd_fold(evaluation: PairedData, ratio: Ratio, kernel: KernelSpec) -> tuple[float, np.ndarray]:
    s = linear_mmd_terms(evaluation.v1(), evaluation.v2(), ratio(evaluation.x2), kernel)
    return studentized_mean(s), s


def mmd_linear_test(data: PairedData, cfg: DrtConfig, rng) -> TestOutcome:
    data, diag = _prepare(data, rng)
    d_a, d_b = split_paired(data, cfg.split, rng)
    if min(d_a.n1, d_a.n2) < 4:
        raise ValueError("evaluation half needs at least 4 rows per population")
    ratio = cfg.fit_weights(d_b)
    s = linear_mmd_terms(d_a.v1(), d_a.v2(), ratio(d_a.x2), cfg.kernel)
    diag.update(m=int(s.size), mean_term=float(s.mean()))
    try:
        stat = studentized_mean(s)
    except DegenerateVariance:
        return TestOutcome.forced_accept("mmd", cfg.alpha, "degenerate variance", degenerate_variance=True, **diag)
    return _one_sided("mmd", stat, cfg.alpha, **diag)


def mmd_linear_test_cv(data: PairedData, cfg: DrtConfig, rng) -> TestOutcome:
    """K-fold linear-time MMD: fold ``j`` is evaluated with weights fitted on
    the remaining folds; fold statistics are summed and divided by sqrt(K)."""
    data, diag = _prepare(data, rng)
    f1 = _folds(data.n1, cfg.folds, rng)
    f2 = _folds(data.n2, cfg.folds, rng)
    stats, pairs, degenerate = [], [], []
    for j in range(cfg.folds):
        if min(f1[j].size, f2[j].size) < 4:
            raise ValueError("each fold needs at least 4 rows per population")
        rest1 = np.concatenate([f for i, f in enumerate(f1) if i != j])
        rest2 = np.concatenate([f for i, f in enumerate(f2) if i != j])
        ratio = cfg.fit_weights(data.take(rest1, rest2))
        try:
            t, s = _mmd_fold(data.take(f1[j], f2[j]), ratio, cfg.kernel)
        except DegenerateVariance:
            t, s = 0.0, None
            degenerate.append(j)
        stats.append(t)
        pairs.append(0 if s is None else int(s.size))
    diag.update(fold_statistics=[float(t) for t in stats], fold_pairs=pairs, degenerate_folds=degenerate)
    if len(degenerate) == cfg.folds:
        return TestOutcome.forced_accept("mmd_cv", cfg.alpha, "all folds degenerate", degenerate_variance=True, **diag)
    return _one_sided("mmd_cv", combine_folds(stats), cfg.alpha, **diag)
