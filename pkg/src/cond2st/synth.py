"""Synthetic benchmark scenarios and biased subsampling of real data.

Three data-generating processes, each with Gaussian (unbounded ratio) or
box-truncated Gaussian (bounded ratio) covariates:

* ``S1`` linear model with a mean shift and t(2) noise,
* ``S2`` large, and under the alternative heteroscedastic, noise,
* ``S3`` post-nonlinear model ``y = f(x'1 + 2 eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from .core import Cond2STError, PairedData

TRUNC_LO, TRUNC_HI = -0.5, 0.5

S3_ALTERNATIVES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda s: s,
    "square": np.square,
    "cube": lambda s: s**3,
    "sin": np.sin,
    "tanh": np.tanh,
}


class OutOfSupport(Cond2STError, ValueError):
    pass


class DegenerateWeights(Cond2STError, ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "S1"  # S1 | S2 | S3
    support: str = "U"  # U (Gaussian) | B (truncated to [-0.5, 0.5]^p)
    hypothesis: str = "null"  # null | alt
    n: int = 1000  # per population
    p: int = 10
    seed: int = 0
    shift: float = 0.5  # S1 alternative mean shift of population 2

    def __post_init__(self):
        object.__setattr__(self, "scenario", self.scenario.upper())
        object.__setattr__(self, "support", self.support.upper()[:1])
        object.__setattr__(self, "hypothesis", self.hypothesis.lower())
        if self.scenario not in ("S1", "S2", "S3"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.support not in ("U", "B"):
            raise ValueError(f"unknown support {self.support!r}")
        if self.hypothesis not in ("null", "alt"):
            raise ValueError(f"unknown hypothesis {self.hypothesis!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.p < 5:
            raise ValueError("p must be at least 5")

    @property
    def id(self) -> str:
        return f"{self.scenario}{self.support}"

    @property
    def bounded(self) -> bool:
        return self.support == "B"

    @property
    def mu(self) -> np.ndarray:
        return mean_shift(self.p)

    @property
    def beta(self) -> np.ndarray:
        b = np.zeros(self.p)
        b[:4] = (1.0, -1.0, -1.0, 1.0)
        return b


def mean_shift(p: int) -> np.ndarray:
    mu = np.zeros(p)
    mu[:4] = (1.0, 1.0, -1.0, -1.0)
    return mu


def sample_truncated_gaussian(mean, lo: float, hi: float, n: int, rng) -> np.ndarray:
    """``n`` draws of ``N(mean, I)`` conditioned on the box ``[lo, hi]^p``.

    Coordinates are independent, so each one is filled by rejection from its
    own univariate normal.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if not lo < hi:
        raise ValueError("need lo < hi")
    out = np.empty((n, mean.size))
    for j, m in enumerate(mean):
        acc = norm.cdf(hi - m) - norm.cdf(lo - m)
        if acc <= 0:
            raise ValueError(f"coordinate {j}: no mass on [{lo}, {hi}]")
        filled = 0
        while filled < n:
            need = n - filled
            draw = m + rng.standard_normal(int(need / acc * 1.2) + 16)
            keep = draw[(draw >= lo) & (draw <= hi)][:need]
            out[filled : filled + keep.size, j] = keep
            filled += keep.size
    assert np.all((out >= lo) & (out <= hi))
    return out


def sample_covariates(cfg: ScenarioConfig, population: int, n: int, rng) -> np.ndarray:
    mean = np.zeros(cfg.p) if population == 1 else cfg.mu
    if cfg.bounded:
        return sample_truncated_gaussian(mean, TRUNC_LO, TRUNC_HI, n, rng)
    return mean + rng.standard_normal((n, cfg.p))


def pick_s3_alternative(rng) -> str:
    names = list(S3_ALTERNATIVES)
    return names[int(rng.integers(len(names)))]


def sample_response(cfg: ScenarioConfig, population: int, x: np.ndarray, rng, s3_link: str | None = None):
    n = x.shape[0]
    alt2 = cfg.hypothesis == "alt" and population == 2
    if cfg.scenario == "S1":
        delta = cfg.shift if alt2 else 0.0
        return delta + x @ cfg.beta + rng.standard_t(2, size=n)
    if cfg.scenario == "S2":
        if alt2:
            b = np.ones(cfg.p)
            b[-1] = 0.0
            var = 10.0 * (1.0 + np.exp(-np.sum((x - 0.5) ** 2, axis=1) / 64.0))
        else:
            b = np.ones(cfg.p)
            var = np.full(n, 100.0)
        return x @ b + np.sqrt(var) * rng.standard_normal(n)
    s = x.sum(axis=1) + 2.0 * rng.standard_normal(n)
    if alt2:
        return S3_ALTERNATIVES[s3_link or "identity"](s)
    return np.cos(s)


def draw_population(cfg: ScenarioConfig, population: int, n: int, rng, s3_link: str | None = None):
    x = sample_covariates(cfg, population, n, rng)
    return x, sample_response(cfg, population, x, rng, s3_link)


def gen_scenario(cfg: ScenarioConfig, rng) -> PairedData:
    """Draw ``cfg.n`` rows per population.

    Under the S3 alternative the population-2 link is drawn once per call and
    reported through :func:`gen_scenario_with_info`.
    """
    return gen_scenario_with_info(cfg, rng)[0]


def gen_scenario_with_info(cfg: ScenarioConfig, rng) -> tuple[PairedData, dict]:
    link = pick_s3_alternative(rng) if cfg.scenario == "S3" and cfg.hypothesis == "alt" else None
    x1, y1 = draw_population(cfg, 1, cfg.n, rng)
    x2, y2 = draw_population(cfg, 2, cfg.n, rng, link)
    info = {"s3_link": link} if link else {}
    return PairedData(x1, y1, x2, y2), info


def _log_box_mass(mean: np.ndarray) -> float:
    return float(np.sum(np.log(norm.cdf(TRUNC_HI - mean) - norm.cdf(TRUNC_LO - mean))))


def true_marginal_ratio(cfg: ScenarioConfig, x) -> float | np.ndarray:
    """Exact ``f_X^(1)(x) / f_X^(2)(x)`` for the scenario covariates."""
    arr = np.asarray(x, dtype=float)
    pts = np.atleast_2d(arr)
    mu = cfg.mu
    log_r = mu @ mu / 2.0 - pts @ mu
    if cfg.bounded:
        if np.any((pts < TRUNC_LO) | (pts > TRUNC_HI)):
            raise OutOfSupport("point outside [-0.5, 0.5]^p")
        log_r = log_r + _log_box_mass(mu) - _log_box_mass(np.zeros(cfg.p))
    r = np.exp(log_r)
    return float(r[0]) if arr.ndim == 1 else r


def oracle_ratio(cfg: ScenarioConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized true ratio, usable wherever a fitted ratio model is."""

    def r(x):
        return np.atleast_1d(true_marginal_ratio(cfg, np.atleast_2d(x)))

    return r


def null_regression(cfg: ScenarioConfig) -> Callable[[np.ndarray], np.ndarray]:
    """``E[Y | X = x]`` under the null (identical for both populations)."""
    if cfg.scenario == "S1":
        return lambda x: np.asarray(x) @ cfg.beta
    if cfg.scenario == "S2":
        return lambda x: np.asarray(x).sum(axis=1)
    # E cos(s + 2 eps) = cos(s) E cos(2 eps) = cos(s) exp(-2)
    return lambda x: np.cos(np.asarray(x).sum(axis=1)) * np.exp(-2.0)


def group_regression(cfg: ScenarioConfig, frac1: float) -> Callable[[np.ndarray], np.ndarray]:
    """``E[Z | X = x]`` for pooled data with ``P(Z = 1) = frac1``, Z in {1, 2}."""
    r = oracle_ratio(cfg)
    odds = frac1 / (1.0 - frac1)
    return lambda x: 1.0 + 1.0 / (1.0 + odds * r(x))


@dataclass(frozen=True)
class BiasSpec:
    """Row-selection weights; covariate and response weights multiply."""

    covariate_bias: str | Callable = "exp_neg_x1_sq"
    response_bias: str | Callable = "exp_neg_y"
    apply_response_bias: bool = False


_COVARIATE_WEIGHTS = {
    "exp_neg_x1_sq": lambda x: np.exp(-x[:, 0] ** 2),
    "none": lambda x: np.ones(x.shape[0]),
}
_RESPONSE_WEIGHTS = {
    "exp_neg_y": lambda y: np.exp(-y),
    "none": lambda y: np.ones(y.shape[0]),
}


def _resolve(f, table):
    if callable(f):
        return f
    try:
        return table[f]
    except KeyError:
        raise ValueError(f"unknown weight function {f!r}; choose from {sorted(table)}") from None


def bias_weights(x, y, bias: BiasSpec) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    y = np.asarray(y, dtype=float)
    w = _resolve(bias.covariate_bias, _COVARIATE_WEIGHTS)(x)
    if bias.apply_response_bias:
        with np.errstate(over="ignore"):
            w = w * _resolve(bias.response_bias, _RESPONSE_WEIGHTS)(y)
    return np.asarray(w, dtype=float)


def biased_subsample(x, y, k: int, bias: BiasSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``k`` rows without replacement with probability proportional to the weights."""
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    y = np.asarray(y, dtype=float)
    if k > x.shape[0]:
        raise ValueError(f"cannot draw {k} rows from {x.shape[0]}")
    w = bias_weights(x, y, bias)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateWeights("weights must be finite and non-negative")
    total = w.sum()
    if not total > 0:
        raise DegenerateWeights("all weights are numerically zero")
    if np.count_nonzero(w) < k:
        raise DegenerateWeights(f"only {np.count_nonzero(w)} rows have positive weight")
    idx = rng.choice(x.shape[0], size=k, replace=False, p=w / total)
    return x[idx], y[idx]


def real_data_pair(x, y, n: int, alternative: bool, rng, bias: BiasSpec | None = None) -> PairedData:
    """Population 1 drawn uniformly, population 2 by biased sampling from the remaining rows.

    Inputs are expected to be standardized already.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    y = np.asarray(y, dtype=float)
    if 2 * n > x.shape[0]:
        raise ValueError(f"need at least {2 * n} rows, have {x.shape[0]}")
    bias = bias or BiasSpec()
    bias = BiasSpec(bias.covariate_bias, bias.response_bias, alternative)
    perm = rng.permutation(x.shape[0])
    first, rest = perm[:n], perm[n:]
    x2, y2 = biased_subsample(x[rest], y[rest], n, bias, rng)
    return PairedData(x[first], y[first], x2, y2)
