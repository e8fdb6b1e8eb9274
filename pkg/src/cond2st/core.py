"""Shared data containers, random streams and dataset plumbing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Cond2STError(Exception):
    """Base class for all package errors."""


class InvalidData(Cond2STError, ValueError):
    pass


class SplitTooSmall(Cond2STError, ValueError):
    pass


class DimensionMismatch(Cond2STError, ValueError):
    pass


class DegenerateVariance(Cond2STError, ArithmeticError):
    """A studentized statistic has zero (or non-finite) estimated variance."""


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidData(f"{name} must be a 2-D array, got shape {a.shape}")
    return a


def _as_vector(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[1] == 1:
        a = a[:, 0]
    if a.ndim != 1:
        raise InvalidData(f"{name} must be a 1-D array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class PairedData:
    """Two independent labeled samples ``(x1, y1)`` and ``(x2, y2)``.

    ``x1`` is ``(n1, p)``, ``y1`` is ``(n1,)``; likewise for population 2.
    Arrays are copied and marked read-only on construction.
    """

    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        x1, x2 = _as_matrix(self.x1, "x1"), _as_matrix(self.x2, "x2")
        y1, y2 = _as_vector(self.y1, "y1"), _as_vector(self.y2, "y2")
        if x1.shape[0] != y1.shape[0] or x2.shape[0] != y2.shape[0]:
            raise InvalidData("x and y row counts differ within a population")
        if x1.shape[0] < 2 or x2.shape[0] < 2:
            raise InvalidData(
                f"each population needs at least 2 rows, got n1={x1.shape[0]}, n2={x2.shape[0]}"
            )
        if x1.shape[1] != x2.shape[1] or x1.shape[1] < 1:
            raise InvalidData(f"column counts differ: {x1.shape[1]} vs {x2.shape[1]}")
        for name, a in (("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)):
            if not np.all(np.isfinite(a)):
                raise InvalidData(f"{name} contains NaN or Inf")
        for name, a in (("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)):
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n1(self) -> int:
        return self.x1.shape[0]

    @property
    def n2(self) -> int:
        return self.x2.shape[0]

    @property
    def p(self) -> int:
        return self.x1.shape[1]

    def v1(self) -> np.ndarray:
        """Population-1 rows as concatenated ``(x, y)`` features."""
        return np.column_stack([self.x1, self.y1])

    def v2(self) -> np.ndarray:
        return np.column_stack([self.x2, self.y2])

    def take(self, idx1, idx2) -> "PairedData":
        return PairedData(self.x1[idx1], self.y1[idx1], self.x2[idx2], self.y2[idx2])


@dataclass(frozen=True)
class PooledData:
    """The ``(X, Y, Z)`` representation with group label ``Z`` in {1, 2}."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = _as_matrix(self.x, "x")
        y = _as_vector(self.y, "y")
        z = np.asarray(self.z).astype(int)
        if not (x.shape[0] == y.shape[0] == z.shape[0]):
            raise InvalidData("x, y and z lengths differ")
        if not np.isin(z, (1, 2)).all():
            raise InvalidData("z entries must be 1 or 2")
        if (z == 1).sum() < 1 or (z == 2).sum() < 1:
            raise InvalidData("both groups must be present")
        for name, a in (("x", x), ("y", y), ("z", z)):
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def filter(self, group: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.z == group
        return self.x[mask], self.y[mask]


@dataclass
class TestOutcome:
    """Result of any test in the package.

    ``reject`` follows ``p_value <= alpha`` unless ``diagnostics["forced_accept"]``
    is set, in which case the test declined to reject (p-value 1).
    """

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    p_value: float
    reject: bool
    alpha: float
    method: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def forced_accept(cls, method: str, alpha: float, reason: str, statistic=float("nan"), **diag):
        diagnostics = {"forced_accept": True, "reason": reason, **diag}
        return cls(statistic, 1.0, False, alpha, method, diagnostics)

    def as_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "diagnostics": self.diagnostics,
        }


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator for the ``(seed, stream)`` pair.

    Distinct streams come from distinct ``SeedSequence`` spawn keys and are
    statistically independent.
    """
    seed, stream = int(seed), int(stream)
    if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
        raise ValueError("seed and stream must be unsigned 64-bit integers")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.PCG64(ss))


def split_paired(
    data: PairedData, ratio: float, rng: np.random.Generator
) -> tuple[PairedData, PairedData]:
    """Shuffle each population and cut it at ``floor(ratio * n_j)``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    k1 = math.floor(ratio * data.n1)
    k2 = math.floor(ratio * data.n2)
    if min(k1, k2, data.n1 - k1, data.n2 - k2) < 1:
        raise SplitTooSmall(
            f"split ratio {ratio} leaves an empty part (n1={data.n1}, n2={data.n2})"
        )
    p1 = rng.permutation(data.n1)
    p2 = rng.permutation(data.n2)
    return _part(data, p1[:k1], p2[:k2]), _part(data, p1[k1:], p2[k2:])


def _part(data: PairedData, idx1, idx2) -> PairedData:
    if min(len(idx1), len(idx2)) >= 2:
        return data.take(idx1, idx2)
    # single-row parts are legal split outputs; bypass the n >= 2 check
    obj = object.__new__(PairedData)
    for name, a in (
        ("x1", data.x1[idx1]),
        ("y1", data.y1[idx1]),
        ("x2", data.x2[idx2]),
        ("y2", data.y2[idx2]),
    ):
        object.__setattr__(obj, name, a)
    return obj


def pool(data: PairedData) -> PooledData:
    z = np.concatenate([np.ones(data.n1, dtype=int), np.full(data.n2, 2, dtype=int)])
    return PooledData(
        np.vstack([data.x1, data.x2]), np.concatenate([data.y1, data.y2]), z
    )


def balance(data: PairedData, rng: np.random.Generator) -> tuple[PairedData, dict]:
    """Subsample the larger population down to the smaller one."""
    n = min(data.n1, data.n2)
    if data.n1 == data.n2:
        return data, {}
    idx1 = np.sort(rng.choice(data.n1, n, replace=False)) if data.n1 > n else np.arange(n)
    idx2 = np.sort(rng.choice(data.n2, n, replace=False)) if data.n2 > n else np.arange(n)
    return data.take(idx1, idx2), {"balanced_from": (data.n1, data.n2)}
