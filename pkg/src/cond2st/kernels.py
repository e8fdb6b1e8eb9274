"""Gaussian kernel and Gram matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatch


@dataclass(frozen=True)
class KernelSpec:
    """``k(a, b) = scale * exp(-||a - b||^2 / bandwidth_sq)``.

    ``scale`` defaults to 1 so that ``k(a, a) = 1``; it exists only so that
    invariance of studentized statistics to ``c * k`` can be exercised.
    """

    bandwidth_sq: float = 1.0
    family: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.family != "gaussian":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not self.bandwidth_sq > 0:
            raise ValueError("bandwidth_sq must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def scaled(self, c: float) -> "KernelSpec":
        return KernelSpec(self.bandwidth_sq, self.family, self.scale * c)


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.size} vs {b.size}")
    d = a - b
    return float(spec.scale * np.exp(-np.dot(d, d) / spec.bandwidth_sq))


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d = aa[:, None] + bb[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    symmetric = B is None
    B = A if symmetric else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    G = spec.scale * np.exp(-sq_dists(A, B) / spec.bandwidth_sq)
    if symmetric:
        G = 0.5 * (G + G.T)
        np.fill_diagonal(G, spec.scale)
    return G


def paired_kernel(spec: KernelSpec, A, B) -> np.ndarray:
    """Row-wise ``k(A_i, B_i)``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise DimensionMismatch(f"shapes differ: {A.shape} vs {B.shape}")
    d = A - B
    return spec.scale * np.exp(-np.einsum("ij,ij->i", d, d) / spec.bandwidth_sq)
