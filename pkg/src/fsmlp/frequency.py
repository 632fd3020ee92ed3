"""Orthonormal DCT-II / DCT-III along the last (time) axis, as dense matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .autodiff import Node, fixed_linear_map


def dct_matrix(length: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C[k, t] = c_k cos(pi (2t + 1) k / 2L)``."""
    if length < 1:
        raise ValueError(f"DCT length must be positive, got {length}")
    k = np.arange(length)[:, None]
    t = np.arange(length)[None, :]
    mat = np.cos(np.pi * (2 * t + 1) * k / (2 * length))
    mat *= np.sqrt(2.0 / length)
    mat[0] *= np.sqrt(0.5)
    return mat


@dataclass(frozen=True, eq=False)
class DctPlan:
    """Precomputed transform of a fixed length; ``inverse_matrix`` is the transpose."""

    length: int
    matrix: np.ndarray = field(repr=False)
    inverse_matrix: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, length: int) -> "DctPlan":
        return _cached_plan(int(length))

    def check_length(self, n: int):
        if n != self.length:
            raise ValueError(f"DCT plan has length {self.length}, input has length {n}")


@lru_cache(maxsize=32)
def _cached_plan(length: int) -> DctPlan:
    mat = dct_matrix(length)
    err = np.max(np.abs(mat @ mat.T - np.eye(length)))
    if err > 1e-12:
        raise ArithmeticError(f"DCT matrix of length {length} not orthonormal (err {err:.2e})")
    mat.setflags(write=False)
    inv = mat.T.copy()
    inv.setflags(write=False)
    return DctPlan(length, mat, inv)


def dct_forward(x, plan: DctPlan):
    """DCT-II along the last axis. Accepts arrays or graph nodes."""
    n = x.shape[-1]
    plan.check_length(n)
    if isinstance(x, Node):
        return fixed_linear_map(x, plan.matrix)
    return np.asarray(x, dtype=np.float64) @ plan.matrix.T


def dct_inverse(coeffs, plan: DctPlan):
    """DCT-III (inverse of :func:`dct_forward`) along the last axis."""
    n = coeffs.shape[-1]
    plan.check_length(n)
    if isinstance(coeffs, Node):
        return fixed_linear_map(coeffs, plan.inverse_matrix)
    return np.asarray(coeffs, dtype=np.float64) @ plan.inverse_matrix.T
