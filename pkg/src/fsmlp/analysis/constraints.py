"""Alternative channel-mixer constraints for the constraint-comparison ablation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Node, abs_, matmul, mul, square, sum_
from ..layers import Layer, Linear, SimplexLinear, _uniform_init

KINDS = ("simplex", "none", "l1", "l2", "svd")
DEFAULT_LAMBDA = 1e-4


@dataclass(frozen=True)
class ConstraintKind:
    """Which constraint the channel mixer uses.

    ``lam`` applies to the L1/L2 penalties, ``rank`` to the SVD layer.
    """

    kind: str = "simplex"
    lam: float = DEFAULT_LAMBDA
    rank: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint {self.kind!r}; expected one of {KINDS}")
        if self.lam < 0:
            raise ValueError(f"penalty weight must be >= 0, got {self.lam}")
        if self.kind == "svd" and (self.rank is None or self.rank < 1):
            raise ValueError("svd constraint needs a rank >= 1")

    @classmethod
    def parse(cls, text: str, lam: float = DEFAULT_LAMBDA) -> "ConstraintKind":
        """Parse ``simplex``, ``none``, ``l1``, ``l2``, ``l1:1e-3`` or ``svd:8``."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("unconstrained", "linear"):
            name = "none"
        if name == "svd":
            if not arg:
                raise ValueError("svd constraint needs a rank, e.g. svd:8")
            return cls("svd", lam, int(arg))
        if name in ("l1", "l2") and arg:
            return cls(name, float(arg))
        if arg:
            raise ValueError(f"constraint {name!r} takes no argument")
        return cls(name, lam)

    def __str__(self):
        if self.kind == "svd":
            return f"svd:{self.rank}"
        return self.kind


class PenalizedLinear(Linear):
    """Unconstrained linear layer contributing ``lam * sum |w|`` or ``lam * sum w^2`` to the loss."""

    def __init__(self, n_in: int, n_out: int, norm: str, lam: float = DEFAULT_LAMBDA,
                 rng: np.random.Generator | None = None):
        super().__init__(n_in, n_out, rng)
        if norm not in ("l1", "l2"):
            raise ValueError(f"norm must be l1 or l2, got {norm!r}")
        self.norm = norm
        self.lam = lam

    def penalty(self) -> Node:
        mag = abs_(self.weight) if self.norm == "l1" else square(self.weight)
        return mul(sum_(mag, keepdims=False), self.lam)


class SvdLinear(Layer):
    """Linear layer stored as truncated SVD factors ``U_k diag(s_k) V_k^T``.

    The dense weight is rebuilt from the factors on every forward pass.
    """

    _params = ("u", "s", "vt", "bias")

    def __init__(self, n_in: int, n_out: int, rank: int, rng: np.random.Generator | None = None,
                 weight: np.ndarray | None = None):
        if not 1 <= rank <= min(n_in, n_out):
            raise ValueError(f"rank {rank} out of range [1, {min(n_in, n_out)}]")
        rng = rng if rng is not None else np.random.default_rng()
        if weight is None:
            weight = _uniform_init(rng, n_in, n_out)
        u, s, vt = truncated_svd(weight, rank)
        self.n_in, self.n_out, self.rank = n_in, n_out, rank
        self.u = Node(u, requires_grad=True, name="u")
        self.s = Node(s, requires_grad=True, name="s")
        self.vt = Node(vt, requires_grad=True, name="vt")
        self.bias = Node(np.zeros(n_out), requires_grad=True, name="bias")

    def effective_weight(self) -> Node:
        return matmul(self.u * self.s, self.vt)

    def __call__(self, x) -> Node:
        return Linear.__call__(self, x)


def truncated_svd(weight: np.ndarray, rank: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``rank`` singular triplets of ``weight``."""
    weight = np.asarray(weight, dtype=np.float64)
    if not 1 <= rank <= min(weight.shape):
        raise ValueError(f"rank {rank} out of range [1, {min(weight.shape)}]")
    u, s, vt = np.linalg.svd(weight, full_matrices=False)
    return u[:, :rank].copy(), s[:rank].copy(), vt[:rank].copy()


def svd_reconstruct(weight: np.ndarray, rank: int) -> np.ndarray:
    u, s, vt = truncated_svd(weight, rank)
    return (u * s) @ vt


def l1_penalty(weights, lam: float) -> float:
    return float(lam * np.sum(np.abs(weights)))


def l2_penalty(weights, lam: float) -> float:
    return float(lam * np.sum(np.square(weights)))


def apply_constraint(n_in: int, n_out: int, kind: ConstraintKind | str,
                     rng: np.random.Generator | None = None, transform: str = "log",
                     axis: str = "input") -> Layer:
    """Build a channel-mixing layer under the requested constraint."""
    if isinstance(kind, str):
        kind = ConstraintKind.parse(kind)
    if kind.kind == "simplex":
        return SimplexLinear(n_in, n_out, transform, axis, rng)
    if kind.kind == "none":
        return Linear(n_in, n_out, rng)
    if kind.kind in ("l1", "l2"):
        return PenalizedLinear(n_in, n_out, kind.kind, kind.lam, rng)
    return SvdLinear(n_in, n_out, kind.rank, rng)
