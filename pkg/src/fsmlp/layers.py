"""Parameterised building blocks: Linear, Simplex-MLP, RevIN and the residual blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DimensionError,
    Node,
    abs_,
    activation,
    as_node,
    log1p_abs,
    matmul,
    square,
    sum_,
    swapaxes,
)

DEGENERATE_SUM = 1e-12

TRANSFORMS = {"abs": abs_, "log": log1p_abs, "square": square}
_TRANSFORM_ALIASES = {"logoffset": "log", "log_offset": "log", "log1p_abs": "log"}

_NP_TRANSFORMS = {
    "abs": np.abs,
    "log": lambda w: np.log1p(np.abs(w)),
    "square": np.square,
}


def canonical_transform(kind: str) -> str:
    key = kind.lower()
    key = _TRANSFORM_ALIASES.get(key, key)
    if key not in TRANSFORMS:
        raise ValueError(f"unknown simplex transform {kind!r}; expected abs, log or square")
    return key


def simplex_axis_index(axis: str | int) -> int:
    """Map ``input``/``output`` onto the weight-matrix axis that is summed to one."""
    if axis in ("input", 0):
        return 0
    if axis in ("output", 1):
        return 1
    raise ValueError(f"simplex axis must be 'input' or 'output', got {axis!r}")


def simplex_transform(weights, kind: str = "log"):
    """Entrywise non-negative transform of the raw weights (array or Node)."""
    kind = canonical_transform(kind)
    if isinstance(weights, Node):
        return TRANSFORMS[kind](weights)
    return _NP_TRANSFORMS[kind](np.asarray(weights, dtype=np.float64))


def simplex_normalize(t, axis: int = 0, return_degenerate: bool = False):
    """Scale each slice along ``axis`` to sum to one.

    Slices summing to less than 1e-12 become the uniform vector (their
    gradient is zero). With ``return_degenerate`` the number of such slices
    is returned alongside the result.
    """
    is_node = isinstance(t, Node)
    val = t.value if is_node else np.asarray(t, dtype=np.float64)
    if np.any(val < 0):
        raise ValueError("simplex_normalize expects a non-negative matrix")
    sums = val.sum(axis=axis, keepdims=True)
    degenerate = sums < DEGENERATE_SUM
    n_degenerate = int(degenerate.sum())

    if n_degenerate:
        fill = np.broadcast_to(degenerate, val.shape).astype(np.float64)
        if is_node:
            t = t * (1.0 - fill) + fill
        else:
            val = val * (1.0 - fill) + fill
    if is_node:
        out = t / sum_(t, axis)
    else:
        out = val / val.sum(axis=axis, keepdims=True)
    return (out, n_degenerate) if return_degenerate else out


def simplex_weights(weights, kind: str = "log", axis: int = 0):
    """Composition normalize(transform(W)); the effective simplex weights."""
    return simplex_normalize(simplex_transform(weights, kind), axis)


def in_simplex(weights: np.ndarray, axis: int = 0, tol: float = 1e-9) -> bool:
    w = np.asarray(weights)
    return bool(np.all(w >= 0) and np.all(np.abs(w.sum(axis=axis) - 1.0) <= tol))


def _uniform_init(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out))


class Layer:
    """Plain parameter container. Subclasses list parameters and child layers."""

    _params: tuple = ()
    _children: tuple = ()

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for name in self._params:
            out[prefix + name] = getattr(self, name)
        for name in self._children:
            child = getattr(self, name)
            if isinstance(child, (list, tuple)):
                for i, c in enumerate(child):
                    out.update(c.named_parameters(f"{prefix}{name}.{i}."))
            elif child is not None:
                out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def penalty(self):
        """Regularisation added to the training loss; zero for most layers."""
        return None


class Linear(Layer):
    """``x @ W + b`` along the last axis."""

    _params = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_in, self.n_out = n_in, n_out
        self.weight = Node(_uniform_init(rng, n_in, n_out), requires_grad=True, name="weight")
        self.bias = Node(np.zeros(n_out), requires_grad=True, name="bias")

    def effective_weight(self) -> Node:
        return self.weight

    def __call__(self, x) -> Node:
        x = as_node(x)
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"Linear expects trailing dim {self.n_in}, got shape {x.shape}")
        return matmul(x, self.effective_weight()) + self.bias


class SimplexLinear(Linear):
    """Linear layer whose weights are reparameterised onto the standard simplex.

    The effective weights ``normalize(transform(W))`` are recomputed on every
    call, so optimiser steps on the raw weights can never leave the simplex.
    With ``axis='input'`` each output unit is a convex combination of inputs.
    """

    _params = ("raw_weight", "bias")

    def __init__(self, n_in: int, n_out: int, transform: str = "log", axis: str = "input",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_in, self.n_out = n_in, n_out
        self.transform = canonical_transform(transform)
        self.axis = simplex_axis_index(axis)
        self.raw_weight = Node(_uniform_init(rng, n_in, n_out), requires_grad=True,
                               name="raw_weight")
        self.bias = Node(np.zeros(n_out), requires_grad=True, name="bias")
        self.n_degenerate = 0

    def effective_weight(self) -> Node:
        t = simplex_transform(self.raw_weight, self.transform)
        w, n_deg = simplex_normalize(t, self.axis, return_degenerate=True)
        self.n_degenerate = n_deg
        return w

    def effective_weights(self) -> np.ndarray:
        """Current simplex weights as a plain array."""
        return simplex_weights(self.raw_weight.value, self.transform, self.axis)


# --- RevIN -----------------------------------------------------------------

@dataclass
class RevInState:
    """Per-instance, per-channel statistics captured by :func:`revin_normalize`."""

    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-5


def revin_normalize(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, RevInState]:
    """Standardise each (instance, channel) row over the time axis.

    The scale is floored at ``eps`` so constant channels map to zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("revin_normalize needs at least 2 time steps")
    mu = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), eps)
    return (x - mu) / std, RevInState(mu, std, eps)


def revin_denormalize(y, state: RevInState):
    """Undo :func:`revin_normalize` on a prediction (array or Node)."""
    if isinstance(y, Node):
        return y * state.std + state.mean
    return np.asarray(y, dtype=np.float64) * state.std + state.mean


class RevIN(Layer):
    """Reversible instance normalisation with optional per-channel affine."""

    def __init__(self, n_channels: int, eps: float = 1e-5, affine: bool = False):
        self.n_channels = n_channels
        self.eps = eps
        self.affine = affine
        if affine:
            self.weight = Node(np.ones((n_channels, 1)), requires_grad=True, name="weight")
            self.bias = Node(np.zeros((n_channels, 1)), requires_grad=True, name="bias")
            self._params = ("weight", "bias")

    def normalize(self, x: np.ndarray) -> tuple[Node, RevInState]:
        xn, state = revin_normalize(x, self.eps)
        out = Node(xn)
        if self.affine:
            out = out * self.weight + self.bias
        return out, state

    def denormalize(self, y, state: RevInState) -> Node:
        y = as_node(y)
        if self.affine:
            # eps**2 keeps a collapsed affine weight invertible
            y = (y - self.bias) / (self.weight + self.eps * self.eps)
        return revin_denormalize(y, state)


# --- residual blocks -------------------------------------------------------

class SCWMBlock(Layer):
    """Channel mixing then temporal mixing, each as ``z + act(layer(z))``.

    Input and output are laid out (batch, channels, features). The channel
    mixer acts on the channel axis, the temporal layer on the feature axis.
    """

    _children = ("mixer", "temporal")

    def __init__(self, n_channels: int, width: int, mixer: Layer | None = None,
                 act: str = "gelu", transform: str = "log", axis: str = "input",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_channels = n_channels
        self.width = width
        self.mixer = mixer if mixer is not None else SimplexLinear(
            n_channels, n_channels, transform, axis, rng)
        self.temporal = Linear(width, width, rng)
        self.act_name = act
        self._act = activation(act)

    def __call__(self, z) -> Node:
        z = as_node(z)
        if z.ndim != 3 or z.shape[1] != self.n_channels or z.shape[2] != self.width:
            raise DimensionError(
                f"SCWM block expects (B, {self.n_channels}, {self.width}), got {z.shape}")
        zt = swapaxes(z, 1, 2)
        mixed = self._act(self.mixer(zt)) + zt
        z1 = swapaxes(mixed, 1, 2)
        return self._act(self.temporal(z1)) + z1

    def penalty(self):
        return self.mixer.penalty()


class FTMBlock(Layer):
    """Residual temporal linear step along the feature axis."""

    _children = ("linear",)

    def __init__(self, width: int, act: str = "gelu", rng: np.random.Generator | None = None):
        self.width = width
        self.linear = Linear(width, width, rng)
        self.act_name = act
        self._act = activation(act)

    def __call__(self, z) -> Node:
        z = as_node(z)
        if z.shape[-1] != self.width:
            raise DimensionError(f"FTM block expects trailing dim {self.width}, got {z.shape}")
        return self._act(self.linear(z)) + z
