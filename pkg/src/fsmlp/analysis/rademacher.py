"""Empirical Rademacher complexity of linear classes.

For ``H = {x -> w.x : w in W}`` on a sample ``x_1..x_m``,

    R_S(H) = E_sigma[ sup_{w in W} w . v ] / m,   v = sum_i sigma_i x_i.

The inner supremum has a closed form for both classes handled here:
``max_j v_j`` over the simplex (a linear functional peaks at a vertex) and
``B ||v||_2`` over the L2 ball of radius ``B``. Only the outer expectation
is sampled, or enumerated exactly when ``2**m`` is small.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

CLASSES = ("simplex", "l2")
_CHUNK = 1000


@dataclass
class RademacherEstimate:
    n_samples: int
    n_trials: int
    kind: str
    radius: float | None
    estimate: float
    stderr: float
    bound: float
    exact: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def within_bound(self, n_stderr: float = 3.0) -> bool:
        return self.estimate <= self.bound + n_stderr * self.stderr


def simplex_bound(data: np.ndarray) -> float:
    """``sqrt(sum_i ||x_i||^2) / m``; multiply by ``B`` for the L2 ball."""
    data = np.asarray(data, dtype=np.float64)
    return float(np.sqrt(np.sum(data * data)) / data.shape[0])


def class_supremum(v: np.ndarray, kind: str, radius: float = 1.0) -> np.ndarray:
    """``sup_w w . v`` for each row of ``v``."""
    if kind == "simplex":
        return v.max(axis=-1)
    if kind == "l2":
        return radius * np.linalg.norm(v, axis=-1)
    raise ValueError(f"unknown hypothesis class {kind!r}; expected one of {CLASSES}")


def _all_signs(m: int) -> np.ndarray:
    return np.array(list(itertools.product((-1.0, 1.0), repeat=m)))


def rademacher_estimate(data, kind: str = "simplex", n_trials: int = 10_000, seed: int = 0,
                        radius: float = 1.0, exact: bool | str = "auto") -> RademacherEstimate:
    """Estimate the empirical Rademacher complexity of a linear class on ``data`` (m x d).

    ``exact='auto'`` enumerates all ``2**m`` sign vectors when that is no more
    than ``n_trials``; otherwise sign vectors are drawn in fixed-size chunks,
    each from its own child seed, so the result does not depend on how the
    chunks are scheduled.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    m = data.shape[0]
    if m < 1:
        raise ValueError("need at least one data point")
    if n_trials < 100:
        raise ValueError(f"n_trials must be >= 100, got {n_trials}")
    if kind not in CLASSES:
        raise ValueError(f"unknown hypothesis class {kind!r}; expected one of {CLASSES}")
    if exact == "auto":
        exact = m <= 20 and 2 ** m <= n_trials

    if exact:
        signs = _all_signs(m)
        sups = class_supremum(signs @ data, kind, radius)
        est, stderr, trials = sups.mean() / m, 0.0, len(sups)
    else:
        children = np.random.SeedSequence(seed).spawn(-(-n_trials // _CHUNK))
        sups = []
        remaining = n_trials
        for child in children:
            size = min(_CHUNK, remaining)
            rng = np.random.default_rng(child)
            signs = rng.integers(0, 2, size=(size, m)) * 2.0 - 1.0
            sups.append(class_supremum(signs @ data, kind, radius))
            remaining -= size
        sups = np.concatenate(sups)
        est = sups.mean() / m
        stderr = sups.std(ddof=1) / np.sqrt(len(sups)) / m
        trials = n_trials

    bound = simplex_bound(data) * (1.0 if kind == "simplex" else radius)
    return RademacherEstimate(
        n_samples=m, n_trials=trials, kind=kind,
        radius=None if kind == "simplex" else float(radius),
        estimate=float(est), stderr=float(stderr), bound=bound, exact=bool(exact),
    )
