"""Generalisation analysis: Rademacher estimators and alternative constraints.

The training-based comparison lives in :mod:`fsmlp.analysis.experiments`,
which is not imported here to keep the model free of import cycles.
"""
from .constraints import (ConstraintKind, PenalizedLinear, SvdLinear, apply_constraint,
                          l1_penalty, l2_penalty, svd_reconstruct, truncated_svd)
from .rademacher import RademacherEstimate, class_supremum, rademacher_estimate, simplex_bound

__all__ = [
    "ConstraintKind",
    "PenalizedLinear",
    "SvdLinear",
    "apply_constraint",
    "l1_penalty",
    "l2_penalty",
    "svd_reconstruct",
    "truncated_svd",
    "RademacherEstimate",
    "class_supremum",
    "rademacher_estimate",
    "simplex_bound",
]
