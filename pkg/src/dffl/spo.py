"""SPO+ surrogate loss, SPO regret and the SPO+ subgradient in the prediction.

All functions use the linear-program convention ``min_{w in S} c @ w``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from dffl.geometry.sets import FeasibleSet, min_oracle
from dffl.geometry.solvers import SolveResult, as_finite_vector


@dataclass(eq=False)
class LossEval:
    """SPO+ loss at one ``(c_hat, c)`` pair with both oracle solves cached.

    ``decision`` is ``w*(c)`` and ``argmax_point`` is the maximizer of
    ``(c - 2 c_hat) @ w``, i.e. ``w*(2 c_hat - c)``. The SPO regret needs a
    third solve, ``w*(c_hat)``, and is computed on first access.
    """

    spo_plus: float
    argmax_point: np.ndarray
    decision: np.ndarray
    optimal_value: float
    fset: FeasibleSet = field(repr=False)
    c_hat: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)

    @cached_property
    def spo_regret(self) -> float:
        return spo_regret(self.fset, self.c_hat, self.c, optimum=self.optimal_value)

    @property
    def subgradient(self) -> np.ndarray:
        return 2.0 * (self.decision - self.argmax_point)


def spo_plus_loss(fset: FeasibleSet, c_hat, c, truth: Optional[SolveResult] = None) -> LossEval:
    """``xi_S(c - 2 c_hat) + 2 c_hat @ w*(c) - z*(c)``.

    Args:
        fset: feasible set.
        c_hat: predicted cost.
        c: realized cost.
        truth: precomputed ``min_oracle(fset, c)``; saves one solve when the
            same realized cost is evaluated repeatedly.
    """
    c_hat = as_finite_vector(c_hat, "c_hat")
    c = as_finite_vector(c, "c")
    if truth is None:
        truth = min_oracle(fset, c)
    u = c - 2.0 * c_hat
    inner = min_oracle(fset, -u)
    loss = -inner.value + 2.0 * float(c_hat @ truth.w) - truth.value
    return LossEval(loss, inner.w, truth.w, truth.value, fset, c_hat, c)


def spo_regret(fset: FeasibleSet, c_hat, c, optimum: Optional[float] = None) -> float:
    """Decision regret ``c @ w*(c_hat) - z*(c)`` under the deterministic oracle."""
    c_hat = as_finite_vector(c_hat, "c_hat")
    c = as_finite_vector(c, "c")
    if optimum is None:
        optimum = min_oracle(fset, c).value
    return float(c @ min_oracle(fset, c_hat).w) - optimum


def spo_plus_subgradient(fset: FeasibleSet, c_hat, c, truth: Optional[SolveResult] = None) -> np.ndarray:
    """``2 (w*(c) - w*(2 c_hat - c))``, a subgradient of SPO+ in ``c_hat``.

    At kinks the oracle's deterministic selection picks the subgradient.
    """
    c_hat = as_finite_vector(c_hat, "c_hat")
    c = as_finite_vector(c, "c")
    if truth is None:
        truth = min_oracle(fset, c)
    return 2.0 * (truth.w - min_oracle(fset, 2.0 * c_hat - c).w)
