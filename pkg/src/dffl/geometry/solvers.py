"""Closed-form and bisection oracles for the two downstream LP families.

Both solvers minimize ``c @ w``. The fractional knapsack solver is exact;
the entropy-constrained portfolio solver is exact up to the bisection
tolerance on the entropy constraint.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from dffl.errors import BisectionNoConverge, NonFiniteInput

BISECTION_TOL = 1e-10
MAX_BISECTION_ITERS = 200
TEMPERATURE_BOUNDS = (1e-8, 1e8)


class SolveResult(NamedTuple):
    """Minimizer ``w`` and optimal value ``value = c @ w``."""

    w: np.ndarray
    value: float


def as_finite_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains non-finite entries")
    return arr


def solve_knapsack(a, B: float, c) -> SolveResult:
    """Minimize ``c @ w`` over ``{w in [0, 1]^d : a @ w <= B}``.

    Items with negative cost are taken greedily in ascending order of
    ``c_i / a_i``; the first item that does not fit is taken fractionally and
    the scan stops. Ties keep ascending coordinate order, so the selector is
    deterministic.

    Args:
        a: positive item weights, shape ``(d,)``.
        B: positive budget.
        c: cost vector, shape ``(d,)``.

    Returns:
        SolveResult with at most one fractional coordinate.
    """
    a = as_finite_vector(a, "a")
    c = as_finite_vector(c, "c")
    if a.shape != c.shape:
        raise ValueError(f"a and c differ in shape: {a.shape} vs {c.shape}")
    if np.any(a <= 0) or not B > 0:
        raise ValueError("knapsack needs positive weights and a positive budget")
    w = np.zeros_like(c)
    neg = np.flatnonzero(c < 0)
    order = neg[np.argsort(c[neg] / a[neg], kind="stable")]
    cap = float(B)
    for i in order:
        if a[i] <= cap:
            w[i] = 1.0
            cap -= a[i]
        else:
            w[i] = cap / a[i]
            break
    return SolveResult(w, float(c @ w))


def _softmax_entropy(scaled: np.ndarray, log_temp: float):
    """Return (weights, sum w log w, d/dlogb of sum w log w) at ``b = exp(log_temp)``."""
    beta = math.exp(-log_temp)
    s = -beta * scaled
    s -= s.max()
    e = np.exp(s)
    Z = e.sum()
    w = e / Z
    logw = s - math.log(Z)
    negent = float(w @ logw)
    mean = float(w @ scaled)
    var = float(w @ (scaled - mean) ** 2)
    return w, negent, -beta * beta * var


def solve_entropy_portfolio(d: int, r: float, c, tol: float = BISECTION_TOL) -> SolveResult:
    """Minimize ``c @ w`` over the simplex subject to ``sum w_i log w_i <= r``.

    The optimum has the softmax form ``w_i ∝ exp(-c_i / b)``; the temperature
    ``b`` is found by bracketing bisection in ``log b`` (a Newton step is taken
    whenever it lands strictly inside the current bracket). Costs are shifted
    and divided by their spread first, which leaves the minimizer unchanged and
    makes the temperature bracket scale free.

    Args:
        d: dimension.
        r: entropy threshold, ``-log d < r < 0``.
        c: cost vector of length ``d``.
        tol: absolute tolerance on the entropy constraint.

    Raises:
        BisectionNoConverge: if the residual is still above ``tol`` after
            the iteration cap.
    """
    c = as_finite_vector(c, "c")
    if c.shape != (d,):
        raise ValueError(f"expected cost of length {d}, got {c.shape}")
    if not (-math.log(d) <= r < 0):
        raise ValueError(f"entropy threshold must lie in [-log d, 0), got {r}")
    spread = float(c.max() - c.min())
    if spread == 0.0 or r == -math.log(d):
        # at r = -log d the uniform vector is the only feasible point
        w = np.full(d, 1.0 / d)
        return SolveResult(w, float(c @ w))

    scaled = (c - c.min()) / spread
    n_min = int(np.count_nonzero(scaled == 0.0))
    if r >= -math.log(n_min):
        # uniform over the minimizers is feasible and attains min(c)
        w = np.where(scaled == 0.0, 1.0 / n_min, 0.0)
        return SolveResult(w, float(c @ w))

    lo, hi = (math.log(t) for t in TEMPERATURE_BOUNDS)
    # sum w log w decreases in the temperature
    _, h_lo, _ = _softmax_entropy(scaled, lo)
    _, h_hi, _ = _softmax_entropy(scaled, hi)
    if not (h_hi <= r <= h_lo):
        raise BisectionNoConverge(
            "entropy threshold not bracketed by the temperature interval",
            min(abs(h_lo - r), abs(h_hi - r)),
        )
    t = 0.5 * (lo + hi)
    residual = math.inf
    for _ in range(MAX_BISECTION_ITERS):
        w, h, dh = _softmax_entropy(scaled, t)
        residual = h - r
        if abs(residual) <= tol:
            return SolveResult(w, float(c @ w))
        if residual > 0:
            lo = t
        else:
            hi = t
        t_newton = t - residual / dh if dh < 0 else math.nan
        t = t_newton if lo < t_newton < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, abs(t)):
            break
    raise BisectionNoConverge("entropy portfolio bisection cap reached", abs(residual))
