"""Feasible-set descriptors and the deterministic minimization oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dffl.geometry.solvers import (
    BISECTION_TOL,
    SolveResult,
    as_finite_vector,
    solve_entropy_portfolio,
    solve_knapsack,
)


def _zero_offset() -> np.ndarray:
    return np.zeros(0)


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """A nonempty compact convex set, optionally translated by ``offset``."""

    offset: np.ndarray = field(default_factory=_zero_offset, kw_only=True)

    kind = "abstract"

    def __post_init__(self):
        off = np.asarray(self.offset, dtype=float)
        if off.size == 0:
            off = np.zeros(self.dim)
        if off.shape != (self.dim,):
            raise ValueError(f"offset must have shape ({self.dim},), got {off.shape}")
        object.__setattr__(self, "offset", as_finite_vector(off, "offset"))

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def _solve_base(self, c: np.ndarray) -> SolveResult:
        raise NotImplementedError

    def translated(self, v) -> "FeasibleSet":
        """Return ``self + v``."""
        raise NotImplementedError

    def contains(self, w, tol: float = 1e-9) -> bool:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class KnapsackPolytope(FeasibleSet):
    """``{w in [0, 1]^d : a @ w <= budget}``."""

    weights: np.ndarray
    budget: float

    kind = "knapsack"

    def __post_init__(self):
        a = as_finite_vector(self.weights, "weights")
        if np.any(a <= 0):
            raise ValueError("knapsack weights must be positive")
        if not self.budget > 0:
            raise ValueError("knapsack budget must be positive")
        object.__setattr__(self, "weights", a)
        object.__setattr__(self, "budget", float(self.budget))
        super().__post_init__()

    @property
    def dim(self) -> int:
        return self.weights.size

    @property
    def is_box(self) -> bool:
        """True when the budget never binds and the set is the unit cube."""
        return self.budget >= self.weights.sum()

    def _solve_base(self, c):
        return solve_knapsack(self.weights, self.budget, c)

    def translated(self, v):
        return KnapsackPolytope(self.weights, self.budget, offset=self.offset + v)

    def contains(self, w, tol=1e-9):
        x = np.asarray(w, float) - self.offset
        return bool(np.all(x >= -tol) and np.all(x <= 1 + tol) and self.weights @ x <= self.budget + tol)


@dataclass(frozen=True, eq=False)
class EntropySimplex(FeasibleSet):
    """Probability simplex intersected with ``{sum w log w <= threshold}``."""

    d: int
    threshold: float
    tol: float = BISECTION_TOL

    kind = "entropy"

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("entropy simplex needs d >= 2")
        if not (-math.log(self.d) < self.threshold < 0):
            raise ValueError(f"threshold must lie strictly inside (-log d, 0), got {self.threshold}")
        super().__post_init__()

    @property
    def dim(self) -> int:
        return self.d

    def _solve_base(self, c):
        return solve_entropy_portfolio(self.d, self.threshold, c, self.tol)

    def translated(self, v):
        return EntropySimplex(self.d, self.threshold, self.tol, offset=self.offset + v)

    def contains(self, w, tol=1e-9):
        x = np.asarray(w, float) - self.offset
        if np.any(x < -tol) or abs(x.sum() - 1) > tol:
            return False
        xp = x[x > 0]
        return bool(xp @ np.log(xp) <= self.threshold + tol)


@dataclass(frozen=True, eq=False)
class Box(FeasibleSet):
    """Axis-aligned box ``{lower <= w <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    kind = "box"

    def __post_init__(self):
        lo = as_finite_vector(self.lower, "lower")
        hi = as_finite_vector(self.upper, "upper")
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box corners must match in shape and satisfy lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        super().__post_init__()

    @property
    def dim(self) -> int:
        return self.lower.size

    def _solve_base(self, c):
        w = np.where(c < 0, self.upper, self.lower)
        return SolveResult(w, float(c @ w))

    def translated(self, v):
        return Box(self.lower, self.upper, offset=self.offset + v)

    def contains(self, w, tol=1e-9):
        x = np.asarray(w, float) - self.offset
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True, eq=False)
class Ball(FeasibleSet):
    """Euclidean ball; strongly convex with radius exactly ``radius``."""

    center: np.ndarray
    radius: float

    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", as_finite_vector(self.center, "center"))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        super().__post_init__()

    @property
    def dim(self) -> int:
        return self.center.size

    def _solve_base(self, c):
        norm = float(np.linalg.norm(c))
        if norm == 0.0:
            return SolveResult(self.center.copy(), 0.0)
        w = self.center - self.radius * c / norm
        return SolveResult(w, float(c @ w))

    def translated(self, v):
        return Ball(self.center, self.radius, offset=self.offset + v)

    def contains(self, w, tol=1e-9):
        x = np.asarray(w, float) - self.offset
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)


@dataclass(frozen=True, eq=False)
class VertexHull(FeasibleSet):
    """Convex hull of finitely many points; the oracle scans the points and keeps the first minimizer."""

    vertices: np.ndarray

    kind = "hull"

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.shape[0] < 1 or not np.all(np.isfinite(V)):
            raise ValueError("hull needs at least one finite vertex")
        object.__setattr__(self, "vertices", V)
        super().__post_init__()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def _solve_base(self, c):
        values = self.vertices @ c
        k = int(np.argmin(values))
        return SolveResult(self.vertices[k].copy(), float(values[k]))

    def translated(self, v):
        return VertexHull(self.vertices, offset=self.offset + v)

    def contains(self, w, tol=1e-9):
        raise NotImplementedError("membership in a general hull needs an LP; not provided")


def min_oracle(fset: FeasibleSet, c) -> SolveResult:
    """Deterministic minimizer of ``c @ w`` over ``fset`` and its value."""
    c = as_finite_vector(c, "c")
    if c.shape != (fset.dim,):
        raise ValueError(f"cost has shape {c.shape}, set dimension is {fset.dim}")
    base = fset._solve_base(c)
    if not fset.offset.any():
        return base
    return SolveResult(base.w + fset.offset, base.value + float(c @ fset.offset))


def support_function(fset: FeasibleSet, u) -> float:
    """``max_{w in S} u @ w``."""
    u = as_finite_vector(u, "u")
    return -min_oracle(fset, -u).value


def support_point(fset: FeasibleSet, u) -> np.ndarray:
    """A maximizer of ``u @ w`` over ``fset`` (the deterministic oracle's pick)."""
    u = as_finite_vector(u, "u")
    return min_oracle(fset, -u).w
