"""Extreme-point geometry of the entropy-constrained simplex.

Boundary points in coordinate directions are "spikes": one coordinate equal
to ``p`` and the remaining ``d - 1`` equal to ``q = (1 - p) / (d - 1)``.
Diameters, radii and nested-set distances follow from one spike per set by
symmetry.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from dffl.errors import BisectionNoConverge
from dffl.geometry.solvers import BISECTION_TOL, MAX_BISECTION_ITERS


class EntropyGeometry(NamedTuple):
    D1: float
    D2: float
    delta: float


def _check_threshold(d: int, r: float):
    if d < 2:
        raise ValueError("entropy simplex needs d >= 2")
    if not (-math.log(d) < r < 0):
        raise ValueError(f"threshold must lie strictly inside (-log d, 0), got {r}")


def spike_negentropy(p: float, d: int) -> float:
    """``sum w log w`` of the spike with large coordinate ``p``."""
    q = (1.0 - p) / (d - 1)
    out = p * math.log(p) if p > 0 else 0.0
    if q > 0:
        out += (1.0 - p) * math.log(q)
    return out


def entropy_spike(d: int, r: float, tol: float = BISECTION_TOL) -> tuple[float, float]:
    """Spike coordinates ``(p, q)`` on the boundary ``sum w log w = r``.

    ``spike_negentropy`` increases from ``-log d`` at ``p = 1/d`` to ``0`` at
    ``p = 1``, so plain bisection over ``p`` applies.
    """
    _check_threshold(d, r)
    lo, hi = 1.0 / d, 1.0
    p = 0.5 * (lo + hi)
    residual = math.inf
    for _ in range(MAX_BISECTION_ITERS):
        p = 0.5 * (lo + hi)
        residual = spike_negentropy(p, d) - r
        if abs(residual) <= tol:
            break
        if residual > 0:
            hi = p
        else:
            lo = p
        if hi - lo <= 1e-17:
            break
    if abs(residual) > tol:
        raise BisectionNoConverge("spike bisection did not reach tolerance", abs(residual))
    return p, (1.0 - p) / (d - 1)


def spike_vector(d: int, r: float, axis: int = 0) -> np.ndarray:
    p, q = entropy_spike(d, r)
    v = np.full(d, q)
    v[axis] = p
    return v


def entropy_diameter(d: int, r: float) -> float:
    """Distance between two spikes on different axes, ``sqrt(2) (p - q)``."""
    p, q = entropy_spike(d, r)
    return math.sqrt(2.0) * (p - q)


def entropy_radius(d: int, r: float) -> float:
    """Distance from the uniform portfolio to a spike."""
    return float(np.linalg.norm(spike_vector(d, r) - 1.0 / d))


def entropy_set_geometry(d: int, r1: float, r2: float) -> EntropyGeometry:
    """Diameters of both sets and the same-axis spike distance between them.

    The distance compares the two sets' spikes on a common axis. In ``d = 2``
    this is the exact Hausdorff distance; for larger ``d`` it is an
    approximation (other boundary points can lie farther from the inner set).
    """
    s1 = spike_vector(d, r1)
    s2 = spike_vector(d, r2)
    D1 = math.sqrt(2.0) * (s1[0] - s1[1])
    D2 = math.sqrt(2.0) * (s2[0] - s2[1])
    delta = 0.0 if r1 == r2 else float(np.linalg.norm(s1 - s2))
    return EntropyGeometry(D1, D2, delta)
