"""Per-set geometry summaries and between-set distances."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from dffl.errors import UnsupportedPair
from dffl.geometry import entropy, knapsack
from dffl.geometry.sets import Ball, Box, EntropySimplex, FeasibleSet, KnapsackPolytope, VertexHull


@dataclass(frozen=True)
class SetGeometry:
    """Diameter, radius about ``centroid`` and (when known) strong-convexity radius."""

    diameter: float
    radius: float
    centroid: np.ndarray
    rho: Optional[float] = None


class ShapeDistance(NamedTuple):
    """Distance value and whether it equals the translation-minimized Hausdorff distance."""

    value: float
    exact: bool


def set_geometry(fset: FeasibleSet, subset_sum_resolution: float | None = None) -> SetGeometry:
    """Geometry summary for any supported set.

    For knapsack sets the diameter is the two-bin packing heuristic and the
    radius is measured from the cube corner ``offset`` (the origin of the
    untranslated set).
    """
    if isinstance(fset, Ball):
        return SetGeometry(2.0 * fset.radius, fset.radius, fset.center + fset.offset, fset.radius)
    if isinstance(fset, Box):
        span = fset.upper - fset.lower
        D = float(np.linalg.norm(span))
        return SetGeometry(D, D / 2, 0.5 * (fset.lower + fset.upper) + fset.offset)
    if isinstance(fset, KnapsackPolytope):
        if fset.is_box:
            D = math.sqrt(fset.dim)
            return SetGeometry(D, D / 2, np.full(fset.dim, 0.5) + fset.offset)
        D = knapsack.diameter_knapsack(fset.weights, fset.budget, subset_sum_resolution)
        R = knapsack.radius_knapsack(fset.weights, fset.budget)
        return SetGeometry(D, R, fset.offset.copy())
    if isinstance(fset, EntropySimplex):
        D = entropy.entropy_diameter(fset.d, fset.threshold)
        R = entropy.entropy_radius(fset.d, fset.threshold)
        return SetGeometry(D, R, np.full(fset.d, 1.0 / fset.d) + fset.offset)
    if isinstance(fset, VertexHull):
        V = fset.vertices
        gaps = V[:, None, :] - V[None, :, :]
        centroid = V.mean(axis=0)
        D = float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", gaps, gaps))))
        R = float(np.max(np.linalg.norm(V - centroid, axis=1)))
        return SetGeometry(D, R, centroid + fset.offset)
    raise TypeError(f"unsupported set type {type(fset).__name__}")


def _box_hausdorff(lo1, hi1, lo2, hi2) -> float:
    # farthest point of one box from the other is a corner; per coordinate the
    # worst excess is how far the first interval sticks out of the second
    out1 = np.maximum(np.maximum(lo2 - lo1, hi1 - hi2), 0.0)
    out2 = np.maximum(np.maximum(lo1 - lo2, hi2 - hi1), 0.0)
    return float(max(np.linalg.norm(out1), np.linalg.norm(out2)))


def hausdorff(setA: FeasibleSet, setB: FeasibleSet, method: str = "formula") -> float:
    """Hausdorff distance between two sets of the same family.

    Args:
        method: for knapsack pairs, ``"formula"`` uses the budget-gap rule and
            ``"exact"`` enumerates vertices (small ``d`` only). Ignored for
            other families, whose rules are exact.

    Raises:
        UnsupportedPair: different families, or knapsack sets with different weights.
    """
    if setA.dim != setB.dim:
        raise UnsupportedPair("sets live in different dimensions")
    shift = setB.offset - setA.offset
    if isinstance(setA, Ball) and isinstance(setB, Ball):
        centers = (setB.center + setB.offset) - (setA.center + setA.offset)
        return float(np.linalg.norm(centers)) + abs(setA.radius - setB.radius)
    if isinstance(setA, Box) and isinstance(setB, Box):
        return _box_hausdorff(
            setA.lower + setA.offset, setA.upper + setA.offset, setB.lower + setB.offset, setB.upper + setB.offset
        )
    if isinstance(setA, KnapsackPolytope) and isinstance(setB, KnapsackPolytope):
        if not np.array_equal(setA.weights, setB.weights):
            raise UnsupportedPair("knapsack distance needs shared item weights")
        if shift.any():
            raise UnsupportedPair("translated knapsack pairs have no closed-form Hausdorff rule")
        if method == "exact":
            return knapsack.hausdorff_knapsack_exact(setA.weights, setA.budget, setB.budget)
        return knapsack.hausdorff_knapsack(setA.weights, setA.budget, setB.budget)
    if isinstance(setA, EntropySimplex) and isinstance(setB, EntropySimplex):
        if shift.any():
            raise UnsupportedPair("translated entropy pairs have no closed-form Hausdorff rule")
        return entropy.entropy_set_geometry(setA.d, setA.threshold, setB.threshold).delta
    raise UnsupportedPair(f"no Hausdorff rule for {setA.kind} vs {setB.kind}")


def shape_distance(setA: FeasibleSet, setB: FeasibleSet) -> ShapeDistance:
    """Hausdorff distance minimized over translations of ``setB``.

    Offsets are discarded first, since translating a set never changes
    the SPO+ loss. Then:

    * balls: ``|rho_A - rho_B|``, exact;
    * boxes: Hausdorff distance of the centered boxes, exact;
    * entropy sets: both contain the uniform point, so the spike distance
      is reported as exact;
    * knapsack sets with shared weights: the budget-gap formula, flagged
      as an upper-bound approximation (translation is not optimized).
    """
    if setA.dim != setB.dim:
        raise UnsupportedPair("sets live in different dimensions")
    zero = np.zeros(setA.dim)
    if isinstance(setA, Ball) and isinstance(setB, Ball):
        return ShapeDistance(abs(setA.radius - setB.radius), True)
    if isinstance(setA, Box) and isinstance(setB, Box):
        ha = 0.5 * (setA.upper - setA.lower)
        hb = 0.5 * (setB.upper - setB.lower)
        return ShapeDistance(_box_hausdorff(-ha, ha, -hb, hb), True)
    if isinstance(setA, KnapsackPolytope) and isinstance(setB, KnapsackPolytope):
        if not np.array_equal(setA.weights, setB.weights):
            raise UnsupportedPair("knapsack shape distance needs shared item weights")
        if setA.budget == setB.budget or (setA.is_box and setB.is_box):
            return ShapeDistance(0.0, True)
        a = KnapsackPolytope(setA.weights, setA.budget, offset=zero)
        b = KnapsackPolytope(setB.weights, setB.budget, offset=zero)
        return ShapeDistance(hausdorff(a, b), False)
    if isinstance(setA, EntropySimplex) and isinstance(setB, EntropySimplex):
        return ShapeDistance(entropy.entropy_set_geometry(setA.d, setA.threshold, setB.threshold).delta, True)
    raise UnsupportedPair(f"no shape-distance rule for {setA.kind} vs {setB.kind}")
