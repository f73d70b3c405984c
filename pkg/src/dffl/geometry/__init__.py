"""Feasible sets, downstream oracles and set geometry."""
from dffl.geometry.distance import SetGeometry, ShapeDistance, hausdorff, set_geometry, shape_distance
from dffl.geometry.entropy import (
    EntropyGeometry,
    entropy_diameter,
    entropy_radius,
    entropy_set_geometry,
    entropy_spike,
    spike_vector,
)
from dffl.geometry.knapsack import (
    SubsetSumTable,
    diameter_knapsack,
    diameter_knapsack_exact,
    diameter_pair,
    hausdorff_knapsack,
    hausdorff_knapsack_exact,
    knapsack_vertices,
    project_knapsack,
    radius_knapsack,
    subset_sum_table,
)
from dffl.geometry.sets import (
    Ball,
    Box,
    EntropySimplex,
    FeasibleSet,
    KnapsackPolytope,
    VertexHull,
    min_oracle,
    support_function,
    support_point,
)
from dffl.geometry.solvers import SolveResult, solve_entropy_portfolio, solve_knapsack

__all__ = [name for name in dir() if not name.startswith("_") and name not in ("distance", "entropy", "knapsack", "sets", "solvers")]
