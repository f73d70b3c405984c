"""Geometry of fractional-knapsack polytopes ``{w in [0,1]^d : a @ w <= B}``.

Exact diameters and Hausdorff distances of these polytopes require maximizing
a convex function over the vertices, so the functions that scale to ``d = 50``
are heuristics or closed-form approximations:

* :func:`radius_knapsack` is exact (greedy max-norm vertex).
* :func:`diameter_knapsack` is a feasible lower bound built from a two-bin
  packing solved with a subset-sum table.
* :func:`hausdorff_knapsack` is the budget-gap formula ``|B2 - B1| / ||a||``.

The ``*_exact`` variants enumerate vertices and are meant for small ``d``.
"""
from __future__ import annotations

import functools
import itertools
import math
import threading

import numpy as np

from dffl.geometry.solvers import as_finite_vector

SUBSET_SUM_GRID = 1e4
EXACT_MAX_DIM = 14
_ROUND_SLACK = 1e-9


def _check(a, B):
    a = as_finite_vector(a, "a")
    if np.any(a <= 0):
        raise ValueError("knapsack weights must be positive")
    if not B > 0:
        raise ValueError("knapsack budget must be positive")
    return a, float(B)


def hausdorff_knapsack(a, B1: float, B2: float) -> float:
    """Budget-gap distance ``|B2 - B1| / ||a||`` between two knapsack sets with shared weights.

    This is exact whenever the projection of the far vertex onto the tighter
    budget hyperplane stays inside the unit box; otherwise it can under- or
    over-state the true Hausdorff distance (see :func:`hausdorff_knapsack_exact`).
    """
    a, B1 = _check(a, B1)
    _, B2 = _check(a, B2)
    return abs(B2 - B1) / float(np.linalg.norm(a))


def radius_knapsack(a, B: float) -> float:
    """Largest Euclidean norm of a point in the polytope.

    Fills coordinates in ascending weight order, the last one fractionally.
    The maximum of a convex function sits at a vertex and this greedy vertex
    maximizes the number of unit coordinates, so the value is exact.
    """
    a, B = _check(a, B)
    return float(np.linalg.norm(_greedy_fill(a, B, np.argsort(a, kind="stable"))))


def _greedy_fill(a, B, order):
    x = np.zeros_like(a)
    cap = B
    for i in order:
        if a[i] <= cap:
            x[i] = 1.0
            cap -= a[i]
        else:
            x[i] = cap / a[i]
            break
    return x


class SubsetSumTable:
    """Reachable subset sums of every ascending-weight prefix of ``a``.

    Weights are rounded up to a grid of spacing ``resolution`` (so every
    subset accepted by the table is feasible for the true weights); the table
    is independent of the budget and can be queried for many budgets.
    """

    def __init__(self, a, resolution: float):
        a = as_finite_vector(a, "a")
        if not resolution > 0:
            raise ValueError("resolution must be positive")
        self.a = a
        self.resolution = float(resolution)
        self.order = np.argsort(a, kind="stable")
        self.q = [int(math.ceil(a[i] / resolution - _ROUND_SLACK)) for i in self.order]
        # bit s of prefix[k] is set iff some subset of the k lightest items sums to s
        self.prefix = [1]
        for q in self.q:
            self.prefix.append(self.prefix[-1] | (self.prefix[-1] << q))
        self.totals = [0, *itertools.accumulate(self.q)]

    def _reachable_in(self, k: int, lo: int, hi: int) -> list[int]:
        if hi < lo or hi < 0:
            return []
        lo = max(lo, 0)
        bits = self.prefix[k] >> lo
        bits &= (1 << (hi - lo + 1)) - 1
        if not bits:
            return []
        return [lo + bits.bit_length() - 1, lo + (bits & -bits).bit_length() - 1]

    def _items_for_sum(self, k: int, s: int) -> list[int]:
        chosen = []
        for j in range(k, 0, -1):
            if (self.prefix[j - 1] >> s) & 1:
                continue
            chosen.append(int(self.order[j - 1]))
            s -= self.q[j - 1]
        assert s == 0
        return chosen

    def two_bin_split(self, budget: float):
        """Largest ``k`` such that the ``k`` lightest items split into two bins of capacity ``budget``.

        Returns:
            ``(k, candidates)`` where each candidate is the item list of the
            first bin; the remaining of the ``k`` lightest items go to the
            second bin. Candidates are the two extreme feasible splits.
        """
        bq = int(math.floor(budget / self.resolution + _ROUND_SLACK))
        for k in range(len(self.q), -1, -1):
            sums = self._reachable_in(k, self.totals[k] - bq, bq)
            if sums:
                return k, [self._items_for_sum(k, s) for s in dict.fromkeys(sums)]
        return 0, [[]]  # pragma: no cover - k = 0 always succeeds


_table_lock = threading.Lock()


@functools.lru_cache(maxsize=64)
def _cached_table(key: bytes, resolution: float) -> SubsetSumTable:
    return SubsetSumTable(np.frombuffer(key, dtype=float), resolution)


def subset_sum_table(a, resolution: float) -> SubsetSumTable:
    """Shared table for a weight vector; one build per ``(a, resolution)``."""
    a = np.ascontiguousarray(as_finite_vector(a, "a"))
    with _table_lock:
        return _cached_table(a.tobytes(), float(resolution))


def diameter_pair(a, B: float, subset_sum_resolution: float | None = None):
    """Two polytope points far apart, from the two-bin packing heuristic.

    The ``k`` lightest items that still fit into two bins of capacity ``B``
    are split between ``x`` and ``w`` (so they disagree on ``k``
    coordinates); each point's spare budget is then spent on a distinct
    unused coordinate, lightest first.

    Returns:
        ``(x, w)``; both satisfy the box and budget constraints.
    """
    a, B = _check(a, B)
    d = a.size
    if B >= a.sum():
        return np.ones(d), np.zeros(d)
    res = subset_sum_resolution if subset_sum_resolution is not None else B / SUBSET_SUM_GRID
    table = subset_sum_table(a, res)
    k, candidates = table.two_bin_split(B)
    lightest = [int(i) for i in table.order[:k]]
    unused = [int(i) for i in table.order[k:]]
    best = None
    for first in candidates:
        x = np.zeros(d)
        w = np.zeros(d)
        x[first] = 1.0
        w[sorted(set(lightest) - set(first))] = 1.0
        free = iter(unused)
        for point in (x, w):
            slack = B - a @ point
            i = next(free, None)
            if i is None or slack <= 0:
                continue
            point[i] = min(1.0, slack / a[i])
        dist = float(np.linalg.norm(x - w))
        if best is None or dist > best[0]:
            best = (dist, x, w)
    return best[1], best[2]


def diameter_knapsack(a, B: float, subset_sum_resolution: float | None = None) -> float:
    """Heuristic diameter; always a lower bound on the true diameter.

    Args:
        a: positive weights.
        B: budget.
        subset_sum_resolution: grid spacing of the subset-sum table. Defaults
            to ``B / 1e4``; pass a shared value to reuse one table across
            budgets.
    """
    x, w = diameter_pair(a, B, subset_sum_resolution)
    return float(np.linalg.norm(x - w))


def knapsack_vertices(a, B: float) -> np.ndarray:
    """All vertices of the polytope (binary points plus one fractional coordinate)."""
    a, B = _check(a, B)
    d = a.size
    if d > EXACT_MAX_DIM:
        raise ValueError(f"vertex enumeration is limited to d <= {EXACT_MAX_DIM}")
    verts = []
    for bits in itertools.product((0.0, 1.0), repeat=d):
        x = np.array(bits)
        load = a @ x
        if load <= B + 1e-12:
            verts.append(x)
            room = B - load
            for k in np.flatnonzero(x == 0):
                if a[k] > room > 0:
                    y = x.copy()
                    y[k] = room / a[k]
                    verts.append(y)
    return np.unique(np.array(verts), axis=0)


def project_knapsack(a, B: float, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the polytope."""
    a, B = _check(a, B)
    v = as_finite_vector(v, "v")
    x = np.clip(v, 0.0, 1.0)
    if a @ x <= B:
        return x
    # x(lam) = clip(v - lam a, 0, 1) has a @ x(lam) nonincreasing in lam
    lo, hi = 0.0, float(np.max((v + 1.0) / a)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if a @ np.clip(v - mid * a, 0.0, 1.0) > B:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return np.clip(v - hi * a, 0.0, 1.0)


def diameter_knapsack_exact(a, B: float) -> float:
    """Exact diameter by pairwise vertex enumeration (small ``d`` only)."""
    V = knapsack_vertices(a, B)
    diff = V[:, None, :] - V[None, :, :]
    return float(np.sqrt((diff**2).sum(-1).max()))


def hausdorff_knapsack_exact(a, B1: float, B2: float) -> float:
    """Exact Hausdorff distance between two knapsack sets with shared weights.

    The sets are nested, and the distance to the inner set is convex, so the
    maximum over the outer set is attained at one of its vertices.
    """
    a, B1 = _check(a, B1)
    _, B2 = _check(a, B2)
    lo, hi = sorted((B1, B2))
    if lo == hi:
        return 0.0
    return max(
        float(np.linalg.norm(v - project_knapsack(a, lo, v))) for v in knapsack_vertices(a, hi)
    )
