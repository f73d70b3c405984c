import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dffl.bounds import spo_plus_quadratic_bound
from dffl.geometry import Ball, Box, EntropySimplex, KnapsackPolytope, VertexHull, set_geometry
from dffl.spo import spo_plus_loss, spo_plus_subgradient, spo_regret

TOY = VertexHull(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
UNIT = Ball(np.zeros(2), 1.0)


def random_set(rng, d):
    kind = rng.integers(4)
    if kind == 0:
        a = rng.uniform(0.3, 2, d)
        return KnapsackPolytope(a, rng.uniform(0.1, 1.1) * a.sum())
    if kind == 1:
        return EntropySimplex(d, -rng.uniform(0.05, 0.95) * math.log(d))
    if kind == 2:
        lo = rng.normal(size=d)
        return Box(lo, lo + rng.uniform(0.1, 2, d))
    return Ball(rng.normal(size=d), rng.uniform(0.2, 3))


def test_loss_examples():
    c = np.array([0.3, -1.2])
    assert spo_plus_loss(UNIT, c, c).spo_plus == pytest.approx(0.0, abs=1e-12)
    assert spo_plus_loss(UNIT, [0.0, 1.0], [1.0, 0.0]).spo_plus == pytest.approx(math.sqrt(5) + 1)
    assert spo_plus_loss(TOY, [0.0, 0.0], [1.0, 1.1]).spo_plus == pytest.approx(1.1)


def test_regret_examples():
    c = np.array([1.0, 1.1])
    assert spo_regret(TOY, c, c) == 0.0
    assert spo_regret(TOY, 3.5 * c, c) == 0.0
    assert spo_regret(TOY, [1.1, 1.0], c) == pytest.approx(0.1)


def test_subgradient_examples():
    assert np.all(spo_plus_subgradient(UNIT, [0.5, 0.2], [0.5, 0.2]) == 0.0)
    g = spo_plus_subgradient(UNIT, [1.0, 1.0], [1.0, 0.0])
    np.testing.assert_allclose(g, 2 * (-np.array([1.0, 0.0]) + np.array([1.0, 2.0]) / math.sqrt(5)))


def test_loss_eval_caches_and_reports_regret():
    ev = spo_plus_loss(TOY, [1.1, 1.0], [1.0, 1.1])
    assert ev.spo_regret == pytest.approx(0.1)
    np.testing.assert_allclose(ev.subgradient, spo_plus_subgradient(TOY, [1.1, 1.0], [1.0, 1.1]))


def test_ball_loss_matches_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(200):
        rho = rng.uniform(0.1, 3)
        c_hat, c = rng.normal(size=3), rng.normal(size=3)
        got = spo_plus_loss(Ball(np.zeros(3), rho), c_hat, c).spo_plus
        assert got == pytest.approx(oracles.ball_spo_plus(rho, c_hat, c), abs=1e-10)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dominance_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    fset = random_set(rng, d)
    c_hat, c = rng.normal(size=d) * 3, rng.normal(size=d) * 3
    ev = spo_plus_loss(fset, c_hat, c)
    assert ev.spo_regret >= -1e-9
    assert ev.spo_plus >= ev.spo_regret - 1e-7


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_translation_invariance_on_boxes(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    lo = rng.normal(size=d)
    box = Box(lo, lo + rng.uniform(0, 2, d))
    v = rng.normal(size=d) * 5
    c_hat, c = rng.normal(size=d), rng.normal(size=d)
    assert spo_plus_loss(box.translated(v), c_hat, c).spo_plus == pytest.approx(spo_plus_loss(box, c_hat, c).spo_plus, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prediction_lipschitz(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    a = rng.uniform(0.3, 2, d)
    fset = KnapsackPolytope(a, rng.uniform(0.1, 1.1) * a.sum())
    D = oracles.knapsack_diameter(a, fset.budget)
    c = rng.normal(size=d)
    h1, h2 = rng.normal(size=d), rng.normal(size=d)
    gap = abs(spo_plus_loss(fset, h1, c).spo_plus - spo_plus_loss(fset, h2, c).spo_plus)
    assert gap <= 2 * D * np.linalg.norm(h1 - h2) + 1e-7


def test_diameter_lipschitz_in_cost():
    rng = np.random.default_rng(3)
    for _ in range(300):
        fset = random_set(rng, 3)
        if isinstance(fset, KnapsackPolytope):
            D = oracles.knapsack_diameter(fset.weights, fset.budget)
        elif isinstance(fset, EntropySimplex):
            continue  # spike distance is not the full diameter of this set
        else:
            D = set_geometry(fset).diameter
        c_hat, c1, c2 = rng.normal(size=(3, 3))

        def part(c):
            ev = spo_plus_loss(fset, c_hat, c)
            return ev.spo_plus - 2 * c_hat @ ev.decision

        assert abs(part(c1) - part(c2)) <= D * np.linalg.norm(c1 - c2) + 1e-7


def test_subgradient_norm_bounded_by_twice_diameter():
    rng = np.random.default_rng(5)
    for _ in range(300):
        d = int(rng.integers(2, 5))
        a = rng.uniform(0.3, 2, d)
        fset = KnapsackPolytope(a, rng.uniform(0.1, 1.1) * a.sum())
        g = spo_plus_subgradient(fset, rng.normal(size=d), rng.normal(size=d))
        assert np.linalg.norm(g) <= 2 * oracles.knapsack_diameter(a, fset.budget) + 1e-9


def test_entropy_subgradient_matches_finite_differences():
    fset = EntropySimplex(3, -0.5)
    rng = np.random.default_rng(7)
    for _ in range(20):
        c_hat, c = rng.normal(size=3), rng.normal(size=3)
        fd = oracles.central_difference(lambda v: spo_plus_loss(fset, v, c).spo_plus, c_hat)
        np.testing.assert_allclose(spo_plus_subgradient(fset, c_hat, c), fd, atol=1e-4)


def test_knapsack_directional_derivative_where_unique():
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(200):
        d = 4
        a = rng.uniform(0.3, 2, d)
        fset = KnapsackPolytope(a, rng.uniform(0.2, 0.8) * a.sum())
        c_hat, c = rng.normal(size=d), rng.normal(size=d)
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        h = 1e-7
        w0 = spo_plus_subgradient(fset, c_hat, c)
        if not (np.array_equal(spo_plus_subgradient(fset, c_hat + h * u, c), w0)
                and np.array_equal(spo_plus_subgradient(fset, c_hat - h * u, c), w0)):
            continue
        f = lambda t: spo_plus_loss(fset, c_hat + t * u, c).spo_plus
        assert (f(h) - f(-h)) / (2 * h) == pytest.approx(w0 @ u, abs=1e-4)
        checked += 1
    assert checked > 100


def test_quadratic_bound_examples():
    c = np.array([1.0, 0.0])
    assert spo_plus_quadratic_bound(1.0, c, c) == 0.0
    bound = spo_plus_quadratic_bound(1.0, [0.0, 1.0], c)
    assert bound == pytest.approx(4.0)
    assert bound >= spo_plus_loss(UNIT, [0.0, 1.0], c).spo_plus
    assert spo_plus_quadratic_bound(2.0, 2 * np.array([0.3, 0.4]), [0, 0]) == pytest.approx(
        4 * spo_plus_quadratic_bound(2.0, [0.3, 0.4], [0, 0])
    )


def test_quadratic_bound_holds_when_cost_norm_exceeds_rho_squared():
    rng = np.random.default_rng(13)
    for _ in range(2000):
        rho = rng.uniform(0.1, 3)
        d = int(rng.integers(2, 5))
        c = rng.normal(size=d)
        c *= rng.uniform(rho**2, rho**2 + 5) / np.linalg.norm(c)
        c_hat = c + rng.normal(size=d) * rng.uniform(0, 3)
        loss = spo_plus_loss(Ball(np.zeros(d), rho), c_hat, c).spo_plus
        assert loss <= spo_plus_quadratic_bound(rho, c_hat, c) + 1e-7
        # the scale-aware form holds everywhere
        assert loss <= 2 * rho / np.linalg.norm(c) * np.sum((c_hat - c) ** 2) + 1e-7


def test_quadratic_bound_fails_for_small_costs():
    # |c| < rho^2: the fixed-constant bound is violated by an orthogonal error
    s, t = 0.1, 0.05
    c, c_hat = np.array([s, 0.0]), np.array([s, t])
    loss = spo_plus_loss(UNIT, c_hat, c).spo_plus
    assert loss > spo_plus_quadratic_bound(1.0, c_hat, c)
    assert loss <= 2 / s * t**2 + 1e-12
