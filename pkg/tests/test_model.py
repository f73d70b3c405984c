import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dffl.errors import NonFiniteInput
from dffl.geometry import EntropySimplex
from dffl.model import (
    AdamState,
    PredictorParams,
    adam_step,
    backward,
    clip_global_gradient,
    forward,
    init_params,
    load_params,
    mse,
    n_params,
    save_params,
    unflatten,
)
from dffl.spo import spo_plus_loss, spo_plus_subgradient


def test_init_shapes_and_determinism():
    p = init_params(8, 64, 50, seed=3)
    assert (p.W1.shape, p.b1.shape, p.W2.shape, p.b2.shape) == ((64, 8), (64,), (50, 64), (50,))
    assert np.array_equal(p.theta, init_params(8, 64, 50, seed=3).theta)
    assert not np.array_equal(p.theta, init_params(8, 64, 50, seed=4).theta)
    assert np.all(p.b1 == 0) and np.all(p.b2 == 0)
    assert p.theta.size == n_params(8, 64, 50)


def test_views_share_storage():
    p = init_params(2, 3, 2, seed=0)
    p.W2[0, 0] = 7.0
    assert p.theta[2 * 3 + 3] == 7.0


def test_zero_network_predicts_zero():
    p = PredictorParams(np.zeros(n_params(3, 4, 2)), 3, 4, 2)
    out, _ = forward(p, np.ones(3))
    assert np.all(out == 0)


def _linear_head(raw):
    # no hidden relu effect: identity first layer and a positive input
    o = raw.size
    p = PredictorParams(np.zeros(n_params(1, o, o)), 1, o, o)
    p.W1[:, 0] = 1.0
    p.W2[:] = np.diag(raw)
    return p


def test_clip_scales_long_outputs():
    raw = np.array([24.0, 32.0])  # norm 40
    out, _ = forward(_linear_head(raw), np.ones(1))
    assert np.linalg.norm(out) == pytest.approx(20.0, abs=1e-6)
    short = np.array([3.0, 4.0])
    out, _ = forward(_linear_head(short), np.ones(1))
    np.testing.assert_array_equal(out, short)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 100))
def test_output_bound(seed, scale):
    rng = np.random.default_rng(seed)
    p = init_params(4, 16, 6, seed=seed)
    p = p.with_theta(p.theta * scale)
    out, _ = forward(p, rng.normal(size=(20, 4)) * scale)
    assert np.all(np.linalg.norm(out, axis=1) <= p.tau + 1e-9)


def test_forward_rejects_bad_inputs():
    p = init_params(3, 4, 2, seed=0)
    with pytest.raises(NonFiniteInput):
        forward(p, [1.0, np.nan, 0.0])
    with pytest.raises(ValueError):
        forward(p, np.ones(4))


def _quadratic_loss(p, X, T):
    out, _ = forward(p, X)
    return 0.5 * float(np.sum((out - T) ** 2))


@pytest.mark.parametrize("scale", [0.5, 30.0])
def test_backward_matches_finite_differences(scale):
    # scale 30 drives the clip into its active region
    rng = np.random.default_rng(1)
    p = init_params(5, 7, 4, seed=2)
    p = p.with_theta(p.theta * scale / 10 + rng.normal(size=p.theta.size) * 0.1)
    X = rng.normal(size=(6, 5))
    T = rng.normal(size=(6, 4))
    out, cache = forward(p, X)
    grad = backward(p, cache, out - T)
    fd = oracles.central_difference(lambda th: _quadratic_loss(p.with_theta(th), X, T), p.theta)
    mask = np.abs(fd) > 1e-6
    rel = np.abs(grad - fd)[mask] / np.abs(fd)[mask]
    assert np.max(rel) <= 1e-4
    assert np.max(np.abs(grad - fd)[~mask], initial=0.0) <= 1e-8


def test_backward_zero_subgradient_and_shape_check():
    p = init_params(3, 4, 2, seed=0)
    out, cache = forward(p, np.ones((2, 3)))
    assert np.all(backward(p, cache, np.zeros_like(out)) == 0)
    with pytest.raises(ValueError):
        backward(p, cache, np.zeros((3, 2)))


def test_inactive_clip_equals_unclipped_network():
    p = init_params(3, 5, 2, seed=1)
    x = np.array([0.1, -0.2, 0.05])
    out, cache = forward(p, x)
    assert np.linalg.norm(out) < p.tau
    g = np.array([0.7, -1.3])
    grads = unflatten(p, backward(p, cache, g))
    hidden = np.maximum(p.W1 @ x + p.b1, 0)
    np.testing.assert_allclose(grads["W2"], np.outer(g, hidden))
    np.testing.assert_allclose(grads["b2"], g)


def test_entropy_spo_chain_rule():
    # network gradient of SPO+ on the smooth entropy set against finite differences
    fset = EntropySimplex(3, -0.5)
    rng = np.random.default_rng(4)
    p = init_params(2, 4, 3, seed=5)
    x, c = rng.normal(size=2), rng.normal(size=3)
    c_hat, cache = forward(p, x)
    grad = backward(p, cache, spo_plus_subgradient(fset, c_hat, c))
    fd = oracles.central_difference(lambda th: spo_plus_loss(fset, forward(p.with_theta(th), x)[0], c).spo_plus, p.theta)
    mask = np.abs(fd) > 1e-5
    assert np.max(np.abs(grad - fd)[mask] / np.abs(fd)[mask]) <= 1e-3


def test_clip_global_gradient():
    g = np.array([0.3, 0.4])
    assert clip_global_gradient(g) is g
    big = np.array([6.0, 8.0])
    out = clip_global_gradient(big)
    assert np.linalg.norm(out) == pytest.approx(1.0)
    assert out @ big / (np.linalg.norm(out) * np.linalg.norm(big)) == pytest.approx(1.0)


def test_adam_zero_gradient_keeps_params():
    p = init_params(2, 3, 2, seed=0)
    state = AdamState.fresh(p)
    q = p
    for _ in range(5):
        q, state = adam_step(q, state, np.zeros_like(p.theta))
    assert np.array_equal(q.theta, p.theta)
    assert state.step == 5


def test_adam_first_step_closed_form():
    p = init_params(2, 3, 2, seed=0)
    g = np.random.default_rng(0).normal(size=p.theta.size)
    q, _ = adam_step(p, AdamState.fresh(p), g)
    np.testing.assert_allclose(q.theta - p.theta, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_on_quadratic():
    # 200 steps on |w|^2 from (1, 1): monotone after warm-up and below 0.1 (lr 1e-2)
    w = np.array([1.0, 1.0])
    m = v = np.zeros(2)
    norms = []
    lr, b1, b2 = 1e-2, 0.9, 0.999
    for t in range(1, 201):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + 1e-8)
        norms.append(np.linalg.norm(w))

    p = PredictorParams(np.ones(n_params(1, 1, 1)), 1, 1, 1)
    state = AdamState.fresh(p, lr=lr)
    library = []
    for _ in range(200):
        p, state = adam_step(p, state, 2 * p.theta)
        library.append(np.linalg.norm(p.theta[:2]))
    np.testing.assert_allclose(library, norms, rtol=1e-12)
    assert np.all(np.diff(norms[10:100]) < 0)
    assert norms[-1] < 0.1


def test_mse():
    p = PredictorParams(np.zeros(n_params(2, 3, 2)), 2, 3, 2)
    X = np.ones((4, 2))
    C = np.arange(8.0).reshape(4, 2)
    assert mse(p, X, C) == pytest.approx(np.mean(np.sum(C**2, axis=1)))
    perm = [2, 0, 3, 1]
    assert mse(p, X[perm], C[perm]) == mse(p, X, C)
    assert mse(p, X, np.zeros((4, 2))) == 0.0


@pytest.mark.parametrize("suffix", [".json", ".bin"])
def test_checkpoint_round_trip(tmp_path, suffix):
    p = init_params(3, 5, 4, seed=9, tau=7.5)
    q = load_params(save_params(p, tmp_path / f"ckpt{suffix}"))
    assert np.array_equal(p.theta, q.theta)
    assert (q.input_dim, q.hidden_dim, q.output_dim, q.tau) == (3, 5, 4, 7.5)


def test_checkpoint_rejects_foreign_file(tmp_path):
    f = tmp_path / "x.bin"
    f.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_params(f)
