"""Shallow ReLU cost predictor with an l2 output clip, manual backprop and Adam.

Architecture: ``x -> W1 x + b1 -> relu -> W2 h + b2 -> clip_tau -> c_hat`` where
``clip_tau(u) = u * min(1, tau / (||u|| + eps))``.

Parameters live in one flat float64 vector ordered ``W1, b1, W2, b2`` (row
major); the weight matrices are views into it. Gradients use the same flat
layout, which keeps Adam, clipping and federated averaging one-liners.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from dffl.errors import NonFiniteInput

DEFAULT_TAU = 20.0
DEFAULT_CLIP_EPS = 1e-8
_MAGIC = b"DFFLP001"


@dataclass(eq=False)
class PredictorParams:
    theta: np.ndarray
    input_dim: int
    hidden_dim: int
    output_dim: int
    tau: float = DEFAULT_TAU
    clip_eps: float = DEFAULT_CLIP_EPS

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=float)
        if self.theta.shape != (n_params(self.input_dim, self.hidden_dim, self.output_dim),):
            raise ValueError("flat parameter vector does not match the layer sizes")
        if not self.tau > 0 or not self.clip_eps > 0:
            raise ValueError("tau and clip_eps must be positive")

    def _slices(self):
        p, h, o = self.input_dim, self.hidden_dim, self.output_dim
        ends = np.cumsum([h * p, h, o * h, o])
        return ends

    @property
    def W1(self) -> np.ndarray:
        e = self._slices()
        return self.theta[: e[0]].reshape(self.hidden_dim, self.input_dim)

    @property
    def b1(self) -> np.ndarray:
        e = self._slices()
        return self.theta[e[0] : e[1]]

    @property
    def W2(self) -> np.ndarray:
        e = self._slices()
        return self.theta[e[1] : e[2]].reshape(self.output_dim, self.hidden_dim)

    @property
    def b2(self) -> np.ndarray:
        e = self._slices()
        return self.theta[e[2] : e[3]]

    def with_theta(self, theta: np.ndarray) -> "PredictorParams":
        return replace(self, theta=theta)

    def copy(self) -> "PredictorParams":
        return self.with_theta(self.theta.copy())


def n_params(input_dim: int, hidden_dim: int, output_dim: int) -> int:
    return hidden_dim * input_dim + hidden_dim + output_dim * hidden_dim + output_dim


def unflatten(params: PredictorParams, grad: np.ndarray) -> dict[str, np.ndarray]:
    """Split a flat gradient into named arrays shaped like the parameters."""
    view = params.with_theta(grad)
    return {"W1": view.W1, "b1": view.b1, "W2": view.W2, "b2": view.b2}


def init_params(
    input_dim: int,
    hidden_dim: int,
    output_dim: int,
    seed: int,
    tau: float = DEFAULT_TAU,
    clip_eps: float = DEFAULT_CLIP_EPS,
) -> PredictorParams:
    """Glorot-uniform weights, zero biases, seeded."""
    if min(input_dim, hidden_dim, output_dim) < 1:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (input_dim + hidden_dim))
    lim2 = math.sqrt(6.0 / (hidden_dim + output_dim))
    W1 = rng.uniform(-lim1, lim1, size=(hidden_dim, input_dim))
    W2 = rng.uniform(-lim2, lim2, size=(output_dim, hidden_dim))
    theta = np.concatenate([W1.ravel(), np.zeros(hidden_dim), W2.ravel(), np.zeros(output_dim)])
    return PredictorParams(theta, input_dim, hidden_dim, output_dim, tau, clip_eps)


class ForwardCache(NamedTuple):
    x: np.ndarray  # (batch, input)
    pre_hidden: np.ndarray  # (batch, hidden)
    hidden: np.ndarray
    raw: np.ndarray  # (batch, output), before the clip
    norm: np.ndarray  # (batch,)
    scale: np.ndarray  # (batch,)
    single: bool


def forward(params: PredictorParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Predict costs for one sample ``(input_dim,)`` or a batch ``(n, input_dim)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[-1] != params.input_dim:
        raise ValueError(f"expected {params.input_dim} features, got {X.shape[-1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("features contain non-finite entries")
    pre = X @ params.W1.T + params.b1
    h = np.maximum(pre, 0.0)
    raw = h @ params.W2.T + params.b2
    norm = np.sqrt(np.einsum("ij,ij->i", raw, raw))
    scale = np.minimum(1.0, params.tau / (norm + params.clip_eps))
    out = raw * scale[:, None]
    cache = ForwardCache(X, pre, h, raw, norm, scale, single)
    return (out[0] if single else out), cache


def backward(params: PredictorParams, cache: ForwardCache, output_subgradient) -> np.ndarray:
    """Vector-Jacobian product of the network with ``output_subgradient``.

    Returns the flat gradient of ``sum_b g_b @ c_hat_b`` over the batch.
    """
    G = np.asarray(output_subgradient, dtype=float)
    if cache.single:
        G = G[None, :]
    if G.shape != cache.raw.shape:
        raise ValueError(f"output subgradient has shape {G.shape}, expected {cache.raw.shape}")
    # clip layer: y = tau u / (||u|| + eps) where active, identity elsewhere
    active = cache.scale < 1.0
    G_raw = G * cache.scale[:, None]
    if np.any(active):
        u = cache.raw[active]
        n = cache.norm[active]
        coeff = params.tau * np.einsum("ij,ij->i", u, G[active]) / ((n + params.clip_eps) ** 2 * n)
        G_raw[active] -= coeff[:, None] * u
    gW2 = G_raw.T @ cache.hidden
    gb2 = G_raw.sum(axis=0)
    G_h = G_raw @ params.W2
    G_pre = G_h * (cache.pre_hidden > 0)
    gW1 = G_pre.T @ cache.x
    gb1 = G_pre.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def clip_global_gradient(grad: np.ndarray, c_max: float = 1.0) -> np.ndarray:
    """Rescale ``grad`` to norm ``c_max`` if its l2 norm exceeds it."""
    norm = float(np.sqrt(grad @ grad))
    if norm > c_max:
        return grad * (c_max / norm)
    return grad


@dataclass(eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: PredictorParams, lr: float = 1e-3, **kwargs) -> "AdamState":
        size = params.theta.size
        return cls(np.zeros(size), np.zeros(size), 0, lr, **kwargs)


def adam_step(params: PredictorParams, state: AdamState, grad: np.ndarray):
    """One bias-corrected Adam update; returns ``(params', state')``."""
    if grad.shape != params.theta.shape:
        raise ValueError("gradient does not match parameter layout")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    theta = params.theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_theta(theta), replace(state, m=m, v=v, step=t)


def mse(params: PredictorParams, X, C) -> float:
    """Mean over samples of ``||forward(x) - c||^2``."""
    pred, _ = forward(params, np.atleast_2d(X))
    diff = pred - np.atleast_2d(C)
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


# -- checkpoints --------------------------------------------------------------


def params_to_dict(params: PredictorParams) -> dict:
    return {
        "layout": ["W1", "b1", "W2", "b2"],
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "output_dim": params.output_dim,
        "tau": params.tau,
        "clip_eps": params.clip_eps,
        "theta": params.theta.tolist(),
    }


def params_from_dict(data: dict) -> PredictorParams:
    return PredictorParams(
        np.asarray(data["theta"], dtype=float),
        int(data["input_dim"]),
        int(data["hidden_dim"]),
        int(data["output_dim"]),
        float(data.get("tau", DEFAULT_TAU)),
        float(data.get("clip_eps", DEFAULT_CLIP_EPS)),
    )


def save_params(params: PredictorParams, path) -> Path:
    """Write a checkpoint; ``.json`` gives the JSON layout, anything else the binary one.

    Binary layout: 8-byte magic, three little-endian uint32 dims
    (input, hidden, output), two float64 (tau, clip_eps), then the float64
    parameter vector in ``W1, b1, W2, b2`` order.
    """
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(params_to_dict(params)))
        return path
    header = _MAGIC + struct.pack(
        "<3I2d", params.input_dim, params.hidden_dim, params.output_dim, params.tau, params.clip_eps
    )
    path.write_bytes(header + params.theta.astype("<f8").tobytes())
    return path


def load_params(path) -> PredictorParams:
    path = Path(path)
    if path.suffix == ".json":
        return params_from_dict(json.loads(path.read_text()))
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    p, h, o, tau, eps = struct.unpack_from("<3I2d", raw, 8)
    theta = np.frombuffer(raw, dtype="<f8", offset=8 + struct.calcsize("<3I2d")).astype(float)
    return PredictorParams(theta, p, h, o, tau, eps)
