"""Heterogeneity bounds on the SPO+ loss gap, complexity terms and the federation-gain certificate.

Notation follows the loss-gap bound for a reference client and a second
client ("cl") evaluated at the same prediction ``c_hat``::

    H = 2 |c_hat| (delta_N + D_min)
        + min(D_ref c_d + delta_N (|c_cl - 2 c_hat| + |c_cl|),
              D_cl  c_d + delta_N (|c_ref - 2 c_hat| + |c_ref|))

and its strongly convex refinement ``H_SC = 2 |c_hat| Gamma + T`` with
``Gamma = rho_min |e_ref - e_cl| + delta_N + 2 sqrt(rho_min delta_N)``, where
``e`` are unit cost directions and ``T`` is the min-term above.

The scalar helpers are written with numpy operations, so array-valued
profile fields broadcast (used to evaluate many cost pairs at once).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dffl.errors import ConfigError, UnsupportedPair
from dffl.geometry.distance import SetGeometry, hausdorff, set_geometry, shape_distance
from dffl.geometry.sets import FeasibleSet
from dffl.model import AdamState, adam_step, backward, clip_global_gradient, forward, init_params

log = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.05


@dataclass(frozen=True)
class HeterogeneityProfile:
    """Pairwise summary entering the loss-gap bounds.

    The four norm fields depend on the cost pair and on ``c_hat``; they may
    be numpy arrays of a common shape when many pairs are evaluated together.
    """

    c_d: float
    delta: float
    delta_N: float
    D_ref: float
    D_cl: float
    norm_c_ref: Optional[float] = None
    norm_c_cl: Optional[float] = None
    norm_c_ref_2chat: Optional[float] = None
    norm_c_cl_2chat: Optional[float] = None
    rho_ref: Optional[float] = None
    rho_cl: Optional[float] = None
    delta_substituted: bool = False

    def __post_init__(self):
        for name in ("c_d", "delta", "delta_N", "D_ref", "D_cl"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be nonnegative")

    @property
    def D_min(self) -> float:
        return min(self.D_ref, self.D_cl)

    @property
    def rho_min(self) -> Optional[float]:
        radii = [r for r in (self.rho_ref, self.rho_cl) if r is not None]
        return min(radii) if radii else None

    @classmethod
    def from_pair(
        cls,
        set_ref: FeasibleSet,
        set_cl: FeasibleSet,
        c_ref,
        c_cl,
        c_hat,
        geom_ref: Optional[SetGeometry] = None,
        geom_cl: Optional[SetGeometry] = None,
        hausdorff_method: str = "formula",
    ) -> "HeterogeneityProfile":
        """Build the profile for one cost pair and prediction from two feasible sets.

        When the shape distance is not exact for the pair, the Hausdorff
        distance is used in its place (``delta_substituted=True``); this only
        makes the bound larger.
        """
        geom_ref = geom_ref or set_geometry(set_ref)
        geom_cl = geom_cl or set_geometry(set_cl)
        delta = hausdorff(set_ref, set_cl, method=hausdorff_method)
        try:
            shape = shape_distance(set_ref, set_cl)
            delta_N, substituted = (shape.value, False) if shape.exact else (delta, True)
        except UnsupportedPair:
            delta_N, substituted = delta, True
        c_ref, c_cl, c_hat = (np.asarray(v, dtype=float) for v in (c_ref, c_cl, c_hat))
        return cls(
            c_d=float(np.linalg.norm(c_ref - c_cl)),
            delta=delta,
            delta_N=min(delta_N, delta),
            D_ref=geom_ref.diameter,
            D_cl=geom_cl.diameter,
            norm_c_ref=float(np.linalg.norm(c_ref)),
            norm_c_cl=float(np.linalg.norm(c_cl)),
            norm_c_ref_2chat=float(np.linalg.norm(c_ref - 2 * c_hat)),
            norm_c_cl_2chat=float(np.linalg.norm(c_cl - 2 * c_hat)),
            rho_ref=geom_ref.rho,
            rho_cl=geom_cl.rho,
            delta_substituted=substituted,
        )


def _require(profile: HeterogeneityProfile, *names: str) -> None:
    missing = [n for n in names if getattr(profile, n) is None]
    if missing:
        raise ValueError(f"heterogeneity profile is missing {', '.join(missing)}")


def _t_term(profile: HeterogeneityProfile):
    _require(profile, "norm_c_ref", "norm_c_cl", "norm_c_ref_2chat", "norm_c_cl_2chat")
    p = profile
    first = p.D_ref * p.c_d + p.delta_N * (p.norm_c_cl_2chat + p.norm_c_cl)
    second = p.D_cl * p.c_d + p.delta_N * (p.norm_c_ref_2chat + p.norm_c_ref)
    return np.minimum(first, second)


def theorem1_H(profile: HeterogeneityProfile, chat_norm):
    """General loss-gap bound ``H(c_hat)`` for any pair of compact sets."""
    p = profile
    return 2.0 * chat_norm * (p.delta_N + p.D_min) + _t_term(p)


def corollary1_H_sc(profile: HeterogeneityProfile, c_hat, c_ref, c_cl) -> float:
    """Strongly convex loss-gap bound ``2 |c_hat| Gamma + T``.

    ``c_d`` and the norm terms are recomputed from the given vectors; the
    set quantities (``delta_N``, diameters, radii) come from ``profile``.

    Raises:
        ValueError: a cost vector is zero (costs must be bounded away from
            zero for the unit direction to exist) or no radius is known.
    """
    c_hat, c_ref, c_cl = (np.asarray(v, dtype=float) for v in (c_hat, c_ref, c_cl))
    n_ref, n_cl = float(np.linalg.norm(c_ref)), float(np.linalg.norm(c_cl))
    if n_ref == 0 or n_cl == 0:
        raise ValueError("cost norms must be bounded below by a positive constant; got a zero cost vector")
    rho = profile.rho_min
    if rho is None:
        raise ValueError("strongly convex bound needs rho_ref or rho_cl")
    filled = HeterogeneityProfile(
        c_d=float(np.linalg.norm(c_ref - c_cl)),
        delta=profile.delta,
        delta_N=profile.delta_N,
        D_ref=profile.D_ref,
        D_cl=profile.D_cl,
        norm_c_ref=n_ref,
        norm_c_cl=n_cl,
        norm_c_ref_2chat=float(np.linalg.norm(c_ref - 2 * c_hat)),
        norm_c_cl_2chat=float(np.linalg.norm(c_cl - 2 * c_hat)),
        rho_ref=profile.rho_ref,
        rho_cl=profile.rho_cl,
    )
    gamma = rho * float(np.linalg.norm(c_ref / n_ref - c_cl / n_cl)) + filled.delta_N + 2.0 * math.sqrt(rho * filled.delta_N)
    return 2.0 * float(np.linalg.norm(c_hat)) * gamma + float(_t_term(filled))


def _pair_profile_arrays(Cref, Ccl, c_hat, delta, delta_N, D_ref, D_cl) -> HeterogeneityProfile:
    return HeterogeneityProfile(
        c_d=np.linalg.norm(Cref - Ccl, axis=1),
        delta=delta,
        delta_N=delta_N,
        D_ref=D_ref,
        D_cl=D_cl,
        norm_c_ref=np.linalg.norm(Cref, axis=1),
        norm_c_cl=np.linalg.norm(Ccl, axis=1),
        norm_c_ref_2chat=np.linalg.norm(Cref - 2 * c_hat, axis=1),
        norm_c_cl_2chat=np.linalg.norm(Ccl - 2 * c_hat, axis=1),
    )


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    per_client: list[float]
    substituted: bool


def estimate_delta_j(
    sets: Sequence[FeasibleSet],
    j: int,
    avg_prediction,
    output_bound: float,
    paired_costs: np.ndarray,
    alphas: Optional[Sequence[float]] = None,
    geometries: Optional[Sequence[SetGeometry]] = None,
    include_self: bool = True,
) -> DeltaEstimate:
    """Client-mixture discrepancy estimate ``sum_i alpha_i mean_k H_ij``.

    Args:
        sets: feasible set of every client, in client order.
        j: the client whose discrepancy is estimated.
        avg_prediction: averaged prediction of a baseline federated model;
            it is rescaled to norm ``output_bound`` before evaluation.
        output_bound: the prediction norm bound ``B`` (the clip radius).
        paired_costs: ``(m, n, d)`` LP-form costs of all clients at shared
            covariates; row ``k`` of every block is one coupled draw.
        alphas: mixture weights, uniform by default.
        geometries: precomputed :func:`set_geometry` results.
        include_self: keep the ``i = j`` term (it is generally nonzero
            because the bound does not vanish at identical clients).

    Returns:
        The estimate, each client's ``mean_k H_ij`` and whether the
        Hausdorff distance replaced an inexact shape distance.
    """
    m = len(sets)
    paired_costs = np.asarray(paired_costs, dtype=float)
    if paired_costs.shape[0] != m:
        raise ValueError("paired_costs must have one block per client")
    alphas = np.full(m, 1.0 / m) if alphas is None else np.asarray(alphas, dtype=float)
    geometries = list(geometries) if geometries is not None else [set_geometry(s) for s in sets]
    c_hat = np.asarray(avg_prediction, dtype=float)
    norm = float(np.linalg.norm(c_hat))
    c_hat = c_hat * (output_bound / norm) if norm > 0 else c_hat
    chat_norm = float(np.linalg.norm(c_hat))
    per_client = []
    substituted = False
    total = 0.0
    for i in range(m):
        if i == j and not include_self:
            per_client.append(0.0)
            continue
        delta = hausdorff(sets[j], sets[i]) if i != j else 0.0
        shape = shape_distance(sets[j], sets[i]) if i != j else None
        if shape is not None and not shape.exact:
            substituted = substituted or delta > 0
            delta_N = delta
        else:
            delta_N = min(shape.value, delta) if shape is not None else 0.0
        prof = _pair_profile_arrays(
            paired_costs[j], paired_costs[i], c_hat, delta, delta_N, geometries[j].diameter, geometries[i].diameter
        )
        h = float(np.mean(theorem1_H(prof, chat_norm)))
        per_client.append(h)
        total += alphas[i] * h
    return DeltaEstimate(float(total), per_client, bool(substituted))


def loss_bound_b(D_S: float, C_max: float, tau: float) -> float:
    """Uniform bound on the SPO+ loss: ``D_S C_max + 2 D_S tau``."""
    return D_S * C_max + 2.0 * D_S * tau


def epsilon_term(n: int, D: float, rademacher: float, b: float, confidence: float) -> float:
    """``4 sqrt(2) D r_n + b sqrt(2 log(1/delta) / n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < confidence <= 1:
        raise ValueError("confidence must lie in (0, 1]")
    return 4.0 * math.sqrt(2.0) * D * rademacher + b * math.sqrt(2.0 * math.log(1.0 / confidence) / n)


@dataclass(frozen=True)
class FGCertificate:
    ratio: float
    difference: float
    helps: bool


def fg_certificate(eps_j: float, eps_mix: float, delta_j: float) -> FGCertificate:
    """Federation-gain ratio ``eps_j / (eps_mix + Delta_j)`` and difference.

    The difference is formed against the same rounded denominator as the
    ratio, so ``ratio > 1`` and ``difference > 0`` agree exactly.

    Raises:
        ValueError: negative inputs or a zero denominator.
    """
    eps_j, eps_mix, delta_j = float(eps_j), float(eps_mix), float(delta_j)
    if eps_j < 0 or eps_mix < 0 or delta_j < 0:
        raise ValueError("certificate inputs must be nonnegative")
    den = eps_mix + delta_j
    if den == 0:
        raise ValueError("federation-gain denominator eps_mix + Delta_j is zero")
    ratio = eps_j / den
    difference = eps_j - den
    helps = ratio > 1
    assert helps == (difference > 0)
    return FGCertificate(ratio, difference, helps)


@dataclass(frozen=True)
class ClientBounds:
    """Per-client report: complexity terms, discrepancy and the resulting bounds."""

    client_id: int
    n_j: int
    N: int
    D_j: float
    D_max: float
    rademacher_j: float
    rademacher_N: float
    b_j: float
    b_mix: float
    eps_j: float
    eps_mix: float
    delta_j: float
    fg_ratio: float
    fg_difference: float
    fg_helps: bool
    local_bound: float
    federated_bound: float
    delta_substituted: bool
    confidence: float

    def to_json(self) -> dict:
        return {k: v.item() if isinstance(v, np.generic) else v for k, v in asdict(self).items()}


def client_bounds(
    client_id: int,
    n_j: int,
    N: int,
    D_j: float,
    D_max: float,
    rademacher_j: float,
    rademacher_N: float,
    C_max: float,
    tau: float,
    delta_j: float,
    confidence: float = DEFAULT_CONFIDENCE,
    delta_substituted: bool = False,
) -> ClientBounds:
    """Assemble both excess-risk bounds and the certificate at confidence ``delta / 2`` each."""
    if not 0 < n_j <= N:
        raise ConfigError("need 0 < n_j <= N")
    half = confidence / 2.0
    b_j = loss_bound_b(D_j, C_max, tau)
    b_mix = loss_bound_b(D_max, C_max, tau)
    eps_j = epsilon_term(n_j, D_j, rademacher_j, b_j, half)
    eps_mix = epsilon_term(N, D_max, rademacher_N, b_mix, half)
    cert = fg_certificate(eps_j, eps_mix, delta_j)
    return ClientBounds(
        client_id, n_j, N, D_j, D_max, rademacher_j, rademacher_N, b_j, b_mix, eps_j, eps_mix, delta_j,
        cert.ratio, cert.difference, cert.helps, 2.0 * eps_j, 2.0 * eps_mix + 2.0 * delta_j,
        delta_substituted, confidence,
    )


def write_bound_report(records: Sequence[ClientBounds], path, pairs: Optional[dict] = None) -> Path:
    """JSON report keyed by client id, optionally with pairwise ``"j,i"`` entries."""
    path = Path(path)
    doc = {"clients": {str(r.client_id): r.to_json() for r in records}}
    if pairs:
        doc["pairs"] = {f"{j},{i}": v for (j, i), v in pairs.items()}
    path.write_text(json.dumps(doc, indent=2))
    return path


@dataclass(frozen=True)
class RademacherEstimate:
    estimate: float
    stderr: Optional[float]
    values: list[float]


def _correlation_draw(X, sigma, hidden_dim, tau, epochs, lr, grad_clip, seed) -> float:
    n, d = sigma.shape
    params = init_params(X.shape[1], hidden_dim, d, seed=seed, tau=tau)
    state = AdamState.fresh(params, lr=lr)
    best = -math.inf
    for _ in range(epochs):
        out, cache = forward(params, X)
        value = float(np.einsum("ij,ij->", sigma, out)) / n
        if not math.isfinite(value):
            raise FloatingPointError("non-finite correlation objective")
        best = max(best, value)
        grad = backward(params, cache, -sigma / n)
        params, state = adam_step(params, state, clip_global_gradient(grad, grad_clip))
    out, _ = forward(params, X)
    return max(best, float(np.einsum("ij,ij->", sigma, out)) / n)


def estimate_rademacher(
    X: np.ndarray,
    n: int,
    output_dim: int,
    draws: int = 20,
    epochs: int = 300,
    hidden_dim: int = 64,
    tau: float = 20.0,
    lr: float = 1e-3,
    grad_clip: float = 1.0,
    seed: int = 0,
) -> RademacherEstimate:
    """Empirical Rademacher complexity of the clipped predictor class on ``n`` rows of ``X``.

    Each draw samples signs ``sigma in {-1, 1}^{n x d}``, trains a fresh
    predictor with the training optimizer (full-batch Adam, ``epochs`` steps,
    global gradient clipping) to maximize ``(1/n) sum_i sigma_i @ f(x_i)``
    and keeps the best objective seen. Optimization is imperfect, so the
    result estimates the supremum from below. It never exceeds
    ``tau * sqrt(d)``.

    Returns:
        Mean over successful draws and its standard error (``None`` for a
        single draw).

    Raises:
        RuntimeError: fewer than half of the draws succeeded.
    """
    X = np.asarray(X, dtype=float)
    if not 1 <= n <= X.shape[0]:
        raise ValueError(f"n must lie in [1, {X.shape[0]}]")
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng([seed, n])
    values = []
    for t in range(draws):
        rows = rng.choice(X.shape[0], size=n, replace=False)
        sigma = rng.choice([-1.0, 1.0], size=(n, output_dim))
        try:
            values.append(_correlation_draw(X[rows], sigma, hidden_dim, tau, epochs, lr, grad_clip, seed=int(rng.integers(2**31))))
        except (FloatingPointError, ValueError) as exc:
            log.error("rademacher draw %d failed: %s", t, exc)
    if 2 * len(values) < draws:
        raise RuntimeError(f"only {len(values)} of {draws} rademacher draws succeeded")
    arr = np.asarray(values)
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else None
    return RademacherEstimate(float(arr.mean()), stderr, values)


def spo_plus_quadratic_bound(rho: float, c_hat, c) -> float:
    """``(2 / rho) |c_hat - c|^2``.

    On ``Ball(0, rho)`` this dominates the SPO+ loss whenever
    ``|c| >= rho^2``; below that it can fail, so callers outside that
    regime should use ``(2 rho / |c|) |c_hat - c|^2`` instead.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    diff = np.asarray(c_hat, dtype=float) - np.asarray(c, dtype=float)
    return 2.0 / rho * float(diff @ diff)
