"""FedAvg with decision-focused (SPO+) local updates, plus the local-only baseline.

Each round samples ``max(floor(C K), 1)`` clients without replacement; every
sampled client starts from the global parameters with a fresh Adam state,
runs ``E`` epochs of SPO+ subgradient steps through the predictor, and the
server replaces the global parameters by the sample-count weighted average.

Randomness is split into independent streams: one for client sampling, and
one per ``(client, round)`` for data shuffling, so the result does not depend
on the order in which client updates are scheduled.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from dffl.datagen import ClientDataset
from dffl.errors import ConfigError, EmptyClient, SolverError
from dffl.geometry.sets import min_oracle
from dffl.model import (
    AdamState,
    PredictorParams,
    adam_step,
    backward,
    clip_global_gradient,
    forward,
    init_params,
)

log = logging.getLogger(__name__)

_SAMPLING, _SHUFFLE, _INIT = 11, 12, 13


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 50
    client_fraction: float = 1.0
    local_epochs: int = 5
    batch_size: int = 1
    lr: float = 1e-3
    grad_clip: float = 1.0
    hidden_dim: int = 64
    tau: float = 20.0
    seed: int = 0
    max_workers: int = 1

    def validate(self) -> "FedConfig":
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError("client_fraction must lie in (0, 1]")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1 or self.lr <= 0 or self.grad_clip <= 0:
            raise ConfigError("batch_size, lr and grad_clip must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoundLog:
    round: int
    sampled: list[int]
    pre_loss: dict[int, float]
    post_loss: dict[int, float]
    param_norm: float
    wall_time: float
    failed: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        out["pre_loss"] = {str(k): v for k, v in self.pre_loss.items()}
        out["post_loss"] = {str(k): v for k, v in self.post_loss.items()}
        return out


@dataclass(eq=False)
class _Prepared:
    """Per-client LP-form costs and their cached true decisions."""

    client: ClientDataset
    lp_costs: np.ndarray
    true_w: np.ndarray
    true_z: np.ndarray


def _prepare(client: ClientDataset) -> _Prepared:
    if client.n == 0:
        raise EmptyClient(f"client {client.client_id} has no training samples")
    lp = client.lp_costs()
    sols = [min_oracle(client.feasible_set, c) for c in lp]
    return _Prepared(client, lp, np.array([s.w for s in sols]), np.array([s.value for s in sols]))


def initial_params(clients: Sequence[ClientDataset], config: FedConfig) -> PredictorParams:
    c0 = clients[0]
    return init_params(c0.X.shape[1], config.hidden_dim, c0.C.shape[1], seed=config.seed + _INIT * 1000003, tau=config.tau)


def _shuffle_rng(config: FedConfig, client_id: int, round_idx: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, _SHUFFLE, client_id, round_idx])


def _local_epochs(prep: _Prepared, params: PredictorParams, config: FedConfig, rng: np.random.Generator):
    """Run the client loop; returns (params, mean loss in first epoch, mean loss in last epoch)."""
    fset = prep.client.feasible_set
    sense = prep.client.sense
    X, lp, true_w, true_z = prep.client.X, prep.lp_costs, prep.true_w, prep.true_z
    state = AdamState.fresh(params, lr=config.lr)
    n = X.shape[0]
    first = last = 0.0
    for epoch in range(config.local_epochs):
        total = 0.0
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            c_hat, cache = forward(params, X[batch])
            g_out = np.empty_like(c_hat)
            for k, i in enumerate(batch):
                # SPO+ in LP form at (sense * c_hat, sense * c); chain rule brings back one sense factor
                ch = sense * c_hat[k]
                inner = min_oracle(fset, 2.0 * ch - lp[i])
                total += float((lp[i] - 2.0 * ch) @ inner.w) + 2.0 * float(ch @ true_w[i]) - true_z[i]
                g_out[k] = sense * 2.0 * (true_w[i] - inner.w)
            grad = backward(params, cache, g_out)
            if len(batch) > 1:
                grad /= len(batch)
            params, state = adam_step(params, state, clip_global_gradient(grad, config.grad_clip))
        mean = total / n
        if epoch == 0:
            first = mean
        last = mean
    return params, first, last


def client_update(
    global_params: PredictorParams,
    client: ClientDataset,
    config: FedConfig,
    round_idx: int = 0,
    _prepared: Optional[_Prepared] = None,
) -> PredictorParams:
    """Local SPO+ training from ``global_params``; the client's feasible set comes with ``client``."""
    config.validate()
    prep = _prepared or _prepare(client)
    params, _, _ = _local_epochs(prep, global_params, config, _shuffle_rng(config, client.client_id, round_idx))
    return params


def aggregate(client_params: Sequence[PredictorParams], counts: Sequence[int]) -> PredictorParams:
    """Sample-count weighted average, accumulated in the given order."""
    if not client_params:
        raise ValueError("cannot aggregate an empty set of client updates")
    total = float(sum(counts))
    theta = np.zeros_like(client_params[0].theta)
    for p, n in zip(client_params, counts):
        theta += (n / total) * p.theta
    return client_params[0].with_theta(theta)


def _run_round(preps, ids, params, config, round_idx):
    def work(cid):
        prep = preps[cid]
        try:
            return cid, _local_epochs(prep, params, config, _shuffle_rng(config, prep.client.client_id, round_idx))
        except SolverError as exc:
            log.error("round %d: client %d dropped after solver failure: %s", round_idx, cid, exc)
            return cid, None

    if config.max_workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(config.max_workers) as pool:
            results = dict(pool.map(work, ids))
    else:
        results = dict(work(cid) for cid in ids)
    return [(cid, results[cid]) for cid in ids]


def train_federated(
    clients: Sequence[ClientDataset],
    config: FedConfig,
    init: Optional[PredictorParams] = None,
) -> tuple[PredictorParams, list[RoundLog]]:
    """Run the federated protocol for ``config.rounds`` rounds.

    Returns:
        Final global parameters and one :class:`RoundLog` per round. A
        client's ``pre_loss``/``post_loss`` are its mean training SPO+ loss
        over the first and last local epoch, measured on the fly.
    """
    config.validate()
    if not clients:
        raise ValueError("federation needs at least one client")
    preps = [_prepare(c) for c in clients]
    params = init.copy() if init is not None else initial_params(clients, config)
    K = len(clients)
    m = max(int(np.floor(config.client_fraction * K)), 1)
    sampler = np.random.default_rng([config.seed, _SAMPLING])
    logs = []
    for t in range(config.rounds):
        tic = time.perf_counter()
        ids = sorted(int(i) for i in sampler.choice(K, size=m, replace=False))
        outcomes = _run_round(preps, ids, params, config, t)
        ok = [(cid, res) for cid, res in outcomes if res is not None]
        failed = [cid for cid, res in outcomes if res is None]
        if ok:
            params = aggregate([res[0] for _, res in ok], [clients[cid].n for cid, _ in ok])
        logs.append(
            RoundLog(
                round=t,
                sampled=ids,
                pre_loss={clients[cid].client_id: res[1] for cid, res in ok},
                post_loss={clients[cid].client_id: res[2] for cid, res in ok},
                param_norm=float(np.linalg.norm(params.theta)),
                wall_time=time.perf_counter() - tic,
                failed=[clients[cid].client_id for cid in failed],
            )
        )
    return params, logs


def train_local(
    client: ClientDataset,
    config: FedConfig,
    init: Optional[PredictorParams] = None,
) -> tuple[PredictorParams, list[tuple[float, float]]]:
    """Local-only baseline: ``rounds`` consecutive blocks of ``local_epochs`` epochs.

    The block structure (and its Adam reset) mirrors the federated loop so a
    single-client federation reproduces this run exactly.

    Returns:
        Parameters and per-block ``(first-epoch, last-epoch)`` mean losses.
    """
    config.validate()
    prep = _prepare(client)
    params = init.copy() if init is not None else initial_params([client], config)
    history = []
    for t in range(config.rounds):
        params, first, last = _local_epochs(prep, params, config, _shuffle_rng(config, client.client_id, t))
        history.append((first, last))
    return params, history
