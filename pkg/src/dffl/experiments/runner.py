"""Federated-vs-local experiments over heterogeneity grids, with bounds alongside."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from dffl.bounds import (
    DEFAULT_CONFIDENCE,
    ClientBounds,
    DeltaEstimate,
    client_bounds,
    estimate_delta_j,
    estimate_rademacher,
)
from dffl.datagen import (
    ClientDataset,
    FederationLaw,
    GenConfig,
    generate,
    generate_test_set,
    paired_costs,
    shared_covariates,
)
from dffl.errors import ConfigError, SolverError
from dffl.federation import FedConfig, RoundLog, train_federated, train_local
from dffl.geometry.distance import set_geometry
from dffl.geometry.sets import min_oracle
from dffl.model import PredictorParams, forward

log = logging.getLogger(__name__)

DESK_GEN = dict(p=8, d=10, m=5, n=500, degree=4, noise=0.5)
DESK_IMBALANCED = dict(m=10, n=550)
DESK_FED = dict(rounds=20, local_epochs=5)
DESK_TEST_SIZE = 2000
DESK_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class RademacherConfig:
    draws: int = 20
    epochs: int = 300
    pool_size: int = 2000


@dataclass(frozen=True)
class ExperimentConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    seeds: tuple[int, ...] = (0,)
    test_size: int = 20000
    confidence: float = DEFAULT_CONFIDENCE
    pair_samples: int = 500
    rademacher: RademacherConfig = field(default_factory=RademacherConfig)

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if self.test_size < self.gen.m:
            raise ConfigError("test_size must give every client at least one sample")
        self.gen.validate()
        self.fed.validate()
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        gen = GenConfig(**data.pop("gen", {}))
        fed = FedConfig(**data.pop("fed", {}))
        rad = RademacherConfig(**data.pop("rademacher", {}))
        seeds = tuple(int(s) for s in data.pop("seeds", (0,)))
        return cls(gen=gen, fed=fed, seeds=seeds, rademacher=rad, **data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def label(self) -> str:
        g = self.gen
        return f"{g.family}-{g.balance}-obj{g.eta_obj:g}-constr{g.eta_constr:g}"


def desk_config(family: str = "knapsack", balance: str = "balanced", eta_obj: float = 0.0, eta_constr: float = 0.0, **overrides) -> ExperimentConfig:
    """Reduced-size configuration that finishes in minutes on one core."""
    gen = dict(DESK_GEN, family=family, balance=balance, eta_obj=eta_obj, eta_constr=eta_constr)
    if balance == "imbalanced":
        gen.update(DESK_IMBALANCED)
    cfg = ExperimentConfig(
        gen=GenConfig(**gen),
        fed=FedConfig(**DESK_FED),
        seeds=DESK_SEEDS,
        test_size=DESK_TEST_SIZE,
        pair_samples=200,
        rademacher=RademacherConfig(draws=5, epochs=200, pool_size=2000),
    )
    return replace(cfg, **overrides) if overrides else cfg


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    mean_regret: float
    relative_regret: float
    mse: float
    failures: int = 0


def evaluate(params: PredictorParams, client: ClientDataset, predictions: Optional[np.ndarray] = None) -> Evaluation:
    """Mean SPO regret, regret relative to ``|mean z*(c)|`` and MSE on ``client``'s samples.

    Args:
        params: predictor.
        client: test samples with their feasible set.
        predictions: optional precomputed value-space predictions, which
            replaces the forward pass (used to evaluate rescaled predictors).
    """
    if client.n == 0:
        raise ValueError("evaluation needs a nonempty test set")
    if predictions is None:
        predictions, _ = forward(params, client.X)
    fset, s = client.feasible_set, client.sense
    regrets, optima = [], []
    failures = 0
    for c_hat, c in zip(predictions, client.C):
        try:
            truth = min_oracle(fset, s * c)
            decision = min_oracle(fset, s * c_hat)
        except SolverError as exc:
            log.error("evaluation solve failed on client %d: %s", client.client_id, exc)
            failures += 1
            continue
        regrets.append(float(s * c @ decision.w) - truth.value)
        optima.append(truth.value)
    if not regrets:
        raise SolverError(f"every evaluation solve failed on client {client.client_id}")
    mean_regret = float(np.mean(regrets))
    scale = abs(float(np.mean(optima)))
    relative = mean_regret / scale if scale > 0 else math.inf
    err = float(np.mean(np.sum((predictions - client.C) ** 2, axis=1)))
    return Evaluation(mean_regret, relative, err, failures)


# -- one configuration --------------------------------------------------------


ROW_FIELDS = (
    "config", "config_hash", "family", "balance", "eta_obj", "eta_constr", "seed", "client_id", "n_train",
    "fed_regret", "local_regret", "fed_relative_regret", "local_relative_regret", "fed_mse", "local_mse",
    "regret_difference", "improvement_pct", "eps_j", "eps_mix", "delta_j", "fg_ratio", "fg_difference",
    "fg_helps", "local_bound", "federated_bound", "delta_substituted",
)


@dataclass
class ExperimentResult:
    """Rows per (seed, client) plus seed-averaged rows per client."""

    config: ExperimentConfig
    seed_rows: list[dict]
    rows: list[dict]
    round_logs: dict[int, list[RoundLog]] = field(default_factory=dict)
    failed_seeds: dict[int, str] = field(default_factory=dict)

    @property
    def fraction_preferring_federation(self) -> float:
        """Per-seed share of clients with federated regret <= local regret, averaged over seeds."""
        return _mean_over_seeds(self.seed_rows, lambda r: r["fed_regret"] <= r["local_regret"])

    @property
    def agreement_rate(self) -> float:
        return fg_agreement(self.seed_rows)

    def variance(self, key: str) -> float:
        """Across-client variance of ``key``, averaged over seeds."""
        by_seed = _group(self.seed_rows, "seed")
        return float(np.mean([np.var([r[key] for r in rows]) for rows in by_seed.values()]))

    def summary(self) -> dict:
        return {
            "config": self.config.label,
            "config_hash": self.config.config_hash(),
            "seeds": list(self.config.seeds),
            "failed_seeds": {str(k): v for k, v in self.failed_seeds.items()},
            "fraction_preferring_federation": self.fraction_preferring_federation,
            "agreement_rate": self.agreement_rate,
            "fed_regret_variance": self.variance("fed_regret"),
            "local_regret_variance": self.variance("local_regret"),
        }


def _group(rows: Sequence[dict], key: str) -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    return out


def _mean_over_seeds(rows: Sequence[dict], predicate) -> float:
    by_seed = _group(rows, "seed")
    if not by_seed:
        return math.nan
    return float(np.mean([np.mean([bool(predicate(r)) for r in rs]) for rs in by_seed.values()]))


_RADEMACHER_CACHE: dict = {}


def rademacher_for(n: int, gen: GenConfig, fed: FedConfig, rad: RademacherConfig, seed: int = 0) -> float:
    """Cached estimate: it depends only on ``n``, the covariate law and the model class."""
    key = (n, gen.p, gen.d, fed.hidden_dim, fed.tau, fed.lr, fed.grad_clip, rad, seed)
    if key not in _RADEMACHER_CACHE:
        pool = np.random.default_rng([seed, 7]).standard_normal((max(rad.pool_size, n), gen.p))
        est = estimate_rademacher(
            pool, n, gen.d, draws=rad.draws, epochs=rad.epochs, hidden_dim=fed.hidden_dim, tau=fed.tau,
            lr=fed.lr, grad_clip=fed.grad_clip, seed=seed,
        )
        _RADEMACHER_CACHE[key] = est.estimate
    return _RADEMACHER_CACHE[key]


def federation_bounds(
    clients: Sequence[ClientDataset],
    law: FederationLaw,
    fed_params: PredictorParams,
    config: ExperimentConfig,
    gen: Optional[GenConfig] = None,
    fed: Optional[FedConfig] = None,
) -> tuple[list[ClientBounds], list[DeltaEstimate]]:
    """Per-client certificates for a trained federation.

    ``C_max`` is the largest training cost norm; the discrepancy uses the
    federated model's prediction averaged over all training covariates and
    costs paired at shared covariates.
    """
    gen = gen or config.gen
    fed = fed or config.fed
    geoms = [set_geometry(c.feasible_set) for c in clients]
    D_max = max(g.diameter for g in geoms)
    C_max = max(float(np.max(np.linalg.norm(c.C, axis=1))) for c in clients)
    N = sum(c.n for c in clients)
    r_N = rademacher_for(N, gen, fed, config.rademacher)
    X_all = np.concatenate([c.X for c in clients])
    avg_pred = forward(fed_params, X_all)[0].mean(axis=0)
    pairs = law.sense * paired_costs(law, shared_covariates(gen, config.pair_samples))
    sets = [c.feasible_set for c in clients]
    alphas = [c.weight for c in clients]
    records, deltas = [], []
    for j, client in enumerate(clients):
        dj = estimate_delta_j(sets, j, law.sense * avg_pred, fed.tau, pairs, alphas=alphas, geometries=geoms)
        deltas.append(dj)
        records.append(
            client_bounds(
                client.client_id, client.n, N, geoms[j].diameter, D_max,
                rademacher_for(client.n, gen, fed, config.rademacher), r_N, C_max, fed.tau, dj.value,
                confidence=config.confidence, delta_substituted=dj.substituted,
            )
        )
    return records, deltas


def run_seed(config: ExperimentConfig, seed: int) -> tuple[list[dict], list[RoundLog]]:
    """One seed of one configuration; returns per-client rows and the federated round logs."""
    gen = replace(config.gen, seed=seed)
    fed = replace(config.fed, seed=seed)
    clients, law = generate(gen)
    tests = generate_test_set(gen, config.test_size, seed=0)
    fed_params, logs = train_federated(clients, fed)
    local_params = [train_local(c, fed)[0] for c in clients]

    bounds, _ = federation_bounds(clients, law, fed_params, config, gen, fed)

    rows = []
    for j, (client, test, cb) in enumerate(zip(clients, tests, bounds)):
        ev_fed = evaluate(fed_params, test)
        ev_loc = evaluate(local_params[j], test)
        diff = ev_loc.mean_regret - ev_fed.mean_regret
        rows.append(
            {
                "config": config.label,
                "config_hash": config.config_hash(),
                "family": gen.family,
                "balance": gen.balance,
                "eta_obj": gen.eta_obj,
                "eta_constr": gen.eta_constr,
                "seed": seed,
                "client_id": client.client_id,
                "n_train": client.n,
                "fed_regret": ev_fed.mean_regret,
                "local_regret": ev_loc.mean_regret,
                "fed_relative_regret": ev_fed.relative_regret,
                "local_relative_regret": ev_loc.relative_regret,
                "fed_mse": ev_fed.mse,
                "local_mse": ev_loc.mse,
                "regret_difference": diff,
                "improvement_pct": 100.0 * diff / ev_loc.mean_regret if ev_loc.mean_regret > 0 else 0.0,
                "eps_j": cb.eps_j,
                "eps_mix": cb.eps_mix,
                "delta_j": cb.delta_j,
                "fg_ratio": cb.fg_ratio,
                "fg_difference": cb.fg_difference,
                "fg_helps": cb.fg_helps,
                "local_bound": cb.local_bound,
                "federated_bound": cb.federated_bound,
                "delta_substituted": cb.delta_substituted,
            }
        )
    return rows, logs


def _average_rows(seed_rows: Sequence[dict]) -> list[dict]:
    out = []
    for cid, rows in sorted(_group(seed_rows, "client_id").items()):
        avg = dict(rows[0])
        avg["seed"] = "mean"
        for key in ROW_FIELDS:
            vals = [r[key] for r in rows]
            if isinstance(vals[0], bool):
                continue
            if isinstance(vals[0], float):
                avg[key] = float(np.mean(vals))
        # keep the certificate consistent with the averaged terms
        den = avg["eps_mix"] + avg["delta_j"]
        avg["fg_ratio"] = avg["eps_j"] / den
        avg["fg_difference"] = avg["eps_j"] - den
        avg["fg_helps"] = avg["fg_ratio"] > 1
        out.append(avg)
    return out


def run_config(config: ExperimentConfig) -> ExperimentResult:
    """Train and evaluate over every seed; seeds that fail are recorded and skipped.

    Raises:
        RuntimeError: all seeds failed.
    """
    config.validate()
    seed_rows, logs, failed = [], {}, {}
    for seed in config.seeds:
        tic = time.perf_counter()
        try:
            rows, round_logs = run_seed(config, seed)
        except (SolverError, ConfigError, ValueError, RuntimeError) as exc:
            log.error("%s seed %d failed: %s", config.label, seed, exc)
            failed[seed] = str(exc)
            continue
        log.info("%s seed %d done in %.1fs", config.label, seed, time.perf_counter() - tic)
        seed_rows.extend(rows)
        logs[seed] = round_logs
    if not seed_rows:
        raise RuntimeError(f"{config.label}: every seed failed")
    return ExperimentResult(config, seed_rows, _average_rows(seed_rows), logs, failed)


def grid(base: ExperimentConfig, eta_obj: Sequence[float] = (0.0,), eta_constr: Sequence[float] = (0.0,)) -> list[ExperimentConfig]:
    """Cartesian product of heterogeneity levels around ``base``."""
    return [replace(base, gen=replace(base.gen, eta_obj=float(o), eta_constr=float(c))) for o in eta_obj for c in eta_constr]


def _safe_run(config: ExperimentConfig):
    try:
        return run_config(config), None
    except Exception as exc:  # isolate one config from the rest of the sweep
        log.error("config %s failed: %s", config.label, exc)
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    results: list[ExperimentResult]
    failures: dict[str, str]

    @property
    def rows(self) -> list[dict]:
        return [row for res in self.results for row in res.rows]


def sweep(configs: Sequence[ExperimentConfig], max_workers: int = 1) -> SweepResult:
    """Run every config in isolation; a failing config is reported without affecting the others."""
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers) as pool:
            outcomes = list(pool.map(_safe_run, configs))
    else:
        outcomes = [_safe_run(c) for c in configs]
    results, failures = [], {}
    for cfg, (res, err) in zip(configs, outcomes):
        if res is None:
            failures[f"{cfg.label}#{cfg.config_hash()}"] = err
        else:
            results.append(res)
    return SweepResult(results, failures)


def fg_agreement(rows: Sequence[dict]) -> float:
    """Share of rows where the certificate difference and ``local - federated`` regret share a sign.

    Zero counts as positive on both sides (a zero certificate predicts a weak benefit).
    """
    if not rows:
        return math.nan
    return float(np.mean([(r["fg_difference"] >= 0) == (r["regret_difference"] >= 0) for r in rows]))
