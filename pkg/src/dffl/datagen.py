"""Synthetic federated datasets and CSV ingestion.

Synthetic law (one dataset per seed)::

    x ~ N(0, I_p)
    B in {0,1}^{d x p}, entries Bernoulli(0.5), drawn once
    client loading B_j = B @ R_j, R_j = expm(eta_obj * A_j / ||A_j||_2), A_j skew
    c_k = [1 + (1 + B_j[k] @ x / sqrt(p)) ** degree] * xi_k,  xi ~ U(1 - noise, 1 + noise)

Knapsack clients share weights ``a ~ U[0.5, 1.5]^d`` and a base budget
``0.6 d`` scaled by ``exp(eta_constr * zeta_j)``; they *maximize* ``c @ w``, so
their LP cost vector is ``-c`` (``sense = -1``). Portfolio clients minimize
``c @ w`` under an entropy threshold ``r_j = -h_j``.

Random streams are derived from ``(seed, tag)`` pairs so the law, the training
sample and each test sample are reproducible independently of one another.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from dffl.errors import ConfigError, EmptyClient, SchemaError
from dffl.geometry.sets import EntropySimplex, FeasibleSet, KnapsackPolytope

FAMILIES = ("knapsack", "portfolio")
BALANCE_MODES = ("balanced", "imbalanced")
IMBALANCE_RATIO = 10

_LAW, _TRAIN, _TEST, _PAIRING = 0, 1, 2, 3


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *tags])


@dataclass(frozen=True)
class GenConfig:
    p: int = 8
    d: int = 50
    n: int = 2000
    m: int = 20
    degree: int = 2
    noise: float = 0.0
    eta_obj: float = 0.0
    eta_constr: float = 0.0
    balance: str = "balanced"
    family: str = "knapsack"
    seed: int = 0

    def validate(self) -> "GenConfig":
        if self.p < 1 or self.d < 2 or self.m < 1 or self.n < self.m:
            raise ConfigError("need p >= 1, d >= 2, m >= 1 and n >= m")
        if self.degree < 2 or self.degree % 2:
            raise ConfigError(f"degree must be even and >= 2, got {self.degree}")
        if self.noise < 0 or self.eta_obj < 0 or self.eta_constr < 0:
            raise ConfigError("noise and heterogeneity scales must be nonnegative")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.balance not in BALANCE_MODES:
            raise ConfigError(f"balance must be one of {BALANCE_MODES}")
        if self.balance == "balanced" and self.n % self.m:
            raise ConfigError(f"balanced split needs n divisible by m ({self.n} % {self.m})")
        client_counts(self)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ClientDataset:
    """One client's samples and downstream problem.

    ``sense`` is +1 when the client minimizes ``c @ w`` and -1 when it
    maximizes it; :meth:`lp_costs` returns the costs in minimization form.
    """

    client_id: int
    X: np.ndarray
    C: np.ndarray
    feasible_set: FeasibleSet
    sense: int = 1
    weight: float = 1.0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.X.shape[0] != self.C.shape[0]:
            raise ValueError("X and C must have the same number of rows")
        if self.sense not in (1, -1):
            raise ValueError("sense must be +1 or -1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def lp_costs(self) -> np.ndarray:
        return self.sense * self.C


def with_mixture_weights(clients: Sequence[ClientDataset]) -> list[ClientDataset]:
    """Set ``weight = n_j / N`` on every client."""
    N = sum(c.n for c in clients)
    for c in clients:
        c.weight = c.n / N
    return list(clients)


def rotation(p: int, eta_obj: float, seed) -> np.ndarray:
    """Random rotation ``expm(eta * A / ||A||_2)`` with ``A = (G - G^T) / 2`` Gaussian skew.

    ``eta_obj`` is the rotation angle scale: the largest principal angle of
    the result equals ``eta_obj`` (for ``eta_obj <= pi``).
    """
    if eta_obj < 0:
        raise ValueError("eta_obj must be nonnegative")
    if eta_obj == 0:
        return np.eye(p)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    G = rng.standard_normal((p, p))
    A = 0.5 * (G - G.T)
    norm = np.linalg.norm(A, 2)
    if norm == 0:
        return np.eye(p)
    return expm(eta_obj * A / norm)


def split_imbalanced(n: int = 5500, m: int = 20) -> list[int]:
    """First ``m // 2`` clients get ten times the samples of the rest.

    Raises:
        ConfigError: when ``n`` does not split exactly in that ratio.
    """
    big = m // 2
    units = IMBALANCE_RATIO * big + (m - big)
    if m < 2 or n % units:
        raise ConfigError(f"n={n} does not split {IMBALANCE_RATIO}:1 over m={m} clients")
    small = n // units
    return [IMBALANCE_RATIO * small] * big + [small] * (m - big)


def client_counts(config: GenConfig) -> list[int]:
    if config.balance == "balanced":
        return [config.n // config.m] * config.m
    return split_imbalanced(config.n, config.m)


def _balanced_counts(n: int, m: int) -> list[int]:
    base, extra = divmod(n, m)
    return [base + (j < extra) for j in range(m)]


@dataclass(eq=False)
class FederationLaw:
    """Shared generating parameters: loading matrix, rotations and feasible sets."""

    config: GenConfig
    loading: np.ndarray  # (d, p)
    rotations: list[np.ndarray]
    feasible_sets: list[FeasibleSet]
    item_weights: Optional[np.ndarray] = None
    base_budget: Optional[float] = None
    thresholds: Optional[np.ndarray] = None
    budgets: Optional[np.ndarray] = None

    @property
    def sense(self) -> int:
        return -1 if self.config.family == "knapsack" else 1

    def client_loading(self, j: int) -> np.ndarray:
        return self.loading @ self.rotations[j]

    def costs(self, j: int, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        z = X @ self.client_loading(j).T / math.sqrt(cfg.p)
        c = 1.0 + (1.0 + z) ** cfg.degree
        if cfg.noise > 0:
            c = c * rng.uniform(1.0 - cfg.noise, 1.0 + cfg.noise, size=c.shape)
        return c

    def client(self, j: int, X: np.ndarray, C: np.ndarray) -> ClientDataset:
        return ClientDataset(j, X, C, self.feasible_sets[j], self.sense)


def federation_law(config: GenConfig) -> FederationLaw:
    cfg = config.validate()
    rng = _rng(cfg.seed, _LAW)
    loading = rng.binomial(1, 0.5, size=(cfg.d, cfg.p)).astype(float)
    rot_seeds = rng.integers(0, 2**63 - 1, size=cfg.m)
    rotations = [rotation(cfg.p, cfg.eta_obj, np.random.default_rng(int(s))) for s in rot_seeds]
    if cfg.family == "knapsack":
        a = rng.uniform(0.5, 1.5, size=cfg.d)
        B0 = 0.6 * cfg.d
        budgets = B0 * np.exp(cfg.eta_constr * rng.standard_normal(cfg.m))
        sets = [KnapsackPolytope(a, float(b)) for b in budgets]
        return FederationLaw(cfg, loading, rotations, sets, item_weights=a, base_budget=B0, budgets=budgets)
    log_d = math.log(cfg.d)
    h = np.clip(log_d / 2 + cfg.eta_constr * rng.uniform(-1.0, 1.0, size=cfg.m), 1e-6, log_d - 1e-6)
    r = -h
    sets = [EntropySimplex(cfg.d, float(rj)) for rj in r]
    return FederationLaw(cfg, loading, rotations, sets, thresholds=r)


def _sample(law: FederationLaw, counts: Sequence[int], rng: np.random.Generator) -> list[ClientDataset]:
    cfg = law.config
    n = int(sum(counts))
    X = rng.standard_normal((n, cfg.p))
    perm = rng.permutation(n)
    clients = []
    start = 0
    for j, nj in enumerate(counts):
        idx = perm[start : start + nj]
        start += nj
        Xj = X[idx]
        clients.append(law.client(j, Xj, law.costs(j, Xj, rng)))
    return with_mixture_weights(clients)


def generate(config: GenConfig) -> tuple[list[ClientDataset], FederationLaw]:
    """Training federation for ``config`` and the shared law it was drawn from."""
    law = federation_law(config)
    return _sample(law, client_counts(law.config), _rng(config.seed, _TRAIN)), law


def generate_test_set(config: GenConfig, n_test: int, seed: int = 0) -> list[ClientDataset]:
    """Held-out samples from the same law, split evenly over the clients."""
    law = federation_law(config)
    return _sample(law, _balanced_counts(n_test, config.m), _rng(config.seed, _TEST, seed))


def paired_costs(law: FederationLaw, X: np.ndarray, seed: int = 0) -> np.ndarray:
    """Every client's cost vectors at shared covariates ``X``; shape ``(m, n, d)``.

    Row ``k`` of each client's block is generated from the same ``x_k``,
    which realizes the shared-covariate coupling between clients.
    """
    rng = _rng(law.config.seed, _PAIRING, seed)
    return np.stack([law.costs(j, X, rng) for j in range(law.config.m)])


def shared_covariates(config: GenConfig, n: int, seed: int = 0) -> np.ndarray:
    return _rng(config.seed, _PAIRING, seed, 1).standard_normal((n, config.p))


# -- CSV ingestion ------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column layout ``x1..xp, c1..cd`` with an optional split column."""

    p: int
    d: int
    split_column: str = "split"

    @property
    def feature_columns(self) -> list[str]:
        return [f"x{i}" for i in range(1, self.p + 1)]

    @property
    def cost_columns(self) -> list[str]:
        return [f"c{i}" for i in range(1, self.d + 1)]


def write_csv(client: ClientDataset, path, split=None) -> Path:
    """Write one client as CSV (17 significant digits, lossless for float64).

    ``split`` is either one label for every row or a per-row sequence.
    """
    path = Path(path)
    labels = [split] * client.n if isinstance(split, str) else split
    p, d = client.X.shape[1], client.C.shape[1]
    schema = CsvSchema(p, d)
    header = schema.feature_columns + schema.cost_columns
    if split is not None:
        header.append(schema.split_column)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, (x, c) in enumerate(zip(client.X, client.C)):
            row = [repr(float(v)) for v in x] + [repr(float(v)) for v in c]
            if labels is not None:
                row.append(labels[k])
            writer.writerow(row)
    return path


def _set_from_entry(entry: dict, weights: list, d: int) -> tuple[FeasibleSet, int]:
    family = entry.get("family")
    if family == "knapsack":
        if "budget" not in entry or "weights_ref" not in entry:
            raise SchemaError(f"client {entry.get('id')}: knapsack entry needs 'budget' and 'weights_ref'")
        a = np.asarray(weights[int(entry["weights_ref"])], dtype=float)
        if a.shape != (d,):
            raise SchemaError(f"client {entry.get('id')}: weight vector has {a.size} entries, expected {d}")
        return KnapsackPolytope(a, float(entry["budget"])), -1
    if family == "portfolio":
        if "entropy_r" not in entry:
            raise SchemaError(f"client {entry.get('id')}: portfolio entry needs 'entropy_r'")
        return EntropySimplex(d, float(entry["entropy_r"])), 1
    raise SchemaError(f"client {entry.get('id')}: unknown family {family!r}")


def _read_rows(path: Path, schema: Optional[CsvSchema], split: Optional[str]):
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header)") from None
        rows = list(reader)
    if schema is None:
        p = sum(1 for h in header if h.startswith("x") and h[1:].isdigit())
        d = sum(1 for h in header if h.startswith("c") and h[1:].isdigit())
        schema = CsvSchema(p, d)
    col = {name: i for i, name in enumerate(header)}
    for name in schema.feature_columns + schema.cost_columns:
        if name not in col:
            raise SchemaError(f"{path}: missing column {name!r}")
    if split is not None:
        if schema.split_column not in col:
            raise SchemaError(f"{path}: missing column {schema.split_column!r}")
        rows = [r for r in rows if r[col[schema.split_column]] == split]
    if not rows:
        raise EmptyClient(f"{path}: client has no rows" + (f" in split {split!r}" if split else ""))
    fi = [col[c] for c in schema.feature_columns]
    ci = [col[c] for c in schema.cost_columns]
    try:
        X = np.array([[float(r[i]) for i in fi] for r in rows])
        C = np.array([[float(r[i]) for i in ci] for r in rows])
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: unreadable cell ({exc})") from None
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(C))):
        raise SchemaError(f"{path}: non-finite cell")
    return X, C, schema


def load_csv(
    client_files: Sequence,
    sidecar,
    schema: Optional[CsvSchema] = None,
    split: Optional[str] = None,
) -> list[ClientDataset]:
    """Load one CSV per client, pairing files with sidecar entries by position.

    Args:
        client_files: CSV paths, in the order of ``sidecar["clients"]``.
        sidecar: dict or path to JSON
            ``{"clients": [{"id", "family", "budget"|"entropy_r", "weights_ref"}], "weights": [[...]]}``.
        schema: expected column layout; inferred from the header when omitted.
        split: keep only rows whose split column equals this value.
    """
    meta = sidecar if isinstance(sidecar, dict) else json.loads(Path(sidecar).read_text())
    entries = meta.get("clients")
    if not isinstance(entries, list):
        raise SchemaError("sidecar needs a 'clients' list")
    if len(entries) != len(client_files):
        raise SchemaError(f"{len(client_files)} files but {len(entries)} sidecar clients")
    weights = meta.get("weights", [])
    clients = []
    for entry, f in zip(entries, client_files):
        X, C, schema = _read_rows(Path(f), schema, split)
        fset, sense = _set_from_entry(entry, weights, schema.d)
        clients.append(ClientDataset(int(entry.get("id", len(clients))), X, C, fset, sense))
    return with_mixture_weights(clients)


def sidecar_for(clients: Sequence[ClientDataset], files: Optional[Sequence[str]] = None) -> dict:
    """Sidecar JSON describing the clients' feasible sets."""
    weights: list[list[float]] = []
    entries = []
    for k, c in enumerate(clients):
        fs = c.feasible_set
        entry: dict = {"id": c.client_id}
        if isinstance(fs, KnapsackPolytope):
            wl = fs.weights.tolist()
            if wl not in weights:
                weights.append(wl)
            entry.update(family="knapsack", budget=fs.budget, weights_ref=weights.index(wl))
        elif isinstance(fs, EntropySimplex):
            entry.update(family="portfolio", entropy_r=fs.threshold)
        else:
            raise SchemaError(f"no sidecar encoding for {fs.kind} sets")
        if files is not None:
            entry["file"] = str(files[k])
        entries.append(entry)
    return {"clients": entries, "weights": weights}


def write_federation(clients: Sequence[ClientDataset], out_dir, prefix: str = "client", test=None) -> Path:
    """Write every client CSV plus ``sidecar.json``; returns the sidecar path.

    When ``test`` clients are given, each file carries a split column with
    ``train`` and ``test`` rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, c in enumerate(clients):
        f = out / f"{prefix}_{c.client_id}.csv"
        if test is None:
            write_csv(c, f)
        else:
            t = test[k]
            both = ClientDataset(c.client_id, np.vstack([c.X, t.X]), np.vstack([c.C, t.C]), c.feasible_set, c.sense)
            write_csv(both, f, split=["train"] * c.n + ["test"] * t.n)
        files.append(f.name)
    side = out / "sidecar.json"
    side.write_text(json.dumps(sidecar_for(clients, files), indent=2))
    return side


def load_federation(sidecar_path, split: Optional[str] = None) -> list[ClientDataset]:
    """Load clients listed in a sidecar whose entries carry ``file`` paths."""
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    try:
        files = [sidecar_path.parent / e["file"] for e in meta["clients"]]
    except KeyError:
        raise SchemaError("sidecar entries need a 'file' field for load_federation") from None
    return load_csv(files, meta, split=split)
