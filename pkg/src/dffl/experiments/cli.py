"""Command-line entry point: ``dffl {generate,train,sweep,bounds,rademacher,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dffl.bounds import estimate_rademacher, write_bound_report
from dffl.datagen import generate, generate_test_set, load_federation, write_federation
from dffl.experiments.report import SUMMARY_FIELDS, load_rows, report, summary_rows, write_rows
from dffl.experiments.runner import ExperimentConfig, desk_config, federation_bounds, grid, sweep
from dffl.federation import train_federated, train_local
from dffl.model import save_params

log = logging.getLogger("dffl")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_config(args) -> ExperimentConfig:
    """Config file (or defaults, or the desk preset), then flag overrides.

    Grid flags contribute their first value here; ``sweep`` expands the rest.
    """
    cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else ExperimentConfig()
    family = args.family or cfg.gen.family
    balance = args.balance or cfg.gen.balance
    eta_obj = args.eta_obj[0] if args.eta_obj else cfg.gen.eta_obj
    eta_constr = args.eta_constr[0] if args.eta_constr else cfg.gen.eta_constr
    if args.desk_scale:
        cfg = desk_config(family, balance, eta_obj, eta_constr)
    else:
        cfg = replace(cfg, gen=replace(cfg.gen, family=family, balance=balance, eta_obj=eta_obj, eta_constr=eta_constr))
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    if getattr(args, "rounds", None):
        cfg = replace(cfg, fed=replace(cfg.fed, rounds=args.rounds))
    if getattr(args, "local_epochs", None):
        cfg = replace(cfg, fed=replace(cfg.fed, local_epochs=args.local_epochs))
    return cfg.validate()


def cmd_generate(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    for seed in cfg.seeds:
        gen = replace(cfg.gen, seed=seed)
        clients, _ = generate(gen)
        tests = generate_test_set(gen, cfg.test_size)
        side = write_federation(clients, out / f"seed{seed}", test=tests)
        print(side)
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    fed = replace(cfg.fed, seed=seed)
    if args.data:
        clients = load_federation(args.data, split="train" if args.split else None)
    else:
        clients, _ = generate(replace(cfg.gen, seed=seed))
    params, logs = train_federated(clients, fed)
    save_params(params, out / "federated.json")
    with (out / "rounds.jsonl").open("w", encoding="utf-8") as fh:
        for entry in logs:
            fh.write(json.dumps(entry.to_json()) + "\n")
    if args.local:
        for c in clients:
            save_params(train_local(c, fed)[0], out / f"local_{c.client_id}.json")
    print(out / "federated.json")
    return 0


def cmd_sweep(args) -> int:
    base = build_config(args)
    configs = grid(base, args.eta_obj or [base.gen.eta_obj], args.eta_constr or [base.gen.eta_constr])
    result = sweep(configs, max_workers=args.workers)
    report(result.results, args.out)
    for name, err in result.failures.items():
        print(f"FAILED {name}: {err}", file=sys.stderr)
    for res in result.results:
        s = res.summary()
        print(f"{s['config']}: prefer-fed={s['fraction_preferring_federation']:.2f} agreement={s['agreement_rate']:.2f}")
    return 0 if not result.failures and len(result.results) == len(configs) else 1


def cmd_bounds(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    gen, fed = replace(cfg.gen, seed=seed), replace(cfg.fed, seed=seed)
    clients, law = generate(gen)
    params, _ = train_federated(clients, fed)
    records, deltas = federation_bounds(clients, law, params, cfg, gen, fed)
    pair_terms = {(j, i): {"H_mean": h} for j, d in enumerate(deltas) for i, h in enumerate(d.per_client)}
    path = write_bound_report(records, out / "bounds.json", pair_terms)
    print(path)
    return 0


def cmd_rademacher(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.seeds:
        pool = np.random.default_rng([seed, 7]).standard_normal((max(cfg.rademacher.pool_size, max(args.n)), cfg.gen.p))
        for n in args.n:
            est = estimate_rademacher(
                pool, n, cfg.gen.d, draws=args.draws or cfg.rademacher.draws, epochs=args.epochs or cfg.rademacher.epochs,
                hidden_dim=cfg.fed.hidden_dim, tau=cfg.fed.tau, lr=cfg.fed.lr, grad_clip=cfg.fed.grad_clip, seed=seed,
            )
            rows.append({"seed": seed, "n": n, "estimate": est.estimate, "stderr": est.stderr})
            print(f"seed={seed} n={n}: {est.estimate:.3f}" + (f" +- {est.stderr:.3f}" if est.stderr is not None else ""))
    (out / "rademacher.json").write_text(json.dumps({"cap": cfg.fed.tau * np.sqrt(cfg.gen.d), "rows": rows}, indent=2))
    return 0


def cmd_report(args) -> int:
    src = Path(args.results)
    files = sorted(src.glob("results_*.csv"))
    rows = [r for f in files for r in load_rows(f) if r["seed"] == "mean"]
    path = write_rows(summary_rows(rows), Path(args.out) / "summary_table.csv", SUMMARY_FIELDS)
    print(path)
    return 0 if rows else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dffl", description="Decision-focused federated learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=_ints, help="comma-separated seeds")
        p.add_argument("--eta-obj", type=_floats, help="objective heterogeneity level(s), comma-separated")
        p.add_argument("--eta-constr", type=_floats, help="constraint heterogeneity level(s), comma-separated")
        p.add_argument("--family", choices=["knapsack", "portfolio"])
        p.add_argument("--balance", choices=["balanced", "imbalanced"])
        p.add_argument("--desk-scale", action="store_true", help="reduced sizes that run in minutes")
        p.add_argument("--rounds", type=int)
        p.add_argument("--local-epochs", type=int)
        return p

    common(sub.add_parser("generate", help="write synthetic client CSVs and sidecar")).set_defaults(func=cmd_generate)
    p = common(sub.add_parser("train", help="train a federated model (and optionally local ones)"))
    p.add_argument("--data", help="sidecar JSON of a CSV federation instead of synthetic data")
    p.add_argument("--split", action="store_true", help="use only rows labelled 'train'")
    p.add_argument("--local", action="store_true", help="also train per-client local models")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("sweep", help="heterogeneity grid: train, evaluate, bound, report"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    common(sub.add_parser("bounds", help="per-client federation-gain report")).set_defaults(func=cmd_bounds)
    p = common(sub.add_parser("rademacher", help="empirical Rademacher estimates"))
    p.add_argument("--n", type=_ints, default=[50, 100, 500])
    p.add_argument("--draws", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_rademacher)
    p = sub.add_parser("report", help="rebuild the summary table from results CSVs")
    p.add_argument("--results", required=True, help="directory with results_*.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
