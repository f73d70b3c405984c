import json
import math
from dataclasses import replace

import numpy as np
import pytest

from dffl.datagen import ClientDataset, GenConfig, generate, generate_test_set
from dffl.errors import ConfigError
from dffl.experiments import runner
from dffl.experiments.cli import main
from dffl.experiments.report import SUMMARY_FIELDS, load_rows, report, summary_rows, write_rows
from dffl.experiments.runner import (
    ROW_FIELDS,
    ExperimentConfig,
    RademacherConfig,
    evaluate,
    fg_agreement,
    grid,
    run_config,
    sweep,
)
from dffl.federation import FedConfig, train_federated
from dffl.geometry import min_oracle
from dffl.model import init_params

TINY = ExperimentConfig(
    gen=GenConfig(p=3, d=4, n=30, m=3, degree=2, noise=0.5),
    fed=FedConfig(rounds=2, local_epochs=1, hidden_dim=8),
    seeds=(0, 1),
    test_size=30,
    pair_samples=10,
    rademacher=RademacherConfig(draws=2, epochs=5, pool_size=60),
)

TINY_JSON = {
    "gen": {"p": 3, "d": 4, "n": 30, "m": 3, "degree": 2},
    "fed": {"rounds": 2, "local_epochs": 1, "hidden_dim": 8},
    "test_size": 30,
    "pair_samples": 10,
    "rademacher": {"draws": 2, "epochs": 5, "pool_size": 60},
}


@pytest.fixture(scope="module")
def tiny_result():
    return run_config(TINY)


def test_config_round_trip_and_validation():
    again = ExperimentConfig.from_dict(json.loads(json.dumps(TINY.to_dict())))
    assert again == TINY and again.config_hash() == TINY.config_hash()
    assert TINY.label == "knapsack-balanced-obj0-constr0"
    with pytest.raises(ConfigError):
        replace(TINY, seeds=()).validate()
    with pytest.raises(ConfigError):
        replace(TINY, test_size=2).validate()


# -- evaluation ---------------------------------------------------------------


@pytest.fixture(scope="module")
def test_client():
    return generate_test_set(TINY.gen, 60)[0]


@pytest.mark.parametrize("family", ["knapsack", "portfolio"])
def test_perfect_predictor_has_zero_regret(family):
    gen = replace(TINY.gen, family=family)
    client = generate_test_set(gen, 60)[0]
    params = init_params(3, 8, 4, seed=0)
    ev = evaluate(params, client, predictions=client.C)
    assert ev.mean_regret == pytest.approx(0.0, abs=1e-9)
    assert ev.relative_regret == pytest.approx(0.0, abs=1e-9)
    assert ev.mse == 0.0 and ev.failures == 0


def test_scaled_costs_have_zero_regret_despite_mse(test_client):
    params = init_params(3, 8, 4, seed=0)
    ev = evaluate(params, test_client, predictions=3.0 * test_client.C)
    assert ev.mean_regret == pytest.approx(0.0, abs=1e-9)
    assert ev.mse > 1.0


def test_relative_regret_invariant_to_common_rescaling(test_client):
    params = init_params(3, 8, 4, seed=1)
    preds = np.random.default_rng(0).normal(size=test_client.C.shape) + test_client.C
    alpha = 2.5
    scaled = ClientDataset(0, test_client.X, alpha * test_client.C, test_client.feasible_set, test_client.sense)
    s = test_client.sense
    for c_hat in preds:
        w1 = min_oracle(test_client.feasible_set, s * c_hat).w
        w2 = min_oracle(test_client.feasible_set, s * alpha * c_hat).w
        assert np.array_equal(w1, w2)
    base = evaluate(params, test_client, predictions=preds)
    other = evaluate(params, scaled, predictions=alpha * preds)
    assert other.relative_regret == pytest.approx(base.relative_regret, rel=1e-12)


def test_evaluate_rejects_empty_client(test_client):
    empty = ClientDataset(0, test_client.X[:0], test_client.C[:0], test_client.feasible_set, test_client.sense)
    with pytest.raises(ValueError):
        evaluate(init_params(3, 8, 4, seed=0), empty)


def test_evaluation_reproducible(test_client):
    clients, _ = generate(TINY.gen)
    p1, _ = train_federated(clients, TINY.fed)
    p2, _ = train_federated(clients, TINY.fed)
    assert evaluate(p1, test_client) == evaluate(p2, test_client)


# -- run_config ---------------------------------------------------------------


def test_run_config_rows(tiny_result):
    res = tiny_result
    assert len(res.seed_rows) == 6 and len(res.rows) == 3
    for row in res.seed_rows + res.rows:
        assert set(ROW_FIELDS) <= set(row)
        assert row["fg_helps"] == (row["fg_ratio"] > 1) == (row["fg_difference"] > 0)
        assert row["fed_relative_regret"] >= 0 and row["local_relative_regret"] >= 0
        assert row["local_bound"] == pytest.approx(2 * row["eps_j"])
        assert not row["delta_substituted"]  # equal budgets: exact zero shape distance
    assert all(r["seed"] == "mean" for r in res.rows)
    assert 0 <= res.fraction_preferring_federation <= 1
    assert 0 <= res.agreement_rate <= 1
    assert set(res.round_logs) == {0, 1}
    mean0 = np.mean([r["fed_regret"] for r in res.seed_rows if r["client_id"] == 0])
    assert res.rows[0]["fed_regret"] == pytest.approx(mean0)


def test_run_config_is_deterministic(tiny_result):
    again = run_config(TINY)
    assert again.seed_rows == tiny_result.seed_rows


def test_failed_seed_recorded(monkeypatch):
    real = runner.run_seed

    def flaky(config, seed):
        if seed == 1:
            raise ValueError("boom")
        return real(config, seed)

    monkeypatch.setattr(runner, "run_seed", flaky)
    res = run_config(TINY)
    assert res.failed_seeds == {1: "boom"} and {r["seed"] for r in res.seed_rows} == {0}
    with pytest.raises(RuntimeError, match="every seed failed"):
        run_config(replace(TINY, seeds=(1,)))


# -- sweep --------------------------------------------------------------------


def test_sweep_cardinality_and_repeatability():
    configs = grid(replace(TINY, seeds=(0, 1)), (0.0, 0.5), (0.0, 1.0))
    assert len(configs) == 4
    first = sweep(configs)
    assert not first.failures and len(first.rows) == 4 * TINY.gen.m
    second = sweep(configs)
    assert first.rows == second.rows


def test_sweep_isolates_failed_config(monkeypatch):
    real = runner.run_seed

    def flaky(config, seed):
        if config.gen.eta_obj > 0:
            raise ValueError("bad config")
        return real(config, seed)

    monkeypatch.setattr(runner, "run_seed", flaky)
    configs = grid(replace(TINY, seeds=(0,)), (0.0, 1.0))
    out = sweep(configs)
    assert len(out.results) == 1 and len(out.failures) == 1
    assert len(out.rows) == TINY.gen.m
    assert all(r["eta_obj"] == 0.0 for r in out.rows)


def test_sweep_process_pool_matches_serial():
    configs = grid(replace(TINY, seeds=(0,)), (0.0, 0.5))
    assert sweep(configs, max_workers=2).rows == sweep(configs).rows


# -- agreement ----------------------------------------------------------------


def test_fg_agreement_conventions():
    rows = [{"fg_difference": 1.0, "regret_difference": 2.0}, {"fg_difference": -1.0, "regret_difference": -0.5}]
    assert fg_agreement(rows) == 1.0
    assert fg_agreement([{"fg_difference": 0.0, "regret_difference": 0.3}]) == 1.0
    assert fg_agreement([{"fg_difference": 0.0, "regret_difference": -0.3}]) == 0.0
    assert fg_agreement([{"fg_difference": -2.0, "regret_difference": 0.0}]) == 0.0
    assert fg_agreement(rows + [{"fg_difference": 1.0, "regret_difference": -1.0}]) == pytest.approx(2 / 3)
    assert math.isnan(fg_agreement([]))


# -- report -------------------------------------------------------------------


def test_empty_table_is_header_only(tmp_path):
    path = write_rows([], tmp_path / "r.csv")
    assert path.read_text().strip() == ",".join(ROW_FIELDS)
    assert load_rows(path) == []


def test_csv_round_trip(tmp_path, tiny_result):
    rows = tiny_result.seed_rows + tiny_result.rows
    back = load_rows(write_rows(rows, tmp_path / "r.csv"))
    for a, b in zip(rows, back):
        for k in ROW_FIELDS:
            if isinstance(a[k], float):
                assert b[k] == pytest.approx(a[k], abs=1e-12)
            else:
                assert b[k] == a[k]


def test_summary_sorted_by_improvement():
    rows = [
        {"config": "x", "client_id": k, "local_regret": 1, "fed_regret": 0.5, "regret_difference": 0.5, "fg_difference": 0.1, "improvement_pct": v}
        for k, v in enumerate([-5.0, 10.0, 2.5])
    ]
    out = summary_rows(rows)
    assert [r["Delta_j_pct"] for r in out] == [10.0, 2.5, -5.0]
    assert tuple(out[0]) == SUMMARY_FIELDS


def test_report_files(tmp_path, tiny_result):
    paths = report([tiny_result], tmp_path)
    h = TINY.config_hash()
    names = {p.name for p in paths}
    assert {f"results_{h}.csv", f"clients_{h}.json", f"rounds_{h}.jsonl", "summary.json", "summary_table.csv"} == names
    assert len(load_rows(tmp_path / f"results_{h}.csv")) == 9
    assert len(load_rows(tmp_path / "summary_table.csv")) == 3
    lines = (tmp_path / f"rounds_{h}.jsonl").read_text().splitlines()
    assert len(lines) == 2 * TINY.fed.rounds and json.loads(lines[0])["seed"] == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["configs"][0]["config_hash"] == h


# -- command line -------------------------------------------------------------


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY_JSON))
    return path


def test_cli_generate_and_train_from_csv(tmp_path, config_file):
    out = tmp_path / "data"
    assert main(["generate", "--config", str(config_file), "--out", str(out), "--seeds", "0"]) == 0
    side = out / "seed0" / "sidecar.json"
    assert side.exists()
    train = tmp_path / "train"
    code = main(["train", "--config", str(config_file), "--out", str(train), "--data", str(side), "--split", "--local"])
    assert code == 0
    assert (train / "federated.json").exists() and (train / "local_2.json").exists()
    assert len((train / "rounds.jsonl").read_text().splitlines()) == 2


def test_cli_sweep_then_report(tmp_path, config_file):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", str(config_file), "--out", str(out), "--seeds", "0", "--eta-obj", "0,0.5", "--rounds", "1"])
    assert code == 0
    assert len(list(out.glob("results_*.csv"))) == 2
    rep = tmp_path / "rep"
    rep.mkdir()
    assert main(["report", "--results", str(out), "--out", str(rep)]) == 0
    assert len(load_rows(rep / "summary_table.csv")) == 2 * 3


def test_cli_sweep_failure_exit_code(tmp_path, config_file, monkeypatch):
    def broken(config, seed):
        raise ValueError("nope")

    monkeypatch.setattr(runner, "run_seed", broken)
    assert main(["sweep", "--config", str(config_file), "--out", str(tmp_path / "s"), "--seeds", "0"]) == 1


def test_cli_report_without_rows_fails(tmp_path):
    assert main(["report", "--results", str(tmp_path), "--out", str(tmp_path)]) == 1


def test_cli_bounds_and_rademacher(tmp_path, config_file):
    assert main(["bounds", "--config", str(config_file), "--out", str(tmp_path), "--seeds", "0"]) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert set(doc["clients"]) == {"0", "1", "2"} and "0,1" in doc["pairs"]
    code = main(["rademacher", "--config", str(config_file), "--out", str(tmp_path), "--seeds", "0", "--n", "10,20", "--draws", "1"])
    assert code == 0
    rad = json.loads((tmp_path / "rademacher.json").read_text())
    assert [r["n"] for r in rad["rows"]] == [10, 20]
    assert all(r["estimate"] <= rad["cap"] and r["stderr"] is None for r in rad["rows"])


def test_cli_rejects_bad_arguments(tmp_path):
    with pytest.raises(SystemExit):
        main(["sweep", "--out", str(tmp_path), "--family", "lp"])
