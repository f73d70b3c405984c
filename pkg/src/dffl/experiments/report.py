"""Result serialization: per-config CSV, per-client JSON, summary table and round logs."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dffl.experiments.runner import ROW_FIELDS, ExperimentResult

SUMMARY_FIELDS = ("config", "client_id", "DFL_LOC", "DFL_FED", "Delta_j", "FG_Delta", "Delta_j_pct")


def _cell(value) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(rows: Iterable[dict], path, fields: Sequence[str] = ROW_FIELDS) -> Path:
    """CSV with a fixed header; floats are written losslessly. No rows gives a header-only file."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_cell(row[k]) for k in fields])
    return path


def _parse(text: str):
    if text in ("True", "False"):
        return text == "True"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_rows(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def summary_rows(rows: Iterable[dict]) -> list[dict]:
    """Seed-averaged rows in the local/federated/gap/certificate layout, best improvement first."""
    out = [
        {
            "config": r["config"],
            "client_id": r["client_id"],
            "DFL_LOC": r["local_regret"],
            "DFL_FED": r["fed_regret"],
            "Delta_j": r["regret_difference"],
            "FG_Delta": r["fg_difference"],
            "Delta_j_pct": r["improvement_pct"],
        }
        for r in rows
    ]
    return sorted(out, key=lambda r: -r["Delta_j_pct"])


def report(results: Sequence[ExperimentResult], out_dir) -> list[Path]:
    """Write every artifact for ``results`` into ``out_dir`` and return the paths written.

    Per config: ``results_<hash>.csv`` (per-seed rows followed by the
    seed-averaged rows), ``clients_<hash>.json`` and ``rounds_<hash>.jsonl``.
    Across configs: ``summary.json`` and ``summary_table.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summaries = []
    averaged = []
    for res in results:
        h = res.config.config_hash()
        written.append(write_rows(list(res.seed_rows) + list(res.rows), out / f"results_{h}.csv"))
        clients = {str(r["client_id"]): r for r in res.rows}
        path = out / f"clients_{h}.json"
        path.write_text(json.dumps({"config": res.config.to_dict(), "clients": clients}, indent=2))
        written.append(path)
        path = out / f"rounds_{h}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for seed, logs in res.round_logs.items():
                for entry in logs:
                    fh.write(json.dumps({"seed": seed, **entry.to_json()}) + "\n")
        written.append(path)
        summaries.append(res.summary())
        averaged.extend(res.rows)
    path = out / "summary.json"
    path.write_text(json.dumps({"configs": summaries}, indent=2))
    written.append(path)
    written.append(write_rows(summary_rows(averaged), out / "summary_table.csv", SUMMARY_FIELDS))
    return written
