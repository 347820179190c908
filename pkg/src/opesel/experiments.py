"""Seeded simulation runners behind the ``opesel`` command.

Work is split into one task per simulation seed. Tasks are independent and
run either in-process or in a process pool; results are merged in seed order
so the output does not depend on the worker count.
"""
from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .bandit import (
    MixturePolicy, SyntheticEnvironment, behavior_mixture, sample_logged_data, softmax_policy,
    true_policy_value,
)
from .baseline import heuristic_estimate_mses
from .config import ExperimentConfig
from .estimators import make_candidate_set
from .metrics import relative_regret_e, relative_regret_p, spearman_rank_correlation
from .pasif import pasif_estimate_mses
from .selection import OracleTable, build_ops_candidates, ground_truth_mses, ops_select, select_estimator
from .seeding import make_rng

WORKERS_ENV = "OPESEL_WORKERS"

SELECT_COLUMNS = (
    "method", "beta_e", "seed", "selected_candidate", "est_mse_selected", "true_mse_selected",
    "true_mse_best", "rregret_e", "rank_corr_e", "error",
)
OPS_COLUMNS = (
    "method", "seed", "n_candidates", "selected_policy", "true_value_selected", "true_value_best",
    "rregret_p", "rank_corr_p", "error",
)
ORACLE_COLUMNS = ("beta_e", "candidate", "true_value", "true_mse")
AGGREGATE_COLUMNS = ("method", "group", "metric", "n", "n_errors", "mean", "sd")


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "nan" if np.isnan(value) else format(float(value), ".12g")
    return str(value)


def to_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _environment(cfg: ExperimentConfig) -> tuple[SyntheticEnvironment, MixturePolicy]:
    env = SyntheticEnvironment(cfg.environment.seed, cfg.environment.dim, cfg.environment.n_actions)
    return env, behavior_mixture(env, cfg.behavior.betas, cfg.behavior.weights)


def _run_tasks(fn: Callable, args: Sequence, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        with threadpool_limits(1):
            return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args)), initializer=_init_worker) as pool:
        return list(pool.map(fn, args))


def _init_worker() -> None:
    threadpool_limits(1)


def _error_text(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


# ---------------------------------------------------------------- estimator selection


def selection_oracle(cfg: ExperimentConfig) -> OracleTable:
    env, behavior = _environment(cfg)
    policies = [softmax_policy(env, b) for b in cfg.evaluation.betas]
    return ground_truth_mses(
        make_candidate_set(), policies, env, behavior, cfg.behavior.n,
        cfg.oracle.n_reps, cfg.oracle.n_mc, cfg.oracle.seed, cfg.pasif.n_folds,
    )


@dataclass(frozen=True)
class _SelectTask:
    cfg: ExperimentConfig
    sim: int
    oracle_mse: np.ndarray


def _select_rows(task: _SelectTask) -> list[dict]:
    cfg, sim = task.cfg, task.sim
    env, behavior = _environment(cfg)
    candidates = make_candidate_set()
    seed = cfg.run.base_seed + sim
    data = sample_logged_data(env, behavior, cfg.behavior.n, make_rng("simulation", seed))
    rows = []
    for method in cfg.methods:
        shared = None
        if method == "heuristic":
            try:
                shared = heuristic_estimate_mses(candidates, data, behavior, cfg.heuristic).mse
            except Exception as exc:  # recorded per row, run continues
                shared = exc
        for p, beta in enumerate(cfg.evaluation.betas):
            row = {"method": method, "beta_e": beta, "seed": seed}
            try:
                if isinstance(shared, Exception):
                    raise shared
                if method == "pasif":
                    est = pasif_estimate_mses(
                        candidates, softmax_policy(env, beta), behavior, data, cfg.pasif
                    ).mse
                else:
                    est = shared
                true = task.oracle_mse[p]
                m = select_estimator(est)
                row.update(
                    selected_candidate=candidates[m].name,
                    est_mse_selected=float(est[m]),
                    true_mse_selected=float(true[m]),
                    true_mse_best=float(true.min()),
                    rregret_e=relative_regret_e(true, m),
                    rank_corr_e=spearman_rank_correlation(true, est),
                    error="",
                )
            except Exception as exc:
                row["error"] = _error_text(exc)
            rows.append(row)
    return rows


def run_estimator_selection(cfg: ExperimentConfig, workers: int = 1,
                            oracle: OracleTable | None = None) -> list[dict]:
    """Detail rows, one per (method, evaluation beta, simulation seed)."""
    if cfg.evaluation.ops or not cfg.evaluation.betas:
        raise ValueError("estimator selection needs a list of evaluation betas")
    oracle = oracle if oracle is not None else selection_oracle(cfg)
    tasks = [_SelectTask(cfg, sim, oracle.mse) for sim in range(cfg.run.n_sims)]
    per_sim = _run_tasks(_select_rows, tasks, workers)
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows = [r for rows in per_sim for r in rows]
    beta_index = {b: i for i, b in enumerate(cfg.evaluation.betas)}
    return sorted(rows, key=lambda r: (order[r["method"]], beta_index[r["beta_e"]], r["seed"]))


# ---------------------------------------------------------------- policy selection


@dataclass(frozen=True)
class _OpsTask:
    cfg: ExperimentConfig
    sim: int


def _ops_rows(task: _OpsTask) -> list[dict]:
    cfg, sim = task.cfg, task.sim
    env, behavior = _environment(cfg)
    candidates = make_candidate_set()
    seed = cfg.run.base_seed + sim
    train = sample_logged_data(env, behavior, cfg.evaluation.train_n, make_rng("ops-train", seed))
    policies = build_ops_candidates(env, train, seed, cfg.evaluation.temperatures)
    values = np.array([
        true_policy_value(env, pi, cfg.oracle.n_mc, make_rng("ops-value", cfg.oracle.seed, seed))
        for pi in policies
    ])
    data = sample_logged_data(env, behavior, cfg.behavior.n, make_rng("simulation", seed))
    rows = []
    for method in cfg.methods:
        row = {"method": method, "seed": seed, "n_candidates": len(policies)}
        try:
            if method == "pasif":
                def mse_fn(pi):
                    return pasif_estimate_mses(candidates, pi, behavior, data, cfg.pasif).mse
            else:
                shared = heuristic_estimate_mses(candidates, data, behavior, cfg.heuristic).mse

                def mse_fn(pi):
                    return shared
            res = ops_select(policies, mse_fn, candidates, data, make_rng("ops-crossfit", seed),
                             cfg.pasif.n_folds)
            row.update(
                selected_policy=policies[res.chosen].name,
                true_value_selected=float(values[res.chosen]),
                true_value_best=float(values.max()),
                rregret_p=relative_regret_p(values, res.chosen),
                rank_corr_p=spearman_rank_correlation(values, res.estimated_values),
                error="",
            )
        except Exception as exc:
            row["error"] = _error_text(exc)
        rows.append(row)
    return rows


def run_policy_selection(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    """Detail rows, one per (method, simulation seed)."""
    tasks = [_OpsTask(cfg, sim) for sim in range(cfg.run.n_sims)]
    per_sim = _run_tasks(_ops_rows, tasks, workers)
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows = [r for rows in per_sim for r in rows]
    return sorted(rows, key=lambda r: (order[r["method"]], r["seed"]))


# ---------------------------------------------------------------- aggregation and output


def aggregate(rows: Sequence[dict], group_key: str | None, metrics: Sequence[str]) -> list[dict]:
    """Mean and sample SD (ddof=1) of each metric per (method, group), over error-free rows."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r.get(group_key) if group_key else ""), []).append(r)
    out = []
    for (method, group), members in groups.items():
        ok = [r for r in members if not r.get("error")]
        for metric in metrics:
            vals = np.array([float(r[metric]) for r in ok])
            out.append({
                "method": method,
                "group": group,
                "metric": metric,
                "n": len(vals),
                "n_errors": len(members) - len(ok),
                "mean": float(vals.mean()) if len(vals) else float("nan"),
                "sd": float(vals.std(ddof=1)) if len(vals) > 1 else float("nan"),
            })
    return out


def oracle_rows(cfg: ExperimentConfig, oracle: OracleTable) -> list[dict]:
    names = [c.name for c in make_candidate_set()]
    return [
        {"beta_e": beta, "candidate": name, "true_value": float(oracle.values[p]),
         "true_mse": float(oracle.mse[p, m])}
        for p, beta in enumerate(cfg.evaluation.betas)
        for m, name in enumerate(names)
    ]


def manifest(cfg: ExperimentConfig, command: str, workers: int, wall: float, files: dict) -> dict:
    return {
        "command": command,
        "config_source": cfg.source,
        "config": cfg.as_dict(),
        "seeds": [cfg.run.base_seed + s for s in range(cfg.run.n_sims)],
        "workers": workers,
        "wall_time_seconds": round(wall, 3),
        "outputs": files,
        "versions": {
            "opesel": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def write_outputs(out_dir: Path, prefix: str, tables: dict[str, tuple[Sequence[str], list[dict]]],
                  meta: dict) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, (columns, rows) in tables.items():
        path = out_dir / f"{prefix}{name}.csv"
        path.write_text(to_csv(columns, rows))
        files[name] = str(path)
    meta = dict(meta, outputs=files)
    (out_dir / f"{prefix}manifest.json").write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    return files


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, range)):
        return list(obj)
    return str(obj)


def execute(command: str, cfg: ExperimentConfig, out_dir: str | Path | None = None,
            workers: int | None = None, strict_alg1: bool = False) -> tuple[int, dict[str, str]]:
    """Run one CLI command end to end; return (number of error rows, written files)."""
    workers = workers or cfg.run.workers or default_workers()
    if strict_alg1:
        cfg = replace(cfg, pasif=replace(cfg.pasif, strict_alg1=True))
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    prefix = cfg.output.prefix or f"{command}_"
    start = time.perf_counter()
    if command == "select":
        oracle = selection_oracle(cfg)
        rows = run_estimator_selection(cfg, workers, oracle)
        tables = {
            "detail": (SELECT_COLUMNS, rows),
            "aggregate": (AGGREGATE_COLUMNS, aggregate(rows, "beta_e", ("rregret_e", "rank_corr_e"))),
            "oracle": (ORACLE_COLUMNS, oracle_rows(cfg, oracle)),
        }
    elif command == "ops":
        rows = run_policy_selection(cfg, workers)
        tables = {
            "detail": (OPS_COLUMNS, rows),
            "aggregate": (AGGREGATE_COLUMNS, aggregate(rows, None, ("rregret_p", "rank_corr_p"))),
        }
    elif command == "oracle":
        rows = oracle_rows(cfg, selection_oracle(cfg))
        tables = {"detail": (ORACLE_COLUMNS, rows)}
        rows = []
    else:
        raise ValueError(f"unknown command {command!r}")
    n_errors = sum(1 for r in rows if r.get("error"))
    meta = manifest(cfg, command, workers, time.perf_counter() - start, {})
    meta["n_error_rows"] = n_errors
    files = write_outputs(out, prefix, tables, meta)
    return n_errors, files
