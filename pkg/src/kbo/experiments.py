"""Experiment runner: seeded multi-run studies, success-rate summaries, and
parameter sweeps emitting plot-ready CSV.

Per-run seeds derive from the master seed through the documented splitting
function, so any run can be re-executed individually; summaries are computed
from the recorded traces, so regenerating them from the written CSV files
reproduces the JSON.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .core import ConfigurationError, KboConfig, RngStream, INIT_STREAM, derive_run_seed, ensemble_init
from .objectives import BENCHMARKS, Objective, benchmark
from .solver import DRIVERS, RunResult, check_success, read_trace_csv, write_trace_csv

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(KboConfig)}


@dataclass
class ExperimentSpec:
    """A seeded multi-run study of one driver on one objective."""

    objective: str
    dim: int
    config: KboConfig = field(default_factory=KboConfig)
    driver: str = "nanbu"
    runs: int = 10
    n_particles: int = 2000
    init: str = "uniform"
    init_low: float | None = None
    init_high: float | None = None
    init_mean: float = 0.0
    init_std: float = 1.0
    rescale: bool = True
    shift_seed: int | None = None
    seed: int = 0
    record_every: int = 1
    output_dir: str | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if self.driver not in DRIVERS:
            raise ConfigurationError(f"driver must be one of {sorted(DRIVERS)}")
        if self.objective not in BENCHMARKS:
            raise ConfigurationError(
                f"unknown objective {self.objective!r}; choose from {sorted(BENCHMARKS)}"
            )

    def build_objective(self) -> Objective:
        return benchmark(self.objective, self.dim, shift_seed=self.shift_seed)

    def init_bounds(self, objective: Objective):
        if self.init_low is not None and self.init_high is not None:
            return self.init_low, self.init_high
        if self.rescale:
            return -1.0, 1.0
        return objective.lower, objective.upper


@dataclass
class SweepSpec:
    """A grid of single-parameter variations of a base experiment. The
    parameter may be any scalar field of the config (e.g. sigma2) or of the
    experiment itself (e.g. n_particles)."""

    base: ExperimentSpec
    parameter: str
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ConfigurationError("sweep grid must be non-empty")
        if self.parameter not in _CONFIG_FIELDS and not hasattr(self.base, self.parameter):
            raise ConfigurationError(f"unknown sweep parameter {self.parameter!r}")

    def point(self, value) -> ExperimentSpec:
        if self.parameter in _CONFIG_FIELDS:
            cfg = replace(self.base.config, **{self.parameter: value})
            return replace(self.base, config=cfg)
        value = type(getattr(self.base, self.parameter))(value)
        return replace(self.base, **{self.parameter: value})


def execute_run(spec: ExperimentSpec, run_index: int) -> RunResult:
    """Execute one seeded run of a study; the run seed depends only on the
    master seed and the run index."""
    objective = spec.build_objective()
    run_seed = derive_run_seed(spec.seed, run_index)
    cfg = spec.config.with_seed(run_seed)
    lo, hi = spec.init_bounds(objective)
    if spec.init == "uniform":
        ens = ensemble_init(
            spec.n_particles, spec.dim, "uniform", lo=lo, hi=hi,
            rng=RngStream(run_seed, INIT_STREAM),
        )
    else:
        ens = ensemble_init(
            spec.n_particles, spec.dim, spec.init, mean=spec.init_mean,
            std=spec.init_std, rng=RngStream(run_seed, INIT_STREAM),
        )
    driver = DRIVERS[spec.driver]
    return driver(
        cfg, objective, ens, rescale=spec.rescale, record_every=spec.record_every,
        keep_ensemble=False,
    )


def _mean_or_none(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def summarize_rows(rows: list[dict], objective: Objective) -> dict:
    """Aggregate per-run rows (final consensus point, step count, recorded
    particle counts, termination) into the study summary. Error and final
    objective value are averaged over successful runs only."""
    per_run = []
    for r in rows:
        final = np.asarray(r["final_valpha"], dtype=float)
        success = None
        l2 = None
        if objective.minimizer is not None:
            success = check_success(final, objective.minimizer)
            l2 = float(np.linalg.norm(objective.minimizer - final))
        per_run.append(
            {
                "run": r["run"],
                "success": success,
                "iters": int(r["iters"]),
                "l2_error": l2,
                "final_fval": float(objective(final)),
                "avg_particles": float(r["avg_particles"]),
                "termination": r["termination"],
            }
        )
    succ = [p for p in per_run if p["success"]]
    summary = {
        "runs": len(per_run),
        "success_rate": (len(succ) / len(per_run)) if per_run and per_run[0]["success"] is not None else None,
        "mean_iters": _mean_or_none([p["iters"] for p in succ]),
        "mean_l2_error": _mean_or_none([p["l2_error"] for p in succ]),
        "mean_final_fval": _mean_or_none([p["final_fval"] for p in succ]),
        "mean_avg_particles": _mean_or_none([p["avg_particles"] for p in per_run]),
        "per_run": per_run,
    }
    return summary


def _row_from_result(run_index: int, result: RunResult) -> dict:
    return {
        "run": run_index,
        "final_valpha": result.trace.v_alpha[-1],
        "iters": result.wall_steps,
        "avg_particles": float(result.trace.n_particles.mean()),
        "termination": result.termination,
    }


def _row_from_csv(spec: ExperimentSpec, run_index: int, path: str) -> dict:
    data = read_trace_csv(path)
    if "v_alpha" not in data:
        raise ConfigurationError(f"{path} lacks consensus-point columns")
    steps = data["step"]
    max_steps = spec.config.max_iters
    if spec.driver == "bird":
        max_steps = spec.config.max_iters * spec.n_particles // 2
    iters = int(steps.max())
    return {
        "run": run_index,
        "final_valpha": data["v_alpha"][-1],
        "iters": iters,
        "avg_particles": float(data["n_particles"].mean()),
        "termination": "max_iters" if iters >= max_steps else "stalled",
    }


def trace_path(output_dir: str, run_index: int) -> str:
    return os.path.join(output_dir, f"run_{run_index:04d}.csv")


def summarize_from_csv(spec: ExperimentSpec, output_dir: str) -> dict:
    """Recompute the study summary from written trace files alone."""
    objective = spec.build_objective()
    rows = [
        _row_from_csv(spec, k, trace_path(output_dir, k)) for k in range(spec.runs)
    ]
    return summarize_rows(rows, objective)


def run_experiment(spec: ExperimentSpec) -> dict:
    """Execute all runs of a study (optionally in a worker pool), write per-run
    trace CSVs plus a summary JSON when an output directory is set, and return
    the summary."""
    objective = spec.build_objective()
    if spec.n_jobs != 1 and spec.runs > 1:
        results = Parallel(n_jobs=spec.n_jobs)(
            delayed(execute_run)(spec, k) for k in range(spec.runs)
        )
    else:
        results = [execute_run(spec, k) for k in range(spec.runs)]
    if spec.output_dir:
        os.makedirs(spec.output_dir, exist_ok=True)
        for k, res in enumerate(results):
            write_trace_csv(res.trace, trace_path(spec.output_dir, k), include_valpha=True)
        summary = summarize_from_csv(spec, spec.output_dir)
    else:
        summary = summarize_rows(
            [_row_from_result(k, r) for k, r in enumerate(results)], objective
        )
    summary["spec"] = {
        "objective": spec.objective,
        "dim": spec.dim,
        "driver": spec.driver,
        "seed": spec.seed,
        "n_particles": spec.n_particles,
        "rescale": spec.rescale,
        "config": dataclasses.asdict(spec.config),
    }
    if spec.output_dir:
        with open(os.path.join(spec.output_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary


def run_sweep(spec: SweepSpec) -> list[dict]:
    """Run the base study at every grid value; one summary row per point.
    Point k derives its runs from spawn key (k, run), so adding grid points
    does not change earlier ones."""
    rows = []
    for k, value in enumerate(spec.values):
        point = spec.point(value)
        point = replace(
            point,
            seed=derive_run_seed(spec.base.seed, k),
            output_dir=(
                os.path.join(spec.base.output_dir, f"point_{k:03d}")
                if spec.base.output_dir
                else None
            ),
        )
        summary = run_experiment(point)
        rows.append(
            {
                "parameter": spec.parameter,
                "value": value,
                "success_rate": summary["success_rate"],
                "mean_iters": summary["mean_iters"],
                "mean_l2_error": summary["mean_l2_error"],
            }
        )
    if spec.base.output_dir:
        os.makedirs(spec.base.output_dir, exist_ok=True)
        path = os.path.join(spec.base.output_dir, "sweep.csv")
        def cell(v):
            return "" if v is None else repr(v)

        with open(path, "w") as fh:
            fh.write("parameter,value,success_rate,mean_iters,mean_l2_error\n")
            for r in rows:
                fh.write(
                    f"{r['parameter']},{cell(r['value'])},{cell(r['success_rate'])},"
                    f"{cell(r['mean_iters'])},{cell(r['mean_l2_error'])}\n"
                )
    return rows
