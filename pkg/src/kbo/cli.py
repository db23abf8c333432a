"""Command-line experiment runner.

Subcommands: ``run`` (seeded multi-run study), ``sweep`` (single-parameter
grid), ``mltrain`` (shallow-net benchmark), ``diag`` (one run plus theory
diagnostics). A YAML config file can set any value; explicit flags override
the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import yaml

from .core import ConfigurationError, KboConfig
from .diagnostics import (
    decay_check,
    domain_energy_bounds,
    initial_weight_l1,
    per_sweep_macro_rate,
    per_sweep_micro_rate,
    theory_params,
)
from .experiments import ExperimentSpec, SweepSpec, execute_run, run_experiment, run_sweep
from .mlbench import KboTrainResult, idx_dataset, kbo_train, sgd_train, synth_blobs
from .objectives import BENCHMARKS, estimate_smoothness
from .solver import write_trace_csv

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(KboConfig)]


def _add_config_flags(parser: argparse.ArgumentParser):
    grp = parser.add_argument_group("dynamics configuration")
    grp.add_argument("--lambda1", type=float, default=None)
    grp.add_argument("--lambda2", type=float, default=None)
    grp.add_argument("--sigma1", type=float, default=None)
    grp.add_argument("--sigma2", type=float, default=None)
    grp.add_argument("--alpha", type=float, default=None)
    grp.add_argument("--beta", type=float, default=None)
    grp.add_argument("--epsilon", type=float, default=None)
    grp.add_argument("--diffusion-mode", choices=("isotropic", "anisotropic"), default=None)
    grp.add_argument("--n-stall", type=int, default=None)
    grp.add_argument("--delta-stall", type=float, default=None)
    grp.add_argument("--max-iters", type=int, default=None)
    grp.add_argument("--reduction-mu", type=float, default=None)
    grp.add_argument("--reduction-every", type=int, default=None)
    grp.add_argument("--n-min", type=int, default=None)


def _add_experiment_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML file mirroring the experiment fields")
    parser.add_argument("--objective", choices=sorted(BENCHMARKS), default=None)
    parser.add_argument("--dim", type=int, default=None)
    parser.add_argument("--driver", choices=("nanbu", "bird"), default=None)
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--n-particles", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--init", choices=("uniform", "gaussian"), default=None)
    parser.add_argument("--init-low", type=float, default=None)
    parser.add_argument("--init-high", type=float, default=None)
    parser.add_argument("--init-mean", type=float, default=None)
    parser.add_argument("--init-std", type=float, default=None)
    parser.add_argument("--shift-seed", type=int, default=None)
    parser.add_argument(
        "--no-rescale", action="store_true",
        help="run directly in the objective's native domain",
    )
    parser.add_argument("--record-every", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="parallel runs")
    _add_config_flags(parser)


def _load_yaml(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a mapping at the top level")
    return doc


def _build_spec(args) -> ExperimentSpec:
    doc = _load_yaml(args.config) if args.config else {}
    cfg_doc = dict(doc.get("config", {}))
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            cfg_doc[name] = flag
    if args.seed is not None:
        cfg_doc.setdefault("seed", args.seed)

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return doc.get(key, default)

    objective = pick(args.objective, "objective", None)
    dim = pick(args.dim, "dim", None)
    if objective is None or dim is None:
        raise ConfigurationError("an objective name and --dim are required")
    rescale = doc.get("rescale", True)
    if args.no_rescale:
        rescale = False
    return ExperimentSpec(
        objective=objective,
        dim=int(dim),
        config=KboConfig(**cfg_doc),
        driver=pick(args.driver, "driver", "nanbu"),
        runs=int(pick(args.runs, "runs", 10)),
        n_particles=int(pick(args.n_particles, "n_particles", 2000)),
        init=pick(args.init, "init", "uniform"),
        init_low=pick(args.init_low, "init_low", None),
        init_high=pick(args.init_high, "init_high", None),
        init_mean=float(pick(args.init_mean, "init_mean", 0.0)),
        init_std=float(pick(args.init_std, "init_std", 1.0)),
        rescale=bool(rescale),
        shift_seed=pick(args.shift_seed, "shift_seed", None),
        seed=int(pick(args.seed, "seed", 0)),
        record_every=int(pick(args.record_every, "record_every", 1)),
        output_dir=pick(args.out, "output_dir", None),
        n_jobs=int(pick(args.workers, "n_jobs", 1)),
    )


def _cmd_run(args) -> int:
    spec = _build_spec(args)
    summary = run_experiment(spec)
    json.dump(summary, sys.stdout, indent=2)
    print()
    return 0


def _cmd_sweep(args) -> int:
    spec = _build_spec(args)
    if args.linspace:
        lo, hi, num = args.linspace
        values = tuple(np.linspace(float(lo), float(hi), int(num)))
    elif args.values:
        values = tuple(float(v) for v in args.values.split(","))
    else:
        raise ConfigurationError("sweep needs --values or --linspace")
    rows = run_sweep(SweepSpec(base=spec, parameter=args.param, values=values))
    json.dump(rows, sys.stdout, indent=2)
    print()
    return 0


def _cmd_diag(args) -> int:
    spec = _build_spec(args)
    objective = spec.build_objective()
    result = execute_run(spec, 0)
    e_lower, e_upper = domain_energy_bounds(objective, n_samples=args.samples, rng=spec.seed)
    smooth = objective.smoothness or estimate_smoothness(objective, rng=spec.seed)
    v0 = float(result.trace.variance[0])
    # mean initial weight over a fresh sample of the initial law
    lo, hi = spec.init_bounds(objective)
    from .core import RngStream, ensemble_init

    probe = ensemble_init(
        max(spec.n_particles, 1000), spec.dim, "uniform", lo=lo, hi=hi,
        rng=RngStream(spec.seed, 17),
    )
    from .solver import _Frame

    frame = _Frame(objective, spec.rescale)
    energies = frame.energy(probe.positions)
    w0 = initial_weight_l1(energies, spec.config.beta)
    report = {
        "objective": spec.objective,
        "dim": spec.dim,
        "termination": result.termination,
        "iters": result.wall_steps,
        "final_estimate": [float(v) for v in result.final_estimate],
        "final_variance": float(result.trace.variance[-1]),
        "energy_bounds": [e_lower, e_upper],
        "smoothness": {"c1": smooth.c1, "c2": smooth.c2, "estimated": smooth.estimated},
    }
    if w0 > 0:
        tp = theory_params(
            spec.config, e_upper, e_lower, smooth.c1, smooth.c2, v0, w0, spec.dim
        )
        report["theory"] = tp.to_dict()
        micro = per_sweep_micro_rate(spec.config, tp.c_beta, tp.kappa)
        macro = per_sweep_macro_rate(spec.config, tp.c_alpha, tp.kappa)
        report["per_sweep_rates"] = {"micro": micro, "macro": macro}
        report["decay_check"] = {
            "micro_rate_slack_0.5": decay_check(result, micro, 0.5) if micro > 0 else None,
            "macro_rate_slack_0.5": decay_check(result, macro, 0.5) if macro > 0 else None,
        }
    else:
        report["theory"] = None
        report["note"] = "initial weight mass underflowed; use a smaller beta for diagnostics"
    if spec.output_dir:
        os.makedirs(spec.output_dir, exist_ok=True)
        write_trace_csv(result.trace, os.path.join(spec.output_dir, "run_0000.csv"))
        with open(os.path.join(spec.output_dir, "diagnostics.json"), "w") as fh:
            json.dump(report, fh, indent=2)
    json.dump(report, sys.stdout, indent=2)
    print()
    return 0


def _cmd_mltrain(args) -> int:
    if args.dataset == "blobs":
        train, val = synth_blobs(args.classes, args.per_class, args.features, args.sep, rng=args.seed)
    else:
        if not (args.idx_images and args.idx_labels):
            raise ConfigurationError("idx dataset needs --idx-images and --idx-labels")
        train = idx_dataset(args.idx_images, args.idx_labels, "train")
        if args.idx_val_images and args.idx_val_labels:
            val = idx_dataset(
                args.idx_val_images, args.idx_val_labels, "validation",
                stats=(train.feature_mean, train.feature_scale),
            )
        else:
            val = None
    if args.trainer == "sgd":
        result = sgd_train(
            train,
            learning_rate=args.learning_rate,
            batch_size=args.data_batch,
            epochs=args.epochs,
            rng=args.seed,
            validation=val,
        )
    else:
        cfg = KboConfig(
            lambda1=args.lambda1 if args.lambda1 is not None else 1.0,
            lambda2=args.lambda2 if args.lambda2 is not None else 1.0,
            sigma1=args.sigma1 if args.sigma1 is not None else 1.0,
            sigma2=args.sigma2 if args.sigma2 is not None else 1.0,
            alpha=args.alpha if args.alpha is not None else 5e6,
            beta=args.beta if args.beta is not None else 5e6,
            epsilon=args.epsilon if args.epsilon is not None else 0.1,
            reduction_mu=args.reduction_mu if args.reduction_mu is not None else 0.0,
            seed=args.seed,
        )
        result = kbo_train(
            train,
            cfg,
            n_particles=args.n_particles,
            epochs=args.epochs,
            data_batch=args.data_batch,
            particle_batch=args.particle_batch,
            validation=val,
        )
    report = {
        "trainer": args.trainer,
        "epochs": args.epochs,
        "accuracy": [float(a) for a in result.accuracy],
        "final_accuracy": float(result.accuracy[-1]),
    }
    if isinstance(result, KboTrainResult):
        report["particle_counts"] = [int(c) for c in result.particle_counts]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "mltrain.json"), "w") as fh:
            json.dump(report, fh, indent=2)
        with open(os.path.join(args.out, "accuracy.csv"), "w") as fh:
            fh.write("epoch,accuracy\n")
            for e, a in enumerate(result.accuracy, start=1):
                fh.write(f"{e},{float(a)!r}\n")
    json.dump(report, sys.stdout, indent=2)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kbo",
        description="Gradient-free global optimization by stochastic binary particle collisions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a seeded multi-run study")
    _add_experiment_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid over one scalar parameter")
    _add_experiment_flags(p_sweep)
    p_sweep.add_argument("--param", required=True, help="config or experiment field to vary")
    p_sweep.add_argument("--values", help="comma-separated grid values")
    p_sweep.add_argument("--linspace", nargs=3, metavar=("LO", "HI", "NUM"), help="linear grid")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_diag = sub.add_parser("diag", help="one run plus convergence-theory diagnostics")
    _add_experiment_flags(p_diag)
    p_diag.add_argument("--samples", type=int, default=100_000,
                        help="domain samples for energy bounds")
    p_diag.set_defaults(func=_cmd_diag)

    p_ml = sub.add_parser("mltrain", help="train the shallow softmax/ReLU net")
    p_ml.add_argument("--dataset", choices=("blobs", "idx"), default="blobs")
    p_ml.add_argument("--classes", type=int, default=3)
    p_ml.add_argument("--per-class", type=int, default=200)
    p_ml.add_argument("--features", type=int, default=2)
    p_ml.add_argument("--sep", type=float, default=4.0)
    p_ml.add_argument("--idx-images")
    p_ml.add_argument("--idx-labels")
    p_ml.add_argument("--idx-val-images")
    p_ml.add_argument("--idx-val-labels")
    p_ml.add_argument("--trainer", choices=("kbo", "sgd"), default="kbo")
    p_ml.add_argument("--epochs", type=int, default=20)
    p_ml.add_argument("--data-batch", type=int, default=128)
    p_ml.add_argument("--particle-batch", type=int, default=None)
    p_ml.add_argument("--n-particles", type=int, default=100)
    p_ml.add_argument("--learning-rate", type=float, default=0.1)
    p_ml.add_argument("--seed", type=int, default=0)
    p_ml.add_argument("--out", default=None)
    _add_config_flags(p_ml)
    p_ml.set_defaults(func=_cmd_mltrain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
