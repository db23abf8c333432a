"""Gradient-free global optimization through stochastic binary particle
collisions, with synchronous (Nanbu-style) and asynchronous (Bird-style)
Monte Carlo drivers, a benchmark/experiment harness, and runnable encodings
of the method's convergence conditions."""

from .core import (
    ConfigurationError,
    EnergyEvaluationError,
    KboConfig,
    ParticleEnsemble,
    RngStream,
    derive_run_seed,
    ensemble_init,
    rescale_from_domain,
    rescale_to_domain,
)
from .diagnostics import (
    MomentReport,
    TheoryParams,
    decay_check,
    domain_energy_bounds,
    moments,
    theory_params,
)
from .dynamics import CollisionParams, collide, collide_macro, collide_micro, diffusion_scale
from .estimators import WeightedEstimate, consensus_from_energies, consensus_point, gamma_weight, pair_best
from .experiments import ExperimentSpec, SweepSpec, run_experiment, run_sweep
from .mlbench import (
    Dataset,
    KboShallowClassifier,
    SgdShallowClassifier,
    ShallowNetParams,
    cross_entropy,
    forward,
    kbo_train,
    load_idx,
    sgd_train,
    synth_blobs,
)
from .objectives import BENCHMARKS, Objective, benchmark, sgd_test_objective
from .solver import (
    KboOptimizer,
    RunResult,
    StallMonitor,
    check_success,
    reduce_particles,
    run_bird,
    run_nanbu,
)

__version__ = "0.1.0"

__all__ = [
    "BENCHMARKS",
    "CollisionParams",
    "ConfigurationError",
    "Dataset",
    "EnergyEvaluationError",
    "ExperimentSpec",
    "KboConfig",
    "KboOptimizer",
    "KboShallowClassifier",
    "MomentReport",
    "Objective",
    "ParticleEnsemble",
    "RngStream",
    "RunResult",
    "SgdShallowClassifier",
    "ShallowNetParams",
    "StallMonitor",
    "SweepSpec",
    "TheoryParams",
    "WeightedEstimate",
    "benchmark",
    "check_success",
    "collide",
    "collide_macro",
    "collide_micro",
    "consensus_from_energies",
    "consensus_point",
    "cross_entropy",
    "decay_check",
    "derive_run_seed",
    "diffusion_scale",
    "domain_energy_bounds",
    "ensemble_init",
    "forward",
    "gamma_weight",
    "kbo_train",
    "load_idx",
    "moments",
    "pair_best",
    "reduce_particles",
    "rescale_from_domain",
    "rescale_to_domain",
    "run_bird",
    "run_experiment",
    "run_nanbu",
    "run_sweep",
    "sgd_test_objective",
    "sgd_train",
    "synth_blobs",
    "theory_params",
]
