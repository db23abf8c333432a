"""Core data types: particle ensembles, solver configuration, seeded streams, rescaling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

# Fixed sub-stream ids so a single 64-bit seed reproducibly drives a whole run.
INIT_STREAM = 0
DRIVER_STREAM = 1

DIFFUSION_MODES = ("isotropic", "anisotropic")


class ConfigurationError(ValueError):
    """Invalid configuration value (bad bounds, negative strengths, unknown names)."""


class EnergyEvaluationError(RuntimeError):
    """An objective returned a non-finite value for a particle."""


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by (seed, stream id).

    Identical (seed, stream) pairs yield identical draw sequences regardless of
    how many other streams exist, so per-particle or per-run parallelism cannot
    change results.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


def derive_run_seed(master_seed: int, run_index: int) -> int:
    """Documented per-run seed splitting: run k of a study gets an independent
    64-bit seed so any single run can be re-executed on its own."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(run_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, Generator, or integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise ConfigurationError(f"cannot build a generator from {rng!r}")


@dataclass
class ParticleEnsemble:
    """Positions of N particles in R^d with a cache of their objective values.

    The energy cache is either fresh (a float vector aligned with positions) or
    stale (None). Drivers recompute it after every position update.
    """

    positions: np.ndarray
    energies: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[0] < 1:
            raise ConfigurationError("ensemble needs at least one particle")
        if not np.all(np.isfinite(self.positions)):
            raise ConfigurationError("ensemble positions must be finite")
        if self.energies is not None:
            self.energies = np.asarray(self.energies, dtype=float)
            if self.energies.shape != (self.count,):
                raise ConfigurationError("energies must have one entry per particle")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def fresh(self) -> bool:
        return self.energies is not None

    def invalidate(self) -> None:
        self.energies = None

    def refresh(self, energy_fn) -> np.ndarray:
        """Recompute the cached energies with a batch callable (N,d) -> (N,)."""
        self.energies = checked_energies(energy_fn, self.positions)
        return self.energies

    def subset(self, indices: np.ndarray) -> "ParticleEnsemble":
        e = None if self.energies is None else self.energies[indices]
        return ParticleEnsemble(self.positions[indices], e)


def checked_energies(energy_fn, positions: np.ndarray) -> np.ndarray:
    """Evaluate a batch energy function and abort on the first non-finite value,
    naming the offending particle."""
    values = np.asarray(energy_fn(positions), dtype=float)
    if values.shape != (positions.shape[0],):
        raise EnergyEvaluationError(
            f"energy function returned shape {values.shape} for {positions.shape[0]} particles"
        )
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise EnergyEvaluationError(
            f"objective returned {values[i]} for particle {i} at position {positions[i]}"
        )
    return values


def ensemble_init(
    n: int,
    dim: int,
    kind: str = "uniform",
    *,
    lo=-1.0,
    hi=1.0,
    mean=0.0,
    std=1.0,
    rng=0,
) -> ParticleEnsemble:
    """Draw n i.i.d. particles in R^dim, either uniform on [lo, hi] per
    coordinate or Gaussian with the given mean and std. The energy cache starts
    stale."""
    if n < 1 or dim < 1:
        raise ConfigurationError("need n >= 1 and dim >= 1")
    gen = as_generator(rng)
    if kind == "uniform":
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
        if np.any(lo >= hi):
            raise ConfigurationError("uniform init needs lo < hi in every coordinate")
        positions = gen.uniform(lo, hi, size=(n, dim))
    elif kind == "gaussian":
        std = np.broadcast_to(np.asarray(std, dtype=float), (dim,))
        if np.any(std <= 0):
            raise ConfigurationError("gaussian init needs std > 0")
        mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))
        positions = mean + std * gen.standard_normal((n, dim))
    else:
        raise ConfigurationError(f"unknown init kind {kind!r}")
    return ParticleEnsemble(positions)


def _check_bounds(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo >= hi):
        raise ConfigurationError("domain needs lo < hi in every coordinate")
    return lo, hi


def rescale_to_domain(u, lo, hi) -> np.ndarray:
    """Affine map from the unit cube [-1,1]^d to the box [lo, hi], applied per
    coordinate; accepts single points (d,) or batches (..., d)."""
    lo, hi = _check_bounds(lo, hi)
    u = np.asarray(u, dtype=float)
    return lo + (u + 1.0) * (hi - lo) / 2.0


def rescale_from_domain(x, lo, hi) -> np.ndarray:
    """Inverse of :func:`rescale_to_domain`."""
    lo, hi = _check_bounds(lo, hi)
    x = np.asarray(x, dtype=float)
    return 2.0 * (x - lo) / (hi - lo) - 1.0


@dataclass(frozen=True)
class KboConfig:
    """All scalar knobs of the binary-collision dynamics and its drivers.

    lambda1/sigma1 act on the pair-best (local) direction, lambda2/sigma2 on
    the consensus (global) direction; epsilon scales drifts by epsilon and
    noises by sqrt(epsilon). alpha and beta are the weight exponents of the
    consensus point and the pair best. Reduction is off at reduction_mu=0.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    sigma1: float = 0.1
    sigma2: float = 6.0
    alpha: float = 5e6
    beta: float = 5e6
    epsilon: float = 0.01
    diffusion_mode: str = "anisotropic"
    n_stall: int = 500
    delta_stall: float = 1e-4
    max_iters: int = 10000
    reduction_mu: float = 0.0
    reduction_every: int = 10
    n_min: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "sigma1", "sigma2"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be > 0")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("alpha and beta must be > 0")
        if self.diffusion_mode not in DIFFUSION_MODES:
            raise ConfigurationError(f"diffusion_mode must be one of {DIFFUSION_MODES}")
        if self.n_stall < 1 or self.max_iters < 1:
            raise ConfigurationError("n_stall and max_iters must be >= 1")
        if self.delta_stall < 0:
            raise ConfigurationError("delta_stall must be >= 0")
        if not 0.0 <= self.reduction_mu <= 1.0:
            raise ConfigurationError("reduction_mu must lie in [0, 1]")
        if self.reduction_every < 1:
            raise ConfigurationError("reduction_every must be >= 1")
        if self.n_min < 2:
            raise ConfigurationError("n_min must be >= 2")
        scaled_drift = self.epsilon * (self.lambda1 + self.lambda2)
        if scaled_drift > 1.0:
            warnings.warn(
                f"epsilon*(lambda1+lambda2) = {scaled_drift:.3g} > 1: single "
                "collisions may overshoot and the mean pair distance is no "
                "longer contractive",
                RuntimeWarning,
                stacklevel=2,
            )

    def with_seed(self, seed: int) -> "KboConfig":
        return replace(self, seed=int(seed))
