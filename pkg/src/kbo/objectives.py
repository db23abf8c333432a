"""Benchmark objectives, the 1-D sampled comparison objective, and black-box wrappers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .core import ConfigurationError, as_generator


@dataclass
class Smoothness:
    """Upper bounds on the gradient norm (c1) and the diagonal second
    derivatives (c2) over the search domain; estimated=True marks bounds
    obtained by sampling rather than analysis."""

    c1: float
    c2: float
    estimated: bool = False


@dataclass
class Objective:
    """An evaluatable cost over a box domain with optional minimizer metadata.

    ``fn`` is batch-aware: it maps (..., d) arrays to (...) values. Instances
    are immutable by convention after construction and safe to evaluate
    concurrently.
    """

    fn: object
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    name: str = "custom"
    minimizer: np.ndarray | None = None
    min_value: float | None = None
    smoothness: Smoothness | None = None
    shift: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.dim,)).copy()
        if np.any(self.lower >= self.upper):
            raise ConfigurationError("objective domain needs lower < upper")
        if self.minimizer is not None:
            self.minimizer = np.broadcast_to(
                np.asarray(self.minimizer, dtype=float), (self.dim,)
            ).copy()

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self.fn(x[None, :])[0])
        return np.asarray(self.fn(x), dtype=float)

    def sample_domain(self, n: int, rng) -> np.ndarray:
        gen = as_generator(rng)
        return gen.uniform(self.lower, self.upper, size=(n, self.dim))


def estimate_smoothness(obj: Objective, n_samples: int = 100_000, rng=0, step: float = 1e-6) -> Smoothness:
    """Estimate c1/c2 by central finite differences at uniformly sampled domain
    points. Marked as an estimate; the true suprema may be larger."""
    gen = as_generator(rng)
    # keep the evaluation count bounded for high dimensions
    n = max(1000, min(n_samples, 200_000 // max(1, obj.dim)))
    x = obj.sample_domain(n, gen)
    f0 = obj(x)
    grad_sq = np.zeros(n)
    c2 = 0.0
    for i in range(obj.dim):
        e = np.zeros(obj.dim)
        e[i] = step
        fp = obj(x + e)
        fm = obj(x - e)
        gi = (fp - fm) / (2 * step)
        grad_sq += gi**2
        c2 = max(c2, float(np.max(np.abs(fp - 2 * f0 + fm) / step**2)))
    return Smoothness(c1=float(np.sqrt(grad_sq.max())), c2=c2, estimated=True)


# ---------------------------------------------------------------------------
# Benchmark suite
# ---------------------------------------------------------------------------


def _sphere(dim, b):
    def fn(x):
        return np.sum((x - b) ** 2, axis=-1)

    # grad 2(x-b); per-coordinate reach from b to the farthest box corner
    reach = np.maximum(np.abs(-5.0 - b), np.abs(5.0 - b))
    smooth = Smoothness(c1=2.0 * float(np.linalg.norm(reach)), c2=2.0)
    return Objective(fn, dim, -5.0, 5.0, "sphere", minimizer=b, min_value=0.0,
                     smoothness=smooth, shift=b)


def _styblinski_tang(dim, b):
    def fn(x):
        return 0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x, axis=-1)

    xstar = np.full(dim, -2.903534)
    obj = Objective(fn, dim, -5.0, 5.0, "styblinski_tang", minimizer=xstar)
    obj.min_value = float(obj(xstar))
    return obj


def _ackley(dim, b):
    def fn(x):
        d = x.shape[-1]
        quad = np.sqrt(np.sum(x**2, axis=-1) / d)
        cos = np.sum(np.cos(2 * np.pi * x), axis=-1) / d
        return -20.0 * np.exp(-0.2 * quad) - np.exp(cos) + 20.0 + np.e

    return Objective(fn, dim, -32.0, 32.0, "ackley", minimizer=np.zeros(dim), min_value=0.0)


def _griewank(dim, b):
    roots = np.sqrt(np.arange(1, dim + 1, dtype=float))

    def fn(x):
        return 1.0 + np.sum(x**2, axis=-1) / 4000.0 - np.prod(np.cos(x / roots), axis=-1)

    return Objective(fn, dim, -600.0, 600.0, "griewank", minimizer=np.zeros(dim), min_value=0.0)


def _negative_exponential(dim, b):
    def fn(x):
        return -np.exp(-0.5 * np.sum((x - b) ** 2, axis=-1))

    # |grad| = r e^{-r^2/2} <= e^{-1/2}; |d2/dxi2| <= 1 globally
    smooth = Smoothness(c1=float(np.exp(-0.5)), c2=1.0)
    return Objective(fn, dim, -5.0, 5.0, "negative_exponential", minimizer=b,
                     min_value=-1.0, smoothness=smooth, shift=b)


def _rastrigin(dim, b):
    def fn(x):
        d = x.shape[-1]
        return np.sum(x**2 - 10.0 * np.cos(2 * np.pi * x), axis=-1) / d + 10.0

    # Note: this variant divides the sum by the dimension, so the barrier
    # heights shrink as d grows; common references omit the 1/d factor.
    return Objective(fn, dim, -5.12, 5.12, "rastrigin", minimizer=np.zeros(dim), min_value=0.0)


def _schwefel222(dim, b):
    def fn(x):
        a = np.abs(x)
        return np.sum(a, axis=-1) + np.prod(a, axis=-1)

    return Objective(fn, dim, -100.0, 100.0, "schwefel222", minimizer=np.zeros(dim), min_value=0.0)


def _schwefel223(dim, b):
    def fn(x):
        return np.sum(x**10, axis=-1)

    return Objective(fn, dim, -100.0, 100.0, "schwefel223", minimizer=np.zeros(dim), min_value=0.0)


def _salomon(dim, b):
    def fn(x):
        r = np.sqrt(np.sum(x**2, axis=-1))
        return 1.0 - np.cos(2 * np.pi * r) + 0.1 * r

    return Objective(fn, dim, -100.0, 100.0, "salomon", minimizer=np.zeros(dim), min_value=0.0)


def _sum_of_squares(dim, b):
    weights = np.arange(1, dim + 1, dtype=float)

    def fn(x):
        return np.sum(weights * x**2, axis=-1)

    smooth = Smoothness(c1=2.0 * float(np.linalg.norm(weights * 10.0)), c2=2.0 * dim)
    return Objective(fn, dim, -10.0, 10.0, "sum_of_squares", minimizer=np.zeros(dim),
                     min_value=0.0, smoothness=smooth)


BENCHMARKS = {
    "sphere": _sphere,
    "styblinski_tang": _styblinski_tang,
    "ackley": _ackley,
    "griewank": _griewank,
    "negative_exponential": _negative_exponential,
    "rastrigin": _rastrigin,
    "schwefel222": _schwefel222,
    "schwefel223": _schwefel223,
    "salomon": _salomon,
    "sum_of_squares": _sum_of_squares,
}

# Objectives whose definition includes a translation vector.
SHIFTABLE = ("sphere", "negative_exponential")


def benchmark(name: str, dim: int, shift_seed: int | None = None) -> Objective:
    """Build a benchmark objective by its registry name.

    Sphere and the negative exponential carry a shift vector b; by default
    b = 0 so minimizers match the tabulated ones. Passing ``shift_seed`` draws
    b uniformly from [-5, 5]^d with that recorded seed.
    """
    if name not in BENCHMARKS:
        raise ConfigurationError(
            f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}"
        )
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    b = np.zeros(dim)
    if shift_seed is not None:
        if name not in SHIFTABLE:
            raise ConfigurationError(f"benchmark {name!r} has no shift vector")
        b = as_generator(int(shift_seed)).uniform(-5.0, 5.0, size=dim)
    return BENCHMARKS[name](dim, b)


# ---------------------------------------------------------------------------
# 1-D sampled objective for the descent-method comparison study
# ---------------------------------------------------------------------------


def _osc_term(x):
    return np.exp(np.sin(2.0 * x**2))


def _osc_term_grad(x):
    return np.exp(np.sin(2.0 * x**2)) * np.cos(2.0 * x**2) * 4.0 * x


def sample_value(x, xi):
    """Per-sample loss exp(sin(2x^2)) + (x - xi - pi/2)^2 / 10."""
    x = np.asarray(x, dtype=float)
    return _osc_term(x) + 0.1 * (x - xi - np.pi / 2.0) ** 2


def sample_grad(x, xi):
    """Derivative in x of :func:`sample_value`."""
    x = np.asarray(x, dtype=float)
    return _osc_term_grad(x) + 0.2 * (x - xi - np.pi / 2.0)


class SampleAverageObjective(Objective):
    """Mean of an oscillatory-plus-quadratic loss over frozen Gaussian draws.

    The quadratic part is linear in the sample, so the full objective and its
    full gradient collapse to closed forms in the sample mean and mean square;
    per-sample access is kept for minibatch descent baselines.
    """

    def __init__(self, samples: np.ndarray):
        self.samples = np.asarray(samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ConfigurationError("need a 1-D vector of at least one sample")
        self._xi_mean = float(self.samples.mean())
        self._xi_sq_mean = float((self.samples**2).mean())

        def fn(x):
            t = x[..., 0]
            c = t - np.pi / 2.0
            quad = c**2 - 2.0 * c * self._xi_mean + self._xi_sq_mean
            return _osc_term(t) + 0.1 * quad

        super().__init__(fn, 1, -3.0, 3.0, name="sample_average_1d")
        res = minimize_scalar(
            lambda t: float(self.value(t)), bounds=(1.2, 1.9), method="bounded",
            options={"xatol": 1e-12},
        )
        self.minimizer = np.array([res.x])
        self.min_value = float(res.fun)

    @property
    def n_samples(self) -> int:
        return self.samples.size

    def value(self, x) -> np.ndarray | float:
        """Scalar-argument evaluation; x may be a float or an array of floats."""
        x = np.asarray(x, dtype=float)
        return self(x[..., None])

    def per_sample_value(self, x, idx=None) -> np.ndarray:
        xi = self.samples if idx is None else self.samples[idx]
        return sample_value(np.asarray(x, dtype=float)[..., None], xi)

    def per_sample_grad(self, x, idx=None) -> np.ndarray:
        xi = self.samples if idx is None else self.samples[idx]
        return sample_grad(np.asarray(x, dtype=float)[..., None], xi)

    def full_grad(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        return _osc_term_grad(x) + 0.2 * (x - np.pi / 2.0 - self._xi_mean)


def sgd_test_objective(n: int = 10_000, noise_std: float = 0.1, seed: int = 0) -> SampleAverageObjective:
    """The 1-D comparison objective: empirical mean over n frozen draws
    xi ~ N(0, noise_std^2). Its reference minimizer sits near 1.5353."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if noise_std < 0:
        raise ConfigurationError("noise_std must be >= 0")
    samples = noise_std * as_generator(seed).standard_normal(n)
    return SampleAverageObjective(samples)
