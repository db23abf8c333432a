"""Moment tracking and runnable encodings of the convergence theory.

The contraction rates and admissibility conditions below are stated for the
unscaled interaction; one driver sweep applies the epsilon-scaled interaction
once per particle, so per-sweep rates carry an extra factor (see
``per_sweep_micro_rate`` / ``per_sweep_macro_rate``). The energy bounds fed in
here are domain-restricted surrogates: suprema over the search box (sampled
when no closed form is available), not over all of R^d.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .core import KboConfig, ParticleEnsemble
from .objectives import Objective
from .solver import RunResult, Trace


@dataclass(frozen=True)
class MomentReport:
    """Ensemble mean, variance (half mean squared deviation), and mean squared
    norm; they satisfy second_moment = |mean|^2 + 2 * variance."""

    mean: np.ndarray
    variance: float
    second_moment: float


def moments(ens: ParticleEnsemble) -> MomentReport:
    pos = ens.positions
    m = pos.mean(axis=0)
    var = 0.5 * float(np.mean(np.sum((pos - m) ** 2, axis=1)))
    e2 = float(np.mean(np.sum(pos**2, axis=1)))
    return MomentReport(mean=m, variance=var, second_moment=e2)


@dataclass(frozen=True)
class TheoryParams:
    """Computed contraction constants and admissibility flags.

    ``c_beta``/``c_alpha`` exponentiate the energy range; ``kappa`` is the
    dimension under isotropic noise and 1 otherwise. ``mu`` is the mean-field
    contraction margin of the pair-best-only dynamics and ``nu`` the
    initialization-quality ratio that must stay below one half (it is NaN when
    mu is not positive). ``micro_rate``/``macro_rate`` are the unscaled
    variance-decay exponents of the two single-channel dynamics.
    """

    c_beta: float
    c_alpha: float
    kappa: int
    mu: float
    nu: float
    micro_rate: float
    macro_rate: float
    micro_condition: bool
    macro_condition: bool
    mu_positive: bool
    nu_below_half: bool
    v0: float
    v0_at_most_one: bool

    def to_dict(self) -> dict:
        return asdict(self)


def theory_params(
    cfg: KboConfig,
    e_upper: float,
    e_lower: float,
    c1: float,
    c2: float,
    v0: float,
    w0_l1: float,
    dim: int,
) -> TheoryParams:
    """Evaluate the contraction constants for a configuration.

    The pair-best channel uses (lambda1, sigma1, beta); the consensus channel
    uses (lambda2, sigma2, alpha). ``w0_l1`` is the mean initial weight
    (see :func:`initial_weight_l1`), ``v0`` the initial variance, and c1/c2
    the smoothness bounds of the objective.
    """
    if e_upper < e_lower:
        raise ValueError("need e_upper >= e_lower")
    if w0_l1 <= 0:
        raise ValueError("w0_l1 must be > 0")
    kappa = dim if cfg.diffusion_mode == "isotropic" else 1
    spread = e_upper - e_lower
    with np.errstate(over="ignore"):
        c_beta = float(np.exp(cfg.beta * spread))
        c_alpha = float(np.exp(cfg.alpha * spread))
    l1, s1 = cfg.lambda1, cfg.sigma1
    l2, s2 = cfg.lambda2, cfg.sigma2
    micro_rate = l1 / c_beta - l1**2 - 2.0 * s1**2 * kappa
    macro_rate = 2.0 * l2 - l2**2 * c_alpha - s2**2 * kappa * c_alpha
    mu = l1 / c_beta - 2.0 * s1**2 * kappa
    micro_condition = s1**2 < (l1 / (2.0 * kappa)) * (1.0 / c_beta - l1)
    macro_condition = s2**2 < (l2 / kappa) * (2.0 / c_alpha - l2)
    if mu > 0:
        with np.errstate(over="ignore"):
            nu = float(
                4.0
                * (l1 * c1 + s1**2 * kappa * c2)
                * cfg.beta
                * np.exp(-cfg.beta * e_lower)
                * np.sqrt(v0)
                / (mu * w0_l1)
            )
    else:
        nu = float("nan")
    return TheoryParams(
        c_beta=c_beta,
        c_alpha=c_alpha,
        kappa=kappa,
        mu=mu,
        nu=nu,
        micro_rate=micro_rate,
        macro_rate=macro_rate,
        micro_condition=bool(micro_condition),
        macro_condition=bool(macro_condition),
        mu_positive=bool(mu > 0),
        nu_below_half=bool(nu < 0.5) if np.isfinite(nu) else False,
        v0=float(v0),
        v0_at_most_one=bool(v0 <= 1.0),
    )


# ---------------------------------------------------------------------------
# Scaled (per-sweep) forms used when checking driver traces
# ---------------------------------------------------------------------------


def per_sweep_micro_rate(cfg: KboConfig, c_beta: float, kappa: int) -> float:
    """Variance-decay exponent per driver sweep of the pair-best-only
    dynamics: substitute the scaled coefficients into the unscaled rate."""
    e, l, s = cfg.epsilon, cfg.lambda1, cfg.sigma1
    return e * (l / c_beta - e * l**2 - 2.0 * s**2 * kappa)


def per_sweep_macro_rate(cfg: KboConfig, c_alpha: float, kappa: int) -> float:
    """Per-sweep variance-decay exponent of the consensus-only dynamics."""
    e, l, s = cfg.epsilon, cfg.lambda2, cfg.sigma2
    return e * (2.0 * l - e * l**2 * c_alpha - s**2 * kappa * c_alpha)


def scaled_micro_condition(cfg: KboConfig, c_beta: float, kappa: int) -> bool:
    """Admissibility of (lambda1, sigma1) after scaling drifts by epsilon and
    noises by sqrt(epsilon)."""
    e, l, s = cfg.epsilon, cfg.lambda1, cfg.sigma1
    return s**2 < (l / (2.0 * kappa)) * (1.0 / c_beta - e * l)


def scaled_macro_condition(cfg: KboConfig, c_alpha: float, kappa: int) -> bool:
    e, l, s = cfg.epsilon, cfg.lambda2, cfg.sigma2
    return s**2 < (l / kappa) * (2.0 / c_alpha - e * l)


def decay_check(run: RunResult | Trace, rate: float, slack: float = 1.0) -> bool:
    """True when the recorded variance satisfies V(t) <= V(0) exp(-slack*rate*t)
    at every recorded step; slack in (0, 1] absorbs finite-ensemble noise."""
    trace = run.trace if isinstance(run, RunResult) else run
    if not 0.0 < slack <= 1.0:
        raise ValueError("slack must lie in (0, 1]")
    v0 = float(trace.variance[0])
    t = trace.steps.astype(float)
    bound = v0 * np.exp(-slack * rate * t)
    return bool(np.all(trace.variance <= bound + 1e-15))


# ---------------------------------------------------------------------------
# Weight-mass estimates over an initial ensemble
# ---------------------------------------------------------------------------


def log_mean_weight(energies: np.ndarray, beta: float) -> float:
    """log of the mean of exp(-beta * E_i), shift-compensated."""
    energies = np.asarray(energies, dtype=float)
    return float(logsumexp(-beta * energies) - np.log(energies.size))


def initial_weight_l1(energies: np.ndarray, beta: float) -> float:
    """Mean initial weight mass (may underflow to zero for very large beta;
    prefer :func:`log_mean_weight` in that regime)."""
    return float(np.exp(log_mean_weight(energies, beta)))


def laplace_gap(energies: np.ndarray, beta: float, e_lower: float) -> float:
    """The soft-min gap r(beta) = -log(mean weight)/beta - e_lower; it
    decreases to (min E_i - e_lower) as beta grows."""
    return -log_mean_weight(energies, beta) / beta - e_lower


def gamma_square_bound_factor(beta: float, energy_range: float) -> float:
    """The factor bounding the squared interaction weight by the doubled-
    exponent weight: (1 + e^(-2*b*R)) / (1 + e^(-b*R))^2 for energy range R."""
    if energy_range < 0:
        raise ValueError("energy_range must be >= 0")
    x = np.exp(-beta * energy_range)
    return float((1.0 + x**2) / (1.0 + x) ** 2)


def domain_energy_bounds(objective: Objective, n_samples: int = 100_000, rng=0) -> tuple[float, float]:
    """Sampled (lower, upper) energy bounds over the search box; exact corner
    checks are not attempted, so these are surrogates for the true suprema."""
    x = objective.sample_domain(n_samples, rng)
    vals = objective(x)
    lo = float(vals.min())
    hi = float(vals.max())
    if objective.min_value is not None:
        lo = min(lo, float(objective.min_value))
    return lo, hi
