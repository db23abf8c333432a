"""Monte Carlo drivers for the collision dynamics, termination handling,
success measurement, and adaptive particle reduction.

Two drivers are provided. The synchronous one performs one sweep per step:
every particle collides once against a uniformly random partner while the
consensus point stays frozen, then the consensus point is refreshed. The
asynchronous one draws one random pair at a time and refreshes the consensus
point after every collision, with the step budget and stall window scaled by
half the particle count so both drivers cover comparable numbers of
collisions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .core import (
    DRIVER_STREAM,
    INIT_STREAM,
    ConfigurationError,
    KboConfig,
    ParticleEnsemble,
    RngStream,
    as_generator,
    checked_energies,
    ensemble_init,
)
from .dynamics import CollisionParams, _one_side, collide
from .estimators import consensus_from_energies, gamma_weight
from .objectives import Objective

SUCCESS_RADIUS = 0.25

PAIRING_MODES = ("independent", "disjoint")


# ---------------------------------------------------------------------------
# Traces and results
# ---------------------------------------------------------------------------


@dataclass
class Trace:
    """Per-recorded-step state of a run, in the objective's native coordinates.

    ``variance`` is half the mean squared deviation from the ensemble mean.
    """

    steps: np.ndarray
    n_particles: np.ndarray
    v_alpha: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    best_energy: np.ndarray

    def __len__(self):
        return len(self.steps)


@dataclass
class RunResult:
    trace: Trace
    final_estimate: np.ndarray
    termination: str
    wall_steps: int
    final_ensemble: ParticleEnsemble | None = None


@dataclass
class StallMonitor:
    """Counts consecutive consensus-point moves below a tolerance; a run stops
    when the counter reaches its limit. Any move of at least the tolerance
    resets the counter."""

    delta_stall: float
    n_stall: int
    counter: int = 0
    previous: np.ndarray | None = None

    def observe(self, v_alpha: np.ndarray) -> bool:
        v_alpha = np.asarray(v_alpha, dtype=float)
        if self.previous is not None:
            if float(np.linalg.norm(v_alpha - self.previous)) < self.delta_stall:
                self.counter += 1
            else:
                self.counter = 0
        self.previous = v_alpha.copy()
        return self.counter >= self.n_stall


def check_success(v_alpha, x_star) -> bool:
    """A run is successful when the consensus point lands within 0.25 of the
    true minimizer in the max norm (strict inequality)."""
    v_alpha = np.asarray(v_alpha, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if v_alpha.shape != x_star.shape:
        raise ValueError("consensus point and minimizer must share a shape")
    if not (np.all(np.isfinite(v_alpha)) and np.all(np.isfinite(x_star))):
        raise ValueError("success check needs finite inputs")
    return bool(np.max(np.abs(v_alpha - x_star)) < SUCCESS_RADIUS)


# ---------------------------------------------------------------------------
# Particle reduction
# ---------------------------------------------------------------------------


def spread(positions: np.ndarray) -> float:
    """Mean squared distance to the ensemble mean (the unhalved variance used
    by the reduction rule)."""
    positions = np.asarray(positions, dtype=float)
    return float(np.mean(np.sum((positions - positions.mean(axis=0)) ** 2, axis=1)))


def _reduction_count(n: int, s_prev: float, s_hat: float, mu: float, n_min: int) -> int:
    raw = int(np.floor(n * (1.0 + mu * (s_hat - s_prev) / s_prev)))
    return min(n, max(n_min, raw))


_DISCARD_MODE = "uniform"  # experimental knob: uniform | worst


def _discard(n: int, n_new: int, energies: np.ndarray, rng) -> np.ndarray:
    if _DISCARD_MODE == "worst":
        return np.argsort(energies)[:n_new]
    return rng.permutation(n)[:n_new]


def reduce_particles(ens: ParticleEnsemble, s_prev: float, mu: float, n_min: int, rng) -> ParticleEnsemble:
    """Shrink the ensemble in proportion to the relative drop of its spread
    since the previous checkpoint; discarded particles are chosen uniformly at
    random. The count never grows and never drops below n_min. A non-positive
    previous spread means consensus is already degenerate and reduction is
    skipped."""
    if not 0.0 <= mu <= 1.0:
        raise ConfigurationError("mu must lie in [0, 1]")
    if s_prev <= 0:
        return ens
    n = ens.count
    n_new = _reduction_count(n, s_prev, spread(ens.positions), mu, n_min)
    if n_new >= n:
        return ens
    keep = as_generator(rng).permutation(n)[:n_new]
    return ens.subset(keep)


# ---------------------------------------------------------------------------
# Working frame (optional rescaling into the benchmark domain)
# ---------------------------------------------------------------------------


class _Frame:
    """Affine bridge between the coordinates the dynamics run in and the
    objective's native domain. With rescaling on, particles live in [-1,1]^d
    and every energy evaluation maps through the affine transform; reported
    consensus points, means, and variances are in native coordinates."""

    def __init__(self, objective: Objective, rescale: bool):
        self.objective = objective
        if rescale:
            self.scale = (objective.upper - objective.lower) / 2.0
            self.offset = (objective.upper + objective.lower) / 2.0
        else:
            self.scale = np.ones(objective.dim)
            self.offset = np.zeros(objective.dim)

    def to_native(self, u: np.ndarray) -> np.ndarray:
        return u * self.scale + self.offset

    def energy(self, u: np.ndarray) -> np.ndarray:
        return self.objective(self.to_native(u))

    def native_variance(self, u: np.ndarray) -> float:
        dev = (u - u.mean(axis=0)) * self.scale
        return 0.5 * float(np.mean(np.sum(dev**2, axis=1)))


class _Recorder:
    def __init__(self, frame: _Frame):
        self.frame = frame
        self.steps: list[int] = []
        self.counts: list[int] = []
        self.valpha: list[np.ndarray] = []
        self.mean: list[np.ndarray] = []
        self.variance: list[float] = []
        self.best: list[float] = []

    def record(self, step: int, positions: np.ndarray, energies: np.ndarray, valpha_u: np.ndarray):
        self.steps.append(step)
        self.counts.append(positions.shape[0])
        self.valpha.append(self.frame.to_native(valpha_u))
        self.mean.append(self.frame.to_native(positions.mean(axis=0)))
        self.variance.append(self.frame.native_variance(positions))
        self.best.append(float(energies.min()))

    def build(self) -> Trace:
        return Trace(
            steps=np.asarray(self.steps, dtype=int),
            n_particles=np.asarray(self.counts, dtype=int),
            v_alpha=np.asarray(self.valpha, dtype=float),
            mean=np.asarray(self.mean, dtype=float),
            variance=np.asarray(self.variance, dtype=float),
            best_energy=np.asarray(self.best, dtype=float),
        )


def _check_run_inputs(cfg: KboConfig, objective: Objective, init: ParticleEnsemble):
    if init.dim != objective.dim:
        raise ConfigurationError(
            f"initial ensemble dimension {init.dim} does not match objective dimension {objective.dim}"
        )


# ---------------------------------------------------------------------------
# Synchronous driver
# ---------------------------------------------------------------------------


def _select_partners(n: int, pairing: str, rng) -> np.ndarray:
    if n == 1:
        return np.zeros(1, dtype=int)
    if pairing == "independent":
        r = rng.integers(0, n - 1, size=n)
        return r + (r >= np.arange(n))
    if pairing == "disjoint":
        perm = rng.permutation(n)
        partners = np.empty(n, dtype=int)
        half = n // 2
        a = perm[0 : 2 * half : 2]
        b = perm[1 : 2 * half : 2]
        partners[a] = b
        partners[b] = a
        if n % 2:
            last = int(perm[-1])
            r = int(rng.integers(0, n - 1))
            partners[last] = r + (r >= last)
        return partners
    raise ConfigurationError(f"pairing must be one of {PAIRING_MODES}")


def _nanbu_sweep(positions, energies, valpha, params: CollisionParams, beta, partners, rng):
    """One synchronous sweep: every particle collides once against its partner
    from the frozen pre-sweep state. Draws 2 noise vectors per particle in a
    single (2, N, d) block."""
    g = np.asarray(gamma_weight(energies, energies[partners], beta))
    d_beta = g[:, None] * (positions[partners] - positions)
    d_alpha = valpha[None, :] - positions
    draws = rng.standard_normal((2,) + positions.shape)
    return _one_side(positions, d_beta, d_alpha, params, draws[0], draws[1])


def run_nanbu(
    cfg: KboConfig,
    objective: Objective,
    init: ParticleEnsemble,
    *,
    rescale: bool = False,
    record_every: int = 1,
    pairing: str = "independent",
    keep_ensemble: bool = True,
) -> RunResult:
    """Synchronous collision driver: per step, compute the consensus point
    once, collide every particle against a random partner, refresh the
    consensus point, update the stall monitor, and (on its cadence) reduce the
    particle count."""
    _check_run_inputs(cfg, objective, init)
    if pairing not in PAIRING_MODES:
        raise ConfigurationError(f"pairing must be one of {PAIRING_MODES}")
    frame = _Frame(objective, rescale)
    params = CollisionParams.from_config(cfg)
    rng = RngStream(cfg.seed, DRIVER_STREAM).generator()

    u = np.array(init.positions, dtype=float)
    energies = checked_energies(frame.energy, u)
    valpha = consensus_from_energies(u, energies, cfg.alpha).point
    # stall distances are measured on the native-domain consensus point, so
    # delta_stall keeps its meaning whether or not the run is rescaled
    monitor = StallMonitor(cfg.delta_stall, cfg.n_stall)
    monitor.observe(frame.to_native(valpha))

    rec = _Recorder(frame)
    rec.record(0, u, energies, valpha)
    s_before = spread(u)  # spread one sweep before each reduction event

    termination = "max_iters"
    wall = 0
    for t in range(1, cfg.max_iters + 1):
        n = u.shape[0]
        partners = _select_partners(n, pairing, rng)
        u = _nanbu_sweep(u, energies, valpha, params, cfg.beta, partners, rng)
        energies = checked_energies(frame.energy, u)
        valpha = consensus_from_energies(u, energies, cfg.alpha).point
        stalled = monitor.observe(frame.to_native(valpha))
        wall = t
        terminal = stalled or t == cfg.max_iters
        if t % record_every == 0 or terminal:
            rec.record(t, u, energies, valpha)
        if cfg.reduction_mu > 0:
            # the rule compares the spread across one sweep and is adopted
            # every reduction_every iterations
            if t % cfg.reduction_every == 0:
                s_hat = spread(u)
                if s_before > 0 and n > cfg.n_min:
                    n_new = _reduction_count(n, s_before, s_hat, cfg.reduction_mu, cfg.n_min)
                    if n_new < n:
                        keep = _discard(n, n_new, energies, rng)
                        u = u[keep]
                        energies = energies[keep]
                if cfg.reduction_every == 1:
                    s_before = spread(u)
            elif (t + 1) % cfg.reduction_every == 0:
                s_before = spread(u)
        if stalled:
            termination = "stalled"
            break

    trace = rec.build()
    final = None
    if keep_ensemble:
        final = ParticleEnsemble(frame.to_native(u), energies)
    return RunResult(
        trace=trace,
        final_estimate=trace.v_alpha[-1],
        termination=termination,
        wall_steps=wall,
        final_ensemble=final,
    )


# ---------------------------------------------------------------------------
# Asynchronous driver
# ---------------------------------------------------------------------------


class _RunningConsensus:
    """Shift-compensated running sums (sum of weights, weighted position sum)
    for an O(1)-per-collision consensus refresh, with periodic full
    recomputation to bound floating-point drift."""

    def __init__(self, alpha: float, rebuild_every: int):
        self.alpha = alpha
        self.rebuild_every = max(1, rebuild_every)
        self._since_rebuild = 0

    def rebuild(self, positions: np.ndarray, energies: np.ndarray):
        self.shift = float(energies.min())
        self.w = np.exp(-self.alpha * (energies - self.shift))
        self.sw = float(self.w.sum())
        self.swv = (self.w[:, None] * positions).sum(axis=0)
        self._since_rebuild = 0

    def update_pair(self, positions, energies, i, j, old_pos, old_e):
        """Call after writing the new positions/energies for particles i, j;
        old_pos/old_e hold their pre-collision values."""
        del old_e
        self.sw -= float(self.w[i] + self.w[j])
        self.swv = self.swv - self.w[i] * old_pos[0] - self.w[j] * old_pos[1]
        new_min = float(min(energies[i], energies[j]))
        self._since_rebuild += 1
        if (
            new_min < self.shift
            or self.sw <= 0
            or not np.isfinite(self.sw)
            or self._since_rebuild >= self.rebuild_every
        ):
            self.rebuild(positions, energies)
            return
        for k in (i, j):
            wk = float(np.exp(-self.alpha * (energies[k] - self.shift)))
            self.w[k] = wk
            self.sw += wk
            self.swv = self.swv + wk * positions[k]

    def point(self) -> np.ndarray:
        return self.swv / self.sw


def run_bird(
    cfg: KboConfig,
    objective: Objective,
    init: ParticleEnsemble,
    *,
    rescale: bool = False,
    record_every: int | None = None,
    consensus_rebuild: int | None = None,
    keep_ensemble: bool = True,
) -> RunResult:
    """Asynchronous collision driver: each step collides one uniformly random
    unordered pair, then refreshes the consensus point and the stall monitor.
    The collision budget is max_iters * N/2 and the stall window n_stall * N/2,
    both fixed from the initial particle count; reduction runs every
    reduction_every * N/2 collisions and recording defaults to every N/2."""
    _check_run_inputs(cfg, objective, init)
    frame = _Frame(objective, rescale)
    params = CollisionParams.from_config(cfg)
    rng = RngStream(cfg.seed, DRIVER_STREAM).generator()

    n0 = init.count
    if n0 < 2:
        raise ConfigurationError("the pairwise driver needs at least two particles")
    half0 = max(1, n0 // 2)
    total = cfg.max_iters * n0 // 2
    stall_limit = max(1, cfg.n_stall * n0 // 2)
    record_every = record_every or half0
    reduction_cadence = cfg.reduction_every * half0

    u = np.array(init.positions, dtype=float)
    energies = checked_energies(frame.energy, u)
    consensus = _RunningConsensus(cfg.alpha, consensus_rebuild or half0)
    consensus.rebuild(u, energies)
    valpha = consensus.point()
    monitor = StallMonitor(cfg.delta_stall, stall_limit)
    monitor.observe(frame.to_native(valpha))

    rec = _Recorder(frame)
    rec.record(0, u, energies, valpha)
    s_before = spread(u)  # spread one pseudo-sweep before each reduction event

    termination = "max_iters"
    wall = 0
    for s in range(1, total + 1):
        n = u.shape[0]
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        new_i, new_j = collide(u[i], u[j], energies[i], energies[j], valpha, params, cfg.beta, rng)
        old_pos = (u[i].copy(), u[j].copy())
        old_e = (energies[i], energies[j])
        u[i] = new_i
        u[j] = new_j
        pair_e = checked_energies(frame.energy, u[[i, j]])
        energies[i], energies[j] = pair_e[0], pair_e[1]
        consensus.update_pair(u, energies, i, j, old_pos, old_e)
        valpha = consensus.point()
        stalled = monitor.observe(frame.to_native(valpha))
        wall = s
        terminal = stalled or s == total
        if s % record_every == 0 or terminal:
            rec.record(s, u, energies, valpha)
        if cfg.reduction_mu > 0:
            # ratio taken across one pseudo-sweep (N/2 collisions), adopted
            # every reduction_every pseudo-sweeps
            if s % reduction_cadence == 0:
                s_hat = spread(u)
                if s_before > 0 and n > cfg.n_min:
                    n_new = _reduction_count(n, s_before, s_hat, cfg.reduction_mu, cfg.n_min)
                    if n_new < n:
                        keep = rng.permutation(n)[:n_new]
                        u = u[keep]
                        energies = energies[keep]
                        consensus.rebuild(u, energies)
                        valpha = consensus.point()
                if reduction_cadence == half0:
                    s_before = spread(u)
            elif (s + half0) % reduction_cadence == 0:
                s_before = spread(u)
        if stalled:
            termination = "stalled"
            break

    trace = rec.build()
    final = None
    if keep_ensemble:
        final = ParticleEnsemble(frame.to_native(u), energies)
    return RunResult(
        trace=trace,
        final_estimate=trace.v_alpha[-1],
        termination=termination,
        wall_steps=wall,
        final_ensemble=final,
    )


DRIVERS = {"nanbu": run_nanbu, "bird": run_bird}


# ---------------------------------------------------------------------------
# Trace CSV round trip
# ---------------------------------------------------------------------------


def write_trace_csv(trace: Trace, path, include_valpha: bool = True) -> None:
    """Write a trace as CSV with columns step, n_particles, optionally the
    consensus-point coordinates, then mean_norm, variance, best_energy. Floats
    are written with round-trip precision."""
    d = trace.v_alpha.shape[1]
    header = ["step", "n_particles"]
    if include_valpha:
        header += [f"valpha_{k}" for k in range(d)]
    header += ["mean_norm", "variance", "best_energy"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in range(len(trace)):
            row = [int(trace.steps[r]), int(trace.n_particles[r])]
            if include_valpha:
                row += [repr(float(x)) for x in trace.v_alpha[r]]
            row += [
                repr(float(np.linalg.norm(trace.mean[r]))),
                repr(float(trace.variance[r])),
                repr(float(trace.best_energy[r])),
            ]
            writer.writerow(row)


def read_trace_csv(path) -> dict:
    """Read a trace CSV back into arrays; the consensus-point block is present
    only if the file was written with it."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    cols = {name: idx for idx, name in enumerate(header)}
    valpha_cols = [c for c in header if c.startswith("valpha_")]
    out = {
        "step": np.array([int(r[cols["step"]]) for r in rows]),
        "n_particles": np.array([int(r[cols["n_particles"]]) for r in rows]),
        "mean_norm": np.array([float(r[cols["mean_norm"]]) for r in rows]),
        "variance": np.array([float(r[cols["variance"]]) for r in rows]),
        "best_energy": np.array([float(r[cols["best_energy"]]) for r in rows]),
    }
    if valpha_cols:
        out["v_alpha"] = np.array(
            [[float(r[cols[c]]) for c in valpha_cols] for r in rows]
        )
    return out


# ---------------------------------------------------------------------------
# Estimator-style front end
# ---------------------------------------------------------------------------


class KboOptimizer(BaseEstimator):
    """Scikit-learn-style front end for the collision drivers.

    Parameters mirror the driver configuration, so instances compose with
    estimator tooling (``get_params``/``set_params``/``clone``). ``fit`` runs
    the chosen driver on an :class:`~kbo.objectives.Objective` and stores the
    outcome in ``minimizer_``, ``fun_``, ``n_iter_``, ``termination_``, and
    ``result_``.
    """

    def __init__(
        self,
        method: str = "nanbu",
        n_particles: int = 2000,
        lambda1: float = 1.0,
        lambda2: float = 1.0,
        sigma1: float = 0.1,
        sigma2: float = 6.0,
        alpha: float = 5e6,
        beta: float = 5e6,
        epsilon: float = 0.01,
        diffusion_mode: str = "anisotropic",
        n_stall: int = 500,
        delta_stall: float = 1e-4,
        max_iters: int = 10000,
        reduction_mu: float = 0.0,
        reduction_every: int = 10,
        n_min: int = 10,
        init: str = "uniform",
        init_low=None,
        init_high=None,
        init_mean: float = 0.0,
        init_std: float = 1.0,
        rescale: bool = True,
        pairing: str = "independent",
        record_every: int = 1,
        seed: int = 0,
    ):
        self.method = method
        self.n_particles = n_particles
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.sigma1 = sigma1
        self.sigma2 = sigma2
        self.alpha = alpha
        self.beta = beta
        self.epsilon = epsilon
        self.diffusion_mode = diffusion_mode
        self.n_stall = n_stall
        self.delta_stall = delta_stall
        self.max_iters = max_iters
        self.reduction_mu = reduction_mu
        self.reduction_every = reduction_every
        self.n_min = n_min
        self.init = init
        self.init_low = init_low
        self.init_high = init_high
        self.init_mean = init_mean
        self.init_std = init_std
        self.rescale = rescale
        self.pairing = pairing
        self.record_every = record_every
        self.seed = seed

    def build_config(self) -> KboConfig:
        return KboConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            sigma1=self.sigma1,
            sigma2=self.sigma2,
            alpha=self.alpha,
            beta=self.beta,
            epsilon=self.epsilon,
            diffusion_mode=self.diffusion_mode,
            n_stall=self.n_stall,
            delta_stall=self.delta_stall,
            max_iters=self.max_iters,
            reduction_mu=self.reduction_mu,
            reduction_every=self.reduction_every,
            n_min=self.n_min,
            seed=self.seed,
        )

    def build_init(self, objective: Objective) -> ParticleEnsemble:
        if self.init == "uniform":
            if self.init_low is not None and self.init_high is not None:
                lo, hi = self.init_low, self.init_high
            elif self.rescale:
                lo, hi = -1.0, 1.0
            else:
                lo, hi = objective.lower, objective.upper
            return ensemble_init(
                self.n_particles, objective.dim, "uniform", lo=lo, hi=hi,
                rng=RngStream(self.seed, INIT_STREAM),
            )
        return ensemble_init(
            self.n_particles, objective.dim, self.init, mean=self.init_mean,
            std=self.init_std, rng=RngStream(self.seed, INIT_STREAM),
        )

    def fit(self, objective: Objective, init: ParticleEnsemble | None = None):
        if self.method not in DRIVERS:
            raise ConfigurationError(f"method must be one of {sorted(DRIVERS)}")
        cfg = self.build_config()
        ens = init if init is not None else self.build_init(objective)
        kwargs = {"rescale": self.rescale, "record_every": self.record_every}
        if self.method == "nanbu":
            kwargs["pairing"] = self.pairing
        result = DRIVERS[self.method](cfg, objective, ens, **kwargs)
        self.result_ = result
        self.minimizer_ = result.final_estimate
        self.fun_ = float(objective(result.final_estimate))
        self.n_iter_ = result.wall_steps
        self.termination_ = result.termination
        return self

    def optimize(self, objective: Objective, init: ParticleEnsemble | None = None) -> RunResult:
        return self.fit(objective, init=init).result_
