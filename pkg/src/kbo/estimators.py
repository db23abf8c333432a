"""Best-position estimators: the weighted consensus point, the two-particle
pair best, and the normalized interaction weight.

All three subtract the minimum energy inside the exponents before
exponentiation, so arbitrarily large weight exponents are safe: after the
shift at least one weight equals one and the denominators stay in a sane
range. The shift cancels exactly in every ratio, so the results are
shift-invariant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParticleEnsemble


@dataclass(frozen=True)
class WeightedEstimate:
    """A weighted-average position plus the log of the total (unshifted)
    weight mass, which stays finite even when the raw weights underflow."""

    point: np.ndarray
    total_weight_log: float


def consensus_from_energies(positions: np.ndarray, energies: np.ndarray, alpha: float) -> WeightedEstimate:
    """Weighted average of positions with weights exp(-alpha * energy)."""
    positions = np.asarray(positions, dtype=float)
    energies = np.asarray(energies, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != energies.shape[0] or positions.shape[0] < 1:
        raise ValueError("need an (N,d) position matrix with N matching energies")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    shift = float(energies.min())
    w = np.exp(-alpha * (energies - shift))
    sw = float(w.sum())
    point = (w[:, None] * positions).sum(axis=0) / sw
    return WeightedEstimate(point=point, total_weight_log=float(np.log(sw) - alpha * shift))


def consensus_point(ensemble: ParticleEnsemble, alpha: float) -> WeightedEstimate:
    """Consensus point of an ensemble with a fresh energy cache."""
    if not ensemble.fresh:
        raise ValueError("ensemble energy cache is stale; refresh it first")
    return consensus_from_energies(ensemble.positions, ensemble.energies, alpha)


def gamma_weight(ev, ev_star, beta: float):
    """Normalized weight of the partner in a two-particle interaction:
    exp(-beta*Ev*) / (exp(-beta*Ev) + exp(-beta*Ev*)). Broadcasts over arrays;
    complementary in its arguments (gamma(a,b) + gamma(b,a) = 1)."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    ev = np.asarray(ev, dtype=float)
    ev_star = np.asarray(ev_star, dtype=float)
    shift = np.minimum(ev, ev_star)
    w = np.exp(-beta * (ev - shift))
    w_star = np.exp(-beta * (ev_star - shift))
    out = w_star / (w + w_star)
    if out.ndim == 0:
        return float(out)
    return out


def pair_best(v, v_star, ev, ev_star, beta: float) -> np.ndarray:
    """Two-particle best-position estimate: the exp(-beta*E)-weighted average
    of v and v_star. Symmetric in its (point, energy) argument pairs."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    g = np.asarray(gamma_weight(ev, ev_star, beta), dtype=float)
    return v + g[..., None] * (v_star - v)
