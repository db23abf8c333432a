"""The binary collision kernel with isotropic or anisotropic diffusion.

A collision moves each member of a pair toward the pair best and toward the
frozen consensus point, then adds noise whose amplitude is built from those
same displacement vectors. Drifts are scaled by epsilon and noises by
sqrt(epsilon); epsilon = 1 recovers the unscaled interaction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DIFFUSION_MODES, ConfigurationError, KboConfig
from .estimators import pair_best


@dataclass(frozen=True)
class CollisionParams:
    lambda1: float
    lambda2: float
    sigma1: float
    sigma2: float
    epsilon: float
    diffusion_mode: str = "anisotropic"

    def __post_init__(self):
        if self.diffusion_mode not in DIFFUSION_MODES:
            raise ConfigurationError(f"diffusion_mode must be one of {DIFFUSION_MODES}")

    @classmethod
    def from_config(cls, cfg: KboConfig) -> "CollisionParams":
        return cls(cfg.lambda1, cfg.lambda2, cfg.sigma1, cfg.sigma2, cfg.epsilon,
                   cfg.diffusion_mode)


def diffusion_scale(diff, mode: str):
    """Noise amplitude built from a displacement vector: its Euclidean norm on
    every coordinate in isotropic mode, the per-coordinate displacement itself
    in anisotropic mode. Accepts (d,) vectors or (..., d) batches."""
    diff = np.asarray(diff, dtype=float)
    if mode == "anisotropic":
        return diff
    if mode == "isotropic":
        return np.linalg.norm(diff, axis=-1, keepdims=diff.ndim > 0)
    raise ConfigurationError(f"diffusion_mode must be one of {DIFFUSION_MODES}")


def _one_side(v, d_beta, d_alpha, p: CollisionParams, xi1, xi2):
    eps = p.epsilon
    root = np.sqrt(eps)
    out = v + eps * p.lambda1 * d_beta + eps * p.lambda2 * d_alpha
    if p.sigma1:
        out = out + root * p.sigma1 * diffusion_scale(d_beta, p.diffusion_mode) * xi1
    if p.sigma2:
        out = out + root * p.sigma2 * diffusion_scale(d_alpha, p.diffusion_mode) * xi2
    return out


def collide(v, v_star, ev, ev_star, v_alpha, p: CollisionParams, beta: float, rng):
    """One binary interaction: returns the post-collision pair (v', v*').

    Four independent standard-normal d-vectors are drawn per call in the fixed
    order (xi1, xi2, xi1*, xi2*). Inputs may be single points (d,) or batches
    (..., d); batched calls draw one noise vector per row.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    v_alpha = np.asarray(v_alpha, dtype=float)
    vb = pair_best(v, v_star, ev, ev_star, beta)
    draws = rng.standard_normal((4,) + v.shape)
    out_v = _one_side(v, vb - v, v_alpha - v, p, draws[0], draws[1])
    out_star = _one_side(v_star, vb - v_star, v_alpha - v_star, p, draws[2], draws[3])
    return out_v, out_star


def collide_micro(v, v_star, ev, ev_star, p: CollisionParams, beta: float, rng):
    """Pair-best-only interaction (no consensus drift or noise); algebraically
    the general collision with lambda2 = sigma2 = 0 and it consumes the random
    stream identically."""
    p0 = replace(p, lambda2=0.0, sigma2=0.0)
    anchor = np.zeros_like(np.asarray(v, dtype=float))
    return collide(v, v_star, ev, ev_star, anchor, p0, beta, rng)


def collide_macro(v, v_star, v_alpha, p: CollisionParams, rng):
    """Consensus-only interaction: the general collision with
    lambda1 = sigma1 = 0; the pair energies are irrelevant."""
    p0 = replace(p, lambda1=0.0, sigma1=0.0)
    return collide(v, v_star, 0.0, 0.0, v_alpha, p0, beta=1.0, rng=rng)
