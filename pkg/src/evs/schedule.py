"""Noise schedules and the closed-form forward (noising) process.

A schedule holds the cumulative signal-retention coefficients ``alpha_bar``
indexed ``0..T``, with ``alpha_bar[0] == 1`` exactly so that timestep 0 is the
identity noising level.  Two denoisers never share a schedule in this lab: the
frame-wise (spatial) model runs a long, gentle schedule and the sequence-wise
(temporal) model a short, aggressive one, which keeps their intermediate noisy
latents mutually incompatible by construction.

Video latents throughout the package are plain float64 arrays of shape
``(frames, dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

# Lab defaults: long gentle schedule for the spatial model, short aggressive
# one for the temporal model.
SPATIAL_STEPS = 50
SPATIAL_BETA = (1e-4, 0.02)
TEMPORAL_STEPS = 8
TEMPORAL_BETA = (1e-4, 0.1)


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative alpha-bar coefficients for one diffusion model.

    ``alpha_bar`` has length ``total_steps + 1``; entry ``t`` scales the clean
    signal at noising level ``t``.
    """

    total_steps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.flags.writeable = False
        object.__setattr__(self, "alpha_bar", ab)
        if self.total_steps < 1:
            raise ParameterError(f"total_steps must be >= 1, got {self.total_steps}")
        if ab.shape != (self.total_steps + 1,):
            raise ShapeError(
                f"alpha_bar must have length {self.total_steps + 1}, got {ab.shape}"
            )
        if ab[0] != 1.0:
            raise ParameterError("alpha_bar[0] must be exactly 1")
        if np.any(np.diff(ab) >= 0):
            raise ParameterError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0.0 or np.any(ab > 1.0):
            raise ParameterError("alpha_bar must lie in (0, 1]")

    def check_timestep(self, t: int, minimum: int = 0) -> int:
        t = int(t)
        if not minimum <= t <= self.total_steps:
            raise ParameterError(
                f"timestep {t} outside [{minimum}, {self.total_steps}]"
            )
        return t


def build_linear_beta(total_steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Schedule with per-step noise rates linearly spaced in [beta_start, beta_end]."""
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(total_steps=total_steps, alpha_bar=alpha_bar)


def spatial_schedule() -> NoiseSchedule:
    return build_linear_beta(SPATIAL_STEPS, *SPATIAL_BETA)


def temporal_schedule() -> NoiseSchedule:
    return build_linear_beta(TEMPORAL_STEPS, *TEMPORAL_BETA)


def forward_noise(
    z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Noise a clean latent to level ``t``: sqrt(ab)*z0 + sqrt(1-ab)*eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeError(f"latent shape {z0.shape} != noise shape {eps.shape}")
    t = sched.check_timestep(t)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def strength_to_timestep(s: float, sched: NoiseSchedule) -> int:
    """Map a relative strength in [0, 1] to a timestep, rounding half up."""
    if not 0.0 <= s <= 1.0:
        raise ParameterError(f"strength must be in [0, 1], got {s}")
    return int(np.floor(s * sched.total_steps + 0.5))
